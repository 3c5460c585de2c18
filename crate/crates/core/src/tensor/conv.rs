//! 2-D cross-correlation lowered to matrix products (im2col).
//!
//! The kernel `[c_out, c_in, kh, kw]` is read as a `[c_out, c_in·kh·kw]`
//! matrix, the same layout a dense layer uses, so masking treats both alike.

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use super::Tensor;
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Conv2dGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_channels: usize,
        in_h: usize,
        in_w: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 || kernel_h == 0 || kernel_w == 0 {
            return Err(Error::Config("stride and kernel extents must be positive".into()));
        }
        let extent = |len: usize, k: usize, axis: &str| -> Result<usize> {
            let padded = len + 2 * padding;
            if padded < k || (padded - k) % stride != 0 {
                return Err(Error::Config(format!(
                    "convolution {axis}: ({len} + 2*{padding} - {k}) / {stride} + 1 is not a positive integer"
                )));
            }
            Ok((padded - k) / stride + 1)
        };
        Ok(Self {
            in_channels,
            in_h,
            in_w,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
            padding,
            out_h: extent(in_h, kernel_h, "height")?,
            out_w: extent(in_w, kernel_w, "width")?,
        })
    }

    /// Columns of the flattened kernel matrix.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_channels * self.out_positions()
    }

    fn source(&self, o: usize, k: usize, len: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }
}

/// Unfolds one `[c_in, H, W]` sample into a `[c_in·kh·kw, H'·W']` matrix.
pub fn im2col(input: &[f32], g: &Conv2dGeometry) -> Vec<f32> {
    let positions = g.out_positions();
    let mut cols = vec![0.0f32; g.patch_len() * positions];
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.source(ox, kx, g.in_w) {
                            dst[oy * g.out_w + ox] = plane[iy * g.in_w + ix];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
pub fn col2im(cols: &[f32], g: &Conv2dGeometry) -> Vec<f32> {
    let positions = g.out_positions();
    let mut out = vec![0.0f32; g.in_len()];
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &mut out[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                    for ox in 0..g.out_w {
                        if let Some(ix) = g.source(ox, kx, g.in_w) {
                            plane[iy * g.in_w + ix] += src[oy * g.out_w + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}

fn geometry_for(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Conv2dGeometry> {
    let (&[c_in, h, w], &[c_out, k_in, kh, kw]) = (input.shape(), kernel.shape()) else {
        return Err(Error::Dimension(format!(
            "conv2d expects input [c,h,w] and kernel [o,c,kh,kw], got {:?} and {:?}",
            input.shape(),
            kernel.shape()
        )));
    };
    if c_in != k_in {
        return Err(Error::Dimension(format!(
            "conv2d input has {c_in} channels but kernel expects {k_in}"
        )));
    }
    Conv2dGeometry::new(c_in, h, w, c_out, kh, kw, stride, padding)
}

/// Single-sample cross-correlation: `[c_in,H,W] ⋆ [c_out,c_in,kh,kw] → [c_out,H',W']`.
pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = geometry_for(input, kernel, stride, padding)?;
    let cols = im2col(input.data(), &g);
    let out = gemm_nn(
        Exec::default(),
        kernel.data(),
        &cols,
        g.out_channels,
        g.patch_len(),
        g.out_positions(),
    );
    Tensor::new(vec![g.out_channels, g.out_h, g.out_w], out)
}

/// Gradients of [`conv2d_forward`] with respect to its input and kernel.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor)> {
    let g = geometry_for(input, kernel, stride, padding)?;
    if grad_out.shape() != [g.out_channels, g.out_h, g.out_w] {
        return Err(Error::Dimension(format!(
            "conv2d grad_out has shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.out_channels, g.out_h, g.out_w]
        )));
    }
    let exec = Exec::default();
    let cols = im2col(input.data(), &g);
    let (o, k, p) = (g.out_channels, g.patch_len(), g.out_positions());
    let grad_kernel = gemm_nt(exec, grad_out.data(), &cols, o, p, k);
    let grad_cols = gemm_tn(exec, kernel.data(), grad_out.data(), o, k, p);
    let grad_input = col2im(&grad_cols, &g);
    Ok((
        Tensor::new(input.shape().to_vec(), grad_input)?,
        Tensor::new(kernel.shape().to_vec(), grad_kernel)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn ones_kernel_sums_the_window() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let x = Tensor::new(vec![2, 5, 5], (0..50).map(|v| v as f32 - 20.0).collect()).unwrap();
        let k = Tensor::zeros(&[3, 2, 3, 3]);
        let y = conv2d_forward(&x, &k, 1, 1).unwrap();
        assert_eq!(y.shape(), &[3, 5, 5]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_kernel_scales() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let y = conv2d_forward(&x, &k, 1, 0).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);

        let (gx, gk) = conv2d_backward(&Tensor::full(&[1, 2, 2], 1.0), &x, &k, 1, 0).unwrap();
        assert_eq!(gx.data(), &[2.0; 4]);
        assert_eq!(gk.data(), &[10.0]);
    }

    #[test]
    fn no_kernel_flip() {
        // Cross-correlation: top-left kernel tap reads the top-left pixel.
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(conv2d_forward(&x, &k, 1, 0).unwrap().data(), &[1.0]);
    }

    #[test]
    fn zero_grad_out_gives_zero_gradients() {
        let x = Tensor::full(&[2, 4, 4], 0.5);
        let k = Tensor::full(&[3, 2, 3, 3], -0.25);
        let (gx, gk) = conv2d_backward(&Tensor::zeros(&[3, 2, 2]), &x, &k, 1, 0).unwrap();
        assert!(gx.data().iter().chain(gk.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn non_integer_extent_is_config_error() {
        let x = Tensor::zeros(&[1, 6, 6]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(matches!(conv2d_forward(&x, &k, 2, 0), Err(Error::Config(_))));
        let k = Tensor::zeros(&[1, 1, 7, 7]);
        assert!(matches!(conv2d_forward(&x, &k, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(conv2d_forward(&x, &k, 1, 0), Err(Error::Dimension(_))));
    }

    /// Direct-loop cross-correlation in f64, independent of im2col.
    fn direct_conv_f64(x: &[f64], k: &[f64], g: &Conv2dGeometry) -> Vec<f64> {
        let mut out = vec![0.0; g.out_len()];
        for o in 0..g.out_channels {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let mut acc = 0.0;
                    for c in 0..g.in_channels {
                        for ky in 0..g.kernel_h {
                            for kx in 0..g.kernel_w {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= g.in_h as isize || ix >= g.in_w as isize {
                                    continue;
                                }
                                let xi = (c * g.in_h + iy as usize) * g.in_w + ix as usize;
                                let ki = ((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx;
                                acc += x[xi] * k[ki];
                            }
                        }
                    }
                    out[(o * g.out_h + oy) * g.out_w + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for &(c_in, c_out, stride, padding) in &[(1, 1, 1, 0), (1, 2, 1, 1), (2, 3, 1, 0), (2, 2, 2, 1)] {
            let x = Tensor::new(vec![c_in, 4, 4], (0..c_in * 16).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let k = Tensor::new(vec![c_out, c_in, 2, 2], (0..c_out * c_in * 4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let g = Conv2dGeometry::new(c_in, 4, 4, c_out, 2, 2, stride, padding).unwrap();
            // Objective: sum(r ∘ conv(x, k)) for a fixed random r.
            let r: Vec<f64> = (0..g.out_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let gy = Tensor::new(vec![c_out, g.out_h, g.out_w], r.iter().map(|&v| v as f32).collect()).unwrap();
            let (gx, gk) = conv2d_backward(&gy, &x, &k, stride, padding).unwrap();

            let xs: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
            let ks: Vec<f64> = k.data().iter().map(|&v| v as f64).collect();
            let objective = |xs: &[f64], ks: &[f64]| -> f64 {
                direct_conv_f64(xs, ks, &g).iter().zip(&r).map(|(a, b)| a * b).sum()
            };
            let eps = 1e-3;
            let check = |analytic: f32, numeric: f64| {
                let rel = (analytic as f64 - numeric).abs() / numeric.abs().max(1e-2);
                assert!(rel <= 1e-4, "analytic {analytic} vs numeric {numeric}");
            };
            for i in 0..xs.len() {
                let (mut up, mut down) = (xs.clone(), xs.clone());
                up[i] += eps;
                down[i] -= eps;
                check(gx.data()[i], (objective(&up, &ks) - objective(&down, &ks)) / (2.0 * eps));
            }
            for i in 0..ks.len() {
                let (mut up, mut down) = (ks.clone(), ks.clone());
                up[i] += eps;
                down[i] -= eps;
                check(gk.data()[i], (objective(&xs, &up) - objective(&xs, &down)) / (2.0 * eps));
            }
        }
    }
}
