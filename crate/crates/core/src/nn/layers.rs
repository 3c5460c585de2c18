use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::pruning::{self, Mask};
use crate::tensor::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, Conv2dGeometry, Tensor};

/// Architecture description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Conv { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    MaxPool { size: usize },
    Relu,
    Tanh,
    BatchNorm { channels: usize },
    Flatten,
}

impl LayerSpec {
    pub fn maskable(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv { .. })
    }
}

/// Whether masks are applied when evaluating a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskUse {
    Masked,
    /// Raw weights, as a deployed model without stored masks would see them.
    Dense,
}

/// Weights, bias, thresholds and masks of one dense or convolutional layer.
///
/// Convolution kernels are stored flattened as `[c_out, c_in·kh·kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedWeights {
    pub weight: Tensor,
    pub bias: Tensor,
    pub threshold: Tensor,
    pub prune_mask: Mask,
    pub freeze_mask: Mask,
}

impl MaskedWeights {
    /// Kaiming-uniform (fan-in) weights, zero bias, zero thresholds.
    pub fn init(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / cols as f64).sqrt() as f32;
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            weight: Tensor::new(vec![rows, cols], data).expect("shape"),
            bias: Tensor::zeros(&[rows]),
            threshold: Tensor::zeros(&[rows]),
            prune_mask: Mask::ones(rows, cols),
            freeze_mask: Mask::zeros(rows, cols),
        }
    }

    pub fn rows(&self) -> usize {
        self.prune_mask.rows()
    }

    pub fn cols(&self) -> usize {
        self.prune_mask.cols()
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.prune_mask.bits()[k] || self.freeze_mask.bits()[k]
    }

    pub fn used_weights(&self) -> usize {
        (0..self.weight.len()).filter(|&k| self.is_active(k)).count()
    }

    pub fn remaining_ratio(&self) -> f64 {
        pruning::remaining_ratio(&self.prune_mask, &self.freeze_mask).expect("own masks agree")
    }

    /// Recomputes the prune mask from the current weights and thresholds.
    pub fn refresh_prune_mask(&mut self) {
        self.prune_mask = pruning::compute_prune_mask(&self.weight, &self.threshold, &self.freeze_mask)
            .expect("own shapes agree");
    }

    pub fn effective(&self, use_mask: MaskUse) -> Vec<f32> {
        match use_mask {
            MaskUse::Dense => self.weight.data().to_vec(),
            MaskUse::Masked => self
                .weight
                .data()
                .iter()
                .enumerate()
                .map(|(k, &v)| if self.is_active(k) { v } else { 0.0 })
                .collect(),
        }
    }
}

/// Per-layer gradients. Maskable layers report `∂L/∂W_eff`; routing to the
/// raw weights and thresholds happens at network level.
#[derive(Debug, Clone)]
pub(crate) enum LayerGrads {
    None,
    Masked { grad_eff: Tensor, bias: Tensor },
    Norm { gain: Tensor, shift: Tensor },
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub params: MaskedWeights,
    cache: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub params: MaskedWeights,
    pub geometry: Conv2dGeometry,
    cache: Option<Vec<Vec<f32>>>,
}

#[derive(Debug, Clone)]
pub struct MaxPool {
    pub size: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gain: Tensor,
    pub shift: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub frozen: bool,
    cache: Option<NormCache>,
}

#[derive(Debug, Clone)]
struct NormCache {
    normalized: Vec<f32>,
    inv_std: Vec<f32>,
    batch_stats: bool,
}

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv(Conv),
    MaxPool(MaxPool),
    Relu(Option<Tensor>),
    Tanh(Option<Tensor>),
    BatchNorm(BatchNorm),
    Flatten(Option<Vec<usize>>),
}

impl Layer {
    /// Instantiates `spec` for per-sample input shape `input`, returning the
    /// layer and its per-sample output shape.
    pub fn build(spec: &LayerSpec, input: &[usize], rng: &mut impl Rng) -> Result<(Layer, Vec<usize>)> {
        let mismatch = |what: &str| {
            Error::Config(format!("{spec:?} cannot follow a layer producing {input:?} ({what})"))
        };
        match *spec {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(mismatch("dense expects a flat vector"));
                }
                let params = MaskedWeights::init(outputs, inputs, rng);
                Ok((Layer::Dense(Dense { params, cache: None }), vec![outputs]))
            }
            LayerSpec::Conv { in_channels, out_channels, kernel, stride, padding } => {
                let &[c, h, w] = input else {
                    return Err(mismatch("conv expects [c, h, w]"));
                };
                if c != in_channels {
                    return Err(mismatch("channel count"));
                }
                let geometry = Conv2dGeometry::new(c, h, w, out_channels, kernel, kernel, stride, padding)?;
                let params = MaskedWeights::init(out_channels, geometry.patch_len(), rng);
                let out = vec![out_channels, geometry.out_h, geometry.out_w];
                Ok((Layer::Conv(Conv { params, geometry, cache: None }), out))
            }
            LayerSpec::MaxPool { size } => {
                let &[c, h, w] = input else {
                    return Err(mismatch("pooling expects [c, h, w]"));
                };
                if size == 0 || h < size || w < size {
                    return Err(mismatch("pool window larger than input"));
                }
                Ok((Layer::MaxPool(MaxPool { size, cache: None }), vec![c, h / size, w / size]))
            }
            LayerSpec::Relu => Ok((Layer::Relu(None), input.to_vec())),
            LayerSpec::Tanh => Ok((Layer::Tanh(None), input.to_vec())),
            LayerSpec::Flatten => Ok((Layer::Flatten(None), vec![input.iter().product()])),
            LayerSpec::BatchNorm { channels } => {
                if input.first() != Some(&channels) {
                    return Err(mismatch("channel count"));
                }
                Ok((
                    Layer::BatchNorm(BatchNorm {
                        gain: Tensor::full(&[channels], 1.0),
                        shift: Tensor::zeros(&[channels]),
                        running_mean: Tensor::zeros(&[channels]),
                        running_var: Tensor::full(&[channels], 1.0),
                        frozen: false,
                        cache: None,
                    }),
                    input.to_vec(),
                ))
            }
        }
    }

    pub fn masked(&self) -> Option<&MaskedWeights> {
        match self {
            Layer::Dense(d) => Some(&d.params),
            Layer::Conv(c) => Some(&c.params),
            _ => None,
        }
    }

    pub fn masked_mut(&mut self) -> Option<&mut MaskedWeights> {
        match self {
            Layer::Dense(d) => Some(&mut d.params),
            Layer::Conv(c) => Some(&mut c.params),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv(_) => "conv",
            Layer::MaxPool(_) => "maxpool",
            Layer::Relu(_) => "relu",
            Layer::Tanh(_) => "tanh",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Flatten(_) => "flatten",
        }
    }

    pub(crate) fn clear_cache(&mut self) {
        match self {
            Layer::Dense(d) => d.cache = None,
            Layer::Conv(c) => c.cache = None,
            Layer::MaxPool(p) => p.cache = None,
            Layer::Relu(c) | Layer::Tanh(c) => *c = None,
            Layer::BatchNorm(b) => b.cache = None,
            Layer::Flatten(c) => *c = None,
        }
    }

    /// Forward pass over a batch `[B, ...]`. With `train` set, inputs needed by
    /// [`Layer::backward`] are cached and batch norm uses batch statistics.
    pub(crate) fn forward(&mut self, x: Tensor, train: bool, use_mask: MaskUse, exec: Exec) -> Result<Tensor> {
        if !train {
            return self.infer(x, use_mask, exec);
        }
        match self {
            Layer::Dense(d) => {
                let y = dense_forward(&d.params, &x, use_mask, exec)?;
                d.cache = Some(x);
                Ok(y)
            }
            Layer::Conv(c) => {
                let (y, cols) = conv_forward(&c.params, &c.geometry, &x, use_mask, exec)?;
                c.cache = Some(cols);
                Ok(y)
            }
            Layer::MaxPool(p) => {
                let (y, argmax) = maxpool_forward(p.size, &x)?;
                p.cache = Some((x.shape().to_vec(), argmax));
                Ok(y)
            }
            Layer::Relu(cache) => {
                let y = map(&x, |v| v.max(0.0));
                *cache = Some(x);
                Ok(y)
            }
            Layer::Tanh(cache) => {
                let y = map(&x, f32::tanh);
                *cache = Some(y.clone());
                Ok(y)
            }
            Layer::Flatten(cache) => {
                let shape = x.shape().to_vec();
                let batch = shape[0];
                let y = x.reshape(&[batch, shape[1..].iter().product()])?;
                *cache = Some(shape);
                Ok(y)
            }
            Layer::BatchNorm(b) => b.forward_train(&x),
        }
    }

    /// Evaluation-mode forward; never touches caches or running statistics.
    pub(crate) fn infer(&self, x: Tensor, use_mask: MaskUse, exec: Exec) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => dense_forward(&d.params, &x, use_mask, exec),
            Layer::Conv(c) => Ok(conv_forward(&c.params, &c.geometry, &x, use_mask, exec)?.0),
            Layer::MaxPool(p) => Ok(maxpool_forward(p.size, &x)?.0),
            Layer::Relu(_) => Ok(map(&x, |v| v.max(0.0))),
            Layer::Tanh(_) => Ok(map(&x, f32::tanh)),
            Layer::Flatten(_) => {
                let batch = x.shape()[0];
                let features = x.shape()[1..].iter().product::<usize>();
                x.reshape(&[batch, features])
            }
            Layer::BatchNorm(b) => {
                b.layout(&x)?;
                let (y, _, _) = b.normalize(&x, b.running_mean.data(), b.running_var.data());
                Ok(y)
            }
        }
    }

    pub(crate) fn backward(&mut self, grad: Tensor, exec: Exec) -> Result<(Tensor, LayerGrads)> {
        let missing = || Error::State("backward called without a cached train-mode forward".into());
        match self {
            Layer::Dense(d) => {
                let x = d.cache.take().ok_or_else(missing)?;
                dense_backward(&d.params, &x, &grad, exec)
            }
            Layer::Conv(c) => {
                let cols = c.cache.take().ok_or_else(missing)?;
                conv_backward(&c.params, &c.geometry, &cols, &grad, exec)
            }
            Layer::MaxPool(p) => {
                let (shape, argmax) = p.cache.take().ok_or_else(missing)?;
                let mut dx = vec![0.0f32; shape.iter().product()];
                for (&src, &g) in argmax.iter().zip(grad.data()) {
                    dx[src] += g;
                }
                Ok((Tensor::new(shape, dx)?, LayerGrads::None))
            }
            Layer::Relu(cache) => {
                let x = cache.take().ok_or_else(missing)?;
                let dx = grad.data().iter().zip(x.data()).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect();
                Ok((Tensor::new(grad.shape().to_vec(), dx)?, LayerGrads::None))
            }
            Layer::Tanh(cache) => {
                let y = cache.take().ok_or_else(missing)?;
                let dx = grad.data().iter().zip(y.data()).map(|(&g, &v)| g * (1.0 - v * v)).collect();
                Ok((Tensor::new(grad.shape().to_vec(), dx)?, LayerGrads::None))
            }
            Layer::Flatten(cache) => {
                let shape = cache.take().ok_or_else(missing)?;
                Ok((grad.reshape(&shape)?, LayerGrads::None))
            }
            Layer::BatchNorm(b) => {
                let cache = b.cache.take().ok_or_else(missing)?;
                b.backward(&grad, &cache)
            }
        }
    }
}

fn map(x: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn dense_forward(p: &MaskedWeights, x: &Tensor, use_mask: MaskUse, exec: Exec) -> Result<Tensor> {
    let (batch, features) = x.dims2()?;
    let (rows, cols) = (p.rows(), p.cols());
    if features != cols {
        return Err(Error::Dimension(format!("dense layer expects {cols} features, got {features}")));
    }
    let w = p.effective(use_mask);
    let mut y = gemm_nt(exec, x.data(), &w, batch, cols, rows);
    for row in y.chunks_mut(rows) {
        for (v, &b) in row.iter_mut().zip(p.bias.data()) {
            *v += b;
        }
    }
    Tensor::new(vec![batch, rows], y)
}

fn dense_backward(p: &MaskedWeights, x: &Tensor, grad: &Tensor, exec: Exec) -> Result<(Tensor, LayerGrads)> {
    let (batch, cols) = x.dims2()?;
    let rows = p.rows();
    if grad.shape() != [batch, rows] {
        return Err(Error::Dimension(format!("dense grad has shape {:?}", grad.shape())));
    }
    let grad_eff = gemm_tn(exec, grad.data(), x.data(), batch, rows, cols);
    let mut bias = vec![0.0f32; rows];
    for row in grad.data().chunks(rows) {
        for (b, &g) in bias.iter_mut().zip(row) {
            *b += g;
        }
    }
    let w = p.effective(MaskUse::Masked);
    let dx = gemm_nn(exec, grad.data(), &w, batch, rows, cols);
    Ok((
        Tensor::new(vec![batch, cols], dx)?,
        LayerGrads::Masked {
            grad_eff: Tensor::new(vec![rows, cols], grad_eff)?,
            bias: Tensor::new(vec![rows], bias)?,
        },
    ))
}

fn conv_forward(
    p: &MaskedWeights,
    g: &Conv2dGeometry,
    x: &Tensor,
    use_mask: MaskUse,
    exec: Exec,
) -> Result<(Tensor, Vec<Vec<f32>>)> {
    let batch = x.shape()[0];
    if x.shape()[1..] != [g.in_channels, g.in_h, g.in_w] {
        return Err(Error::Dimension(format!(
            "conv layer expects [B, {}, {}, {}], got {:?}",
            g.in_channels,
            g.in_h,
            g.in_w,
            x.shape()
        )));
    }
    let w = p.effective(use_mask);
    let (o, k, positions) = (g.out_channels, g.patch_len(), g.out_positions());
    let per_sample = exec.for_work(batch * o * k * positions).map(batch, |b| {
        let cols = im2col(&x.data()[b * g.in_len()..(b + 1) * g.in_len()], g);
        let mut y = gemm_nn(Exec::Sequential, &w, &cols, o, k, positions);
        for (plane, &bias) in y.chunks_mut(positions).zip(p.bias.data()) {
            plane.iter_mut().for_each(|v| *v += bias);
        }
        (y, cols)
    });
    let mut out = Vec::with_capacity(batch * g.out_len());
    let mut cache = Vec::with_capacity(batch);
    for (y, cols) in per_sample {
        out.extend_from_slice(&y);
        cache.push(cols);
    }
    Ok((Tensor::new(vec![batch, o, g.out_h, g.out_w], out)?, cache))
}

fn conv_backward(
    p: &MaskedWeights,
    g: &Conv2dGeometry,
    cols: &[Vec<f32>],
    grad: &Tensor,
    exec: Exec,
) -> Result<(Tensor, LayerGrads)> {
    let batch = cols.len();
    if grad.shape() != [batch, g.out_channels, g.out_h, g.out_w] {
        return Err(Error::Dimension(format!("conv grad has shape {:?}", grad.shape())));
    }
    let w = p.effective(MaskUse::Masked);
    let (o, k, positions) = (g.out_channels, g.patch_len(), g.out_positions());
    let per_sample = exec.for_work(batch * o * k * positions).map(batch, |b| {
        let dy = &grad.data()[b * g.out_len()..(b + 1) * g.out_len()];
        let dw = gemm_nt(Exec::Sequential, dy, &cols[b], o, positions, k);
        let dcols = gemm_tn(Exec::Sequential, &w, dy, o, k, positions);
        (dw, col2im(&dcols, g))
    });
    // Reduce in sample order so the result does not depend on scheduling.
    let mut grad_eff = vec![0.0f32; o * k];
    let mut dx = Vec::with_capacity(batch * g.in_len());
    for (dw, dxb) in per_sample {
        grad_eff.iter_mut().zip(&dw).for_each(|(a, &v)| *a += v);
        dx.extend_from_slice(&dxb);
    }
    let mut bias = vec![0.0f32; o];
    for sample in grad.data().chunks(g.out_len()) {
        for (b, plane) in bias.iter_mut().zip(sample.chunks(positions)) {
            *b += plane.iter().sum::<f32>();
        }
    }
    Ok((
        Tensor::new(vec![batch, g.in_channels, g.in_h, g.in_w], dx)?,
        LayerGrads::Masked {
            grad_eff: Tensor::new(vec![o, k], grad_eff)?,
            bias: Tensor::new(vec![o], bias)?,
        },
    ))
}

fn maxpool_forward(size: usize, x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let &[batch, c, h, w] = x.shape() else {
        return Err(Error::Dimension(format!("maxpool expects [B,c,h,w], got {:?}", x.shape())));
    };
    let (oh, ow) = (h / size, w / size);
    let mut out = Vec::with_capacity(batch * c * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    let data = x.data();
    for plane in 0..batch * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * size * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = base + (oy * size + dy) * w + ox * size + dx;
                        // First maximum wins.
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![batch, c, oh, ow], out)?, argmax))
}

impl BatchNorm {
    fn channels(&self) -> usize {
        self.gain.len()
    }

    /// `(batch, channels, spatial)` view of an input.
    fn layout(&self, x: &Tensor) -> Result<(usize, usize, usize)> {
        let s = x.shape();
        if s.len() < 2 || s[1] != self.channels() {
            return Err(Error::Dimension(format!(
                "batch norm over {} channels got shape {s:?}",
                self.channels()
            )));
        }
        Ok((s[0], s[1], s[2..].iter().product()))
    }

    /// Normalises with the given statistics; returns `(y, x̂, 1/σ)`.
    fn normalize(&self, x: &Tensor, mean: &[f32], var: &[f32]) -> (Tensor, Vec<f32>, Vec<f32>) {
        let channels = self.channels();
        let spatial = x.shape()[2..].iter().product::<usize>();
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut normalized = vec![0.0f32; x.len()];
        let mut y = vec![0.0f32; x.len()];
        for (i, (&v, (n, out))) in x.data().iter().zip(normalized.iter_mut().zip(y.iter_mut())).enumerate() {
            let c = (i / spatial) % channels;
            *n = (v - mean[c]) * inv_std[c];
            *out = self.gain.data()[c] * *n + self.shift.data()[c];
        }
        (Tensor::new(x.shape().to_vec(), y).expect("same shape"), normalized, inv_std)
    }

    fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let (batch, channels, spatial) = self.layout(x)?;
        let batch_stats = !self.frozen;
        let mut mean = self.running_mean.data().to_vec();
        let mut var = self.running_var.data().to_vec();
        if batch_stats {
            let count = (batch * spatial) as f64;
            for c in 0..channels {
                let values = (0..batch).flat_map(|b| {
                    let start = (b * channels + c) * spatial;
                    x.data()[start..start + spatial].iter().map(|&v| v as f64)
                });
                let (s, s2) = values.fold((0.0, 0.0), |(s, s2), v| (s + v, s2 + v * v));
                let m = s / count;
                let v = (s2 / count - m * m).max(0.0);
                mean[c] = m as f32;
                var[c] = v as f32;
                let unbiased = if count > 1.0 { v * count / (count - 1.0) } else { v };
                let rm = &mut self.running_mean.data_mut()[c];
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * m as f32;
                let rv = &mut self.running_var.data_mut()[c];
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased as f32;
            }
        }
        let (y, normalized, inv_std) = self.normalize(x, &mean, &var);
        self.cache = Some(NormCache { normalized, inv_std, batch_stats });
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor, cache: &NormCache) -> Result<(Tensor, LayerGrads)> {
        let (batch, channels, spatial) = self.layout(grad)?;
        let count = (batch * spatial) as f32;
        let mut dgain = vec![0.0f32; channels];
        let mut dshift = vec![0.0f32; channels];
        for (i, (&g, &n)) in grad.data().iter().zip(&cache.normalized).enumerate() {
            let c = (i / spatial) % channels;
            dgain[c] += g * n;
            dshift[c] += g;
        }
        let dx: Vec<f32> = grad
            .data()
            .iter()
            .zip(&cache.normalized)
            .enumerate()
            .map(|(i, (&g, &n))| {
                let c = (i / spatial) % channels;
                let scale = self.gain.data()[c] * cache.inv_std[c];
                if cache.batch_stats {
                    scale * (g - dshift[c] / count - n * dgain[c] / count)
                } else {
                    scale * g
                }
            })
            .collect();
        if self.frozen {
            dgain.fill(0.0);
            dshift.fill(0.0);
        }
        Ok((
            Tensor::new(grad.shape().to_vec(), dx)?,
            LayerGrads::Norm {
                gain: Tensor::new(vec![channels], dgain)?,
                shift: Tensor::new(vec![channels], dshift)?,
            },
        ))
    }
}
