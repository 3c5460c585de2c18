//! Trainable-threshold magnitude pruning.
//!
//! Every maskable layer owns a weight matrix `W[rows×cols]` (convolution
//! kernels are flattened per output channel) and a threshold vector
//! `t[rows]`. The prune mask keeps an entry when its magnitude clears the
//! row threshold:
//!
//! ```text
//! M[i][j] = S(|W[i][j]| - t[i])         S(x) = 1 if x >= 0 else 0
//! ```
//!
//! Frozen entries are never pruned. The step function has no useful
//! derivative, so backpropagation substitutes the long-tailed estimator
//! [`estimator_h`] for `S'` when differentiating `W_eff = W · S(|W| - t)`.
//! A sparsity regulariser `Σ exp(-t)` pushes thresholds upward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::tensor::{gemm_nt, Tensor};

/// Binary mask over a `rows × cols` weight matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn ones(rows: usize, cols: usize) -> Self {
        Self { rows, cols, bits: vec![true; rows * cols] }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, bits: vec![false; rows * cols] }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} mask bits for a {rows}x{cols} matrix",
                bits.len()
            )));
        }
        Ok(Self { rows, cols, bits })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fill(&mut self, value: bool) {
        self.bits.iter_mut().for_each(|b| *b = value);
    }

    pub fn matches(&self, w: &Tensor) -> Result<()> {
        if w.shape() != [self.rows, self.cols] {
            return Err(Error::Dimension(format!(
                "mask is {}x{} but tensor has shape {:?}",
                self.rows,
                self.cols,
                w.shape()
            )));
        }
        Ok(())
    }

    pub fn same_dims(&self, other: &Mask) -> Result<()> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Dimension(format!(
                "mask dims differ: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// Elementwise OR, in place.
    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        self.same_dims(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }
}

/// Unit step: 0 for negative input, 1 otherwise.
pub fn step(x: f32) -> f32 {
    if x < 0.0 {
        0.0
    } else {
        1.0
    }
}

/// Long-tailed surrogate for the derivative of [`step`].
pub fn estimator_h(x: f32) -> f32 {
    let a = x.abs();
    if a <= 0.4 {
        2.0 - 4.0 * a
    } else if a <= 1.0 {
        0.4
    } else {
        0.0
    }
}

fn check_layer(w: &Tensor, t: &Tensor, frozen: &Mask) -> Result<(usize, usize)> {
    let (rows, cols) = w.dims2()?;
    if t.shape() != [rows] {
        return Err(Error::Dimension(format!(
            "threshold vector has shape {:?}, expected [{rows}]",
            t.shape()
        )));
    }
    frozen.matches(w)?;
    Ok((rows, cols))
}

/// Prune mask for one layer; frozen entries are forced active.
pub fn compute_prune_mask(w: &Tensor, t: &Tensor, frozen: &Mask) -> Result<Mask> {
    let (rows, cols) = check_layer(w, t, frozen)?;
    let mut mask = Mask::zeros(rows, cols);
    for i in 0..rows {
        let ti = t.data()[i];
        for j in 0..cols {
            let k = i * cols + j;
            mask.bits[k] = frozen.bits[k] || step(w.data()[k].abs() - ti) == 1.0;
        }
    }
    Ok(mask)
}

/// `W ∘ M`. Inactive entries become exactly `+0.0`.
pub fn effective_weights(w: &Tensor, mask: &Mask) -> Result<Tensor> {
    mask.matches(w)?;
    let data = w
        .data()
        .iter()
        .zip(&mask.bits)
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    Tensor::new(w.shape().to_vec(), data)
}

/// Dense-layer product with masked weights: `input[B×cols] · (W∘M)ᵀ`.
pub fn masked_forward(w: &Tensor, mask: &Mask, input: &Tensor) -> Result<Tensor> {
    let (rows, cols) = w.dims2()?;
    let (batch, features) = input.dims2()?;
    if features != cols {
        return Err(Error::Dimension(format!(
            "input has {features} features, weights expect {cols}"
        )));
    }
    let eff = effective_weights(w, mask)?;
    Tensor::new(
        vec![batch, rows],
        gemm_nt(Exec::default(), input.data(), eff.data(), batch, cols, rows),
    )
}

/// Routes the gradient w.r.t. the effective weights back to `W` and `t`.
///
/// With `g = ∂L/∂W_eff` and `h = H(|W| - t)`:
///
/// ```text
/// ∂L/∂W[i][j] = g · (M[i][j] + W[i][j] · h · sign(W[i][j]))
/// ∂L/∂t[i]    = Σ_j g · W[i][j] · (−h)          (free entries only)
/// ```
///
/// Frozen entries keep the straight-through term only and contribute nothing
/// to the threshold gradient; their mask is pinned and independent of `t`.
pub fn masked_backward(
    grad_eff: &Tensor,
    w: &Tensor,
    t: &Tensor,
    mask: &Mask,
    frozen: &Mask,
) -> Result<(Tensor, Tensor)> {
    let (rows, cols) = check_layer(w, t, frozen)?;
    grad_eff.same_shape(w)?;
    mask.matches(w)?;
    let mut grad_w = vec![0.0f32; rows * cols];
    let mut grad_t = vec![0.0f32; rows];
    for i in 0..rows {
        let ti = t.data()[i];
        let mut acc = 0.0f32;
        for j in 0..cols {
            let k = i * cols + j;
            let (g, wv) = (grad_eff.data()[k], w.data()[k]);
            let straight = if mask.bits[k] { g } else { 0.0 };
            if frozen.bits[k] {
                grad_w[k] = straight;
                continue;
            }
            let h = estimator_h(wv.abs() - ti);
            grad_w[k] = straight + g * wv * h * wv.signum();
            acc += g * wv * -h;
        }
        grad_t[i] = acc;
    }
    Ok((
        Tensor::new(vec![rows, cols], grad_w)?,
        Tensor::new(vec![rows], grad_t)?,
    ))
}

/// `Σ_layers Σ_i exp(−t_i)` and its gradient per layer.
pub fn sparse_reg(thresholds: &[&Tensor]) -> (f64, Vec<Tensor>) {
    let mut total = 0.0f64;
    let grads = thresholds
        .iter()
        .map(|t| {
            let g: Vec<f32> = t
                .data()
                .iter()
                .map(|&v| {
                    let e = (-(v as f64)).exp();
                    total += e;
                    -e as f32
                })
                .collect();
            Tensor::new(t.shape().to_vec(), g).expect("same shape")
        })
        .collect();
    (total, grads)
}

/// Fraction of entries that are active (pruning mask or freeze mask set).
pub fn remaining_ratio(prune: &Mask, frozen: &Mask) -> Result<f64> {
    prune.same_dims(frozen)?;
    if prune.is_empty() {
        return Ok(1.0);
    }
    let active = prune
        .bits
        .iter()
        .zip(&frozen.bits)
        .filter(|(&p, &f)| p || f)
        .count();
    Ok(active as f64 / prune.len() as f64)
}

/// Sparsity-pressure settings for dynamic pruning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub alpha: f32,
}

impl RegularizerConfig {
    pub fn new(alpha: f32) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    /// Rule of thumb: `alpha · (samples × epochs) ≈ 1`.
    pub fn from_budget(samples: usize, epochs: usize) -> Result<Self> {
        Self::new(1.0 / (samples.max(1) * epochs.max(1)) as f32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn t1(v: &[f32]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn step_values() {
        assert_eq!(step(-0.2), 0.0);
        assert_eq!(step(0.0), 1.0);
        assert_eq!(step(-0.0), 1.0);
        assert_eq!(step(0.7), 1.0);
    }

    #[test]
    fn estimator_values_and_breakpoints() {
        assert_eq!(estimator_h(0.0), 2.0);
        assert_eq!(estimator_h(-0.1), 1.6);
        assert_eq!(estimator_h(0.5), 0.4);
        assert_eq!(estimator_h(2.0), 0.0);
        for s in [1.0f32, -1.0] {
            assert_eq!(estimator_h(s * 0.4), 2.0 - 4.0 * 0.4f32);
            assert_eq!(estimator_h(s * 1.0), 0.4);
            assert_eq!(estimator_h(s * 1.000001), 0.0);
            assert_eq!(estimator_h(s * 0.400001), 0.4);
        }
    }

    #[test]
    fn mask_from_magnitudes() {
        let w = Tensor::from_rows(&[&[0.5, -0.1], &[0.05, -0.9]]);
        let m = compute_prune_mask(&w, &t1(&[0.2, 0.2]), &Mask::zeros(2, 2)).unwrap();
        assert_eq!(m.bits(), &[true, false, false, true]);
    }

    #[test]
    fn zero_thresholds_keep_everything() {
        let w = Tensor::from_rows(&[&[0.0, -0.0, 3.0], &[-1e-30, 2.0, -5.0]]);
        let m = compute_prune_mask(&w, &t1(&[0.0, 0.0]), &Mask::zeros(2, 3)).unwrap();
        assert_eq!(m.count_ones(), 6);
    }

    #[test]
    fn frozen_entries_stay_active() {
        let w = Tensor::from_rows(&[&[0.01, 0.02]]);
        let frozen = Mask::from_bits(1, 2, vec![true, false]).unwrap();
        let m = compute_prune_mask(&w, &t1(&[0.5]), &frozen).unwrap();
        assert_eq!(m.bits(), &[true, false]);
    }

    #[test]
    fn shape_errors() {
        let w = Tensor::zeros(&[2, 3]);
        assert!(compute_prune_mask(&w, &t1(&[0.0]), &Mask::zeros(2, 3)).is_err());
        assert!(compute_prune_mask(&w, &t1(&[0.0, 0.0]), &Mask::zeros(3, 2)).is_err());
    }

    #[test]
    fn masked_forward_extremes() {
        let w = Tensor::from_rows(&[&[0.5, -1.0, 2.0], &[1.5, 0.25, -0.75]]);
        let x = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[-1.0, 0.5, 4.0]]);
        let dense = crate::tensor::matmul(&x, &Tensor::from_rows(&[&[0.5, 1.5], &[-1.0, 0.25], &[2.0, -0.75]])).unwrap();
        assert_eq!(masked_forward(&w, &Mask::ones(2, 3), &x).unwrap(), dense);
        let zero = masked_forward(&w, &Mask::zeros(2, 3), &x).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_forward_equals_dense_with_zeroed_weights() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let w = Tensor::new(vec![3, 3], (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let x = Tensor::new(vec![4, 3], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mask = Mask::from_bits(3, 3, (0..9).map(|_| rng.gen_bool(0.5)).collect()).unwrap();
        let mut zeroed = w.clone();
        for (v, &m) in zeroed.data_mut().iter_mut().zip(mask.bits()) {
            if !m {
                *v = 0.0;
            }
        }
        let oracle = masked_forward(&zeroed, &Mask::ones(3, 3), &x).unwrap();
        let got = masked_forward(&w, &mask, &x).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&got), bits(&oracle));
    }

    #[test]
    fn estimator_band_empty_reduces_to_straight_through() {
        let w = Tensor::from_rows(&[&[3.0, -2.5], &[0.01, -0.02]]);
        let t = t1(&[-0.5, 2.0]);
        let mask = compute_prune_mask(&w, &t, &Mask::zeros(2, 2)).unwrap();
        let g = Tensor::from_rows(&[&[0.3, -0.7], &[1.1, 0.9]]);
        let (gw, gt) = masked_backward(&g, &w, &t, &mask, &Mask::zeros(2, 2)).unwrap();
        assert_eq!(gw.data(), &[0.3, -0.7, 0.0, 0.0]);
        assert_eq!(gt.data(), &[0.0, 0.0]);
    }

    #[test]
    fn single_weight_hand_chain_rule() {
        let w = Tensor::from_rows(&[&[0.1]]);
        let t = t1(&[0.2]);
        let mask = compute_prune_mask(&w, &t, &Mask::zeros(1, 1)).unwrap();
        assert!(!mask.get(0, 0));
        let (gw, gt) =
            masked_backward(&Tensor::from_rows(&[&[1.0]]), &w, &t, &mask, &Mask::zeros(1, 1)).unwrap();
        assert!((gw.data()[0] - 0.16).abs() < 1e-7);
        assert!((gt.data()[0] + 0.16).abs() < 1e-7);
    }

    #[test]
    fn frozen_entries_skip_estimator() {
        let w = Tensor::from_rows(&[&[0.1, 0.1]]);
        let t = t1(&[0.2]);
        let frozen = Mask::from_bits(1, 2, vec![true, false]).unwrap();
        let mask = compute_prune_mask(&w, &t, &frozen).unwrap();
        let g = Tensor::from_rows(&[&[1.0, 1.0]]);
        let (gw, gt) = masked_backward(&g, &w, &t, &mask, &frozen).unwrap();
        assert_eq!(gw.data()[0], 1.0);
        assert!((gt.data()[0] + 0.16).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn negation_symmetry(
            ws in proptest::collection::vec(-1.5f32..1.5, 6),
            gs in proptest::collection::vec(-1.0f32..1.0, 6),
            ts in proptest::collection::vec(-0.5f32..0.8, 2),
        ) {
            let w = Tensor::new(vec![2, 3], ws.clone()).unwrap();
            let neg_w = Tensor::new(vec![2, 3], ws.iter().map(|v| -v).collect()).unwrap();
            let g = Tensor::new(vec![2, 3], gs.clone()).unwrap();
            let neg_g = Tensor::new(vec![2, 3], gs.iter().map(|v| -v).collect()).unwrap();
            let t = Tensor::new(vec![2], ts).unwrap();
            let free = Mask::zeros(2, 3);
            let m = compute_prune_mask(&w, &t, &free).unwrap();
            prop_assert_eq!(&compute_prune_mask(&neg_w, &t, &free).unwrap(), &m);

            let (gw, gt) = masked_backward(&g, &w, &t, &m, &free).unwrap();
            let estimator = |gw: &Tensor, g: &Tensor| -> Vec<f32> {
                gw.data().iter().zip(g.data()).zip(m.bits())
                    .map(|((&a, &gv), &on)| a - if on { gv } else { 0.0 }).collect()
            };
            let base = estimator(&gw, &g);

            // W and the upstream gradient negated together (an odd loss in W_eff):
            // the estimator term flips sign, the threshold gradient is unchanged.
            let (gw2, gt2) = masked_backward(&neg_g, &neg_w, &t, &m, &free).unwrap();
            for (a, b) in base.iter().zip(estimator(&gw2, &neg_g)) {
                prop_assert_eq!(*a, -b);
            }
            prop_assert_eq!(gt.data(), gt2.data());

            // W negated alone: estimator term unchanged, threshold gradient flips.
            let (gw3, gt3) = masked_backward(&g, &neg_w, &t, &m, &free).unwrap();
            prop_assert_eq!(base, estimator(&gw3, &g));
            for (a, b) in gt.data().iter().zip(gt3.data()) {
                prop_assert_eq!(*a, -b);
            }
        }

        #[test]
        fn regulariser_strictly_decreasing(t in -5.0f32..5.0, d in 0.01f32..2.0) {
            let a = t1(&[t, 0.3]);
            let b = t1(&[t + d, 0.3]);
            prop_assert!(sparse_reg(&[&b]).0 < sparse_reg(&[&a]).0);
        }
    }

    #[test]
    fn regulariser_values() {
        let (l, g) = sparse_reg(&[&t1(&[0.0, 0.0, 0.0])]);
        assert_eq!(l, 3.0);
        assert_eq!(g[0].data(), &[-1.0, -1.0, -1.0]);

        let (l, g) = sparse_reg(&[&t1(&[std::f32::consts::LN_2])]);
        assert!((l - 0.5).abs() < 1e-7);
        assert!((g[0].data()[0] + 0.5).abs() < 1e-7);

        let (l, _) = sparse_reg(&[&t1(&[50.0])]);
        assert!(l < 1e-20);

        let (l, g) = sparse_reg(&[&t1(&[0.0]), &t1(&[0.0, 0.0])]);
        assert_eq!(l, 3.0);
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn remaining_ratio_counts() {
        assert_eq!(remaining_ratio(&Mask::ones(3, 3), &Mask::zeros(3, 3)).unwrap(), 1.0);
        let p = Mask::from_bits(2, 2, vec![true, true, false, false]).unwrap();
        let f = Mask::from_bits(2, 2, vec![false, false, true, false]).unwrap();
        assert_eq!(remaining_ratio(&p, &f).unwrap(), 0.75);
    }

    #[test]
    fn alpha_budget_rule() {
        let r = RegularizerConfig::from_budget(60_000, 20).unwrap();
        assert!((r.alpha * 1.2e6 - 1.0).abs() < 1e-6);
        assert!(RegularizerConfig::new(0.0).is_err());
    }
}
