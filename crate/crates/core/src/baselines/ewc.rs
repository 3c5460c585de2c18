//! Elastic weight consolidation with one diagonal Fisher estimate per dataset.

use rand::seq::SliceRandom;

use crate::data::{PreparedDataset, TaskSequence};
use crate::error::{Error, Result};
use crate::nn::{Gradients, Mode, Network, PruningMode};
use crate::rng::{substream, Purpose};
use crate::tensor::{softmax_cross_entropy, Tensor};
use crate::trainer::{run_sequence, Method, SequenceObserver, SequenceRunState, TrainConfig};

/// Diagonal Fisher and anchor weights, both in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherState {
    pub fisher: Vec<Tensor>,
    pub anchor: Vec<Tensor>,
    pub lambda: f32,
}

/// Empirical Fisher: mean squared gradient of `−log p(y|x)` at the true label,
/// over `n_samples` training samples drawn without replacement.
pub fn consolidate_ewc(net: &mut Network, ds: &PreparedDataset, n_samples: usize, lambda: f32, seed: u64) -> Result<FisherState> {
    if ds.is_empty() {
        return Err(Error::Input(format!("{}: cannot estimate Fisher information without samples", ds.name)));
    }
    let n = if n_samples > ds.len() {
        log::warn!("fisher_samples {n_samples} exceeds {} training samples of {}; using all", ds.len(), ds.name);
        ds.len()
    } else {
        n_samples.max(1)
    };
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut substream(seed, Purpose::Sampling, 0));
    let anchor: Vec<Tensor> = net.params().into_iter().cloned().collect();
    let mut sums: Vec<Vec<f64>> = anchor.iter().map(|t| vec![0.0; t.len()]).collect();
    for &i in &order[..n] {
        let (x, y) = ds.batch(&[i])?;
        let logits = net.forward(&x, Mode::Train)?;
        let (_, g) = softmax_cross_entropy(&logits, &y)?;
        let grads = net.backward(&g)?;
        for (acc, t) in sums.iter_mut().zip(&grads.tensors) {
            for (a, &v) in acc.iter_mut().zip(t.data()) {
                *a += (v as f64) * (v as f64);
            }
        }
    }
    net.clear_caches();
    let fisher = sums
        .into_iter()
        .zip(&anchor)
        .map(|(acc, t)| Tensor::new(t.shape().to_vec(), acc.into_iter().map(|v| (v / n as f64) as f32).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(FisherState { fisher, anchor, lambda })
}

/// `Σ_states (λ/2) Σ_k F_k (w_k − a_k)²` and its gradient per parameter tensor.
pub fn ewc_penalty(params: &[&Tensor], states: &[FisherState]) -> Result<(f64, Vec<Tensor>)> {
    let mut loss = 0.0f64;
    let mut grads: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    for s in states {
        if s.fisher.len() != params.len() || s.anchor.len() != params.len() {
            return Err(Error::Dimension(format!(
                "Fisher state covers {} tensors, network has {}",
                s.fisher.len(),
                params.len()
            )));
        }
        for ((p, (f, a)), g) in params.iter().zip(s.fisher.iter().zip(&s.anchor)).zip(grads.iter_mut()) {
            p.same_shape(f)?;
            p.same_shape(a)?;
            for (((&w, &fk), &ak), gk) in p.data().iter().zip(f.data()).zip(a.data()).zip(g.data_mut()) {
                let d = w - ak;
                loss += 0.5 * s.lambda as f64 * fk as f64 * (d as f64) * (d as f64);
                *gk += s.lambda * fk * d;
            }
        }
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone)]
pub struct Ewc {
    pub lambda: f32,
    pub fisher_samples: usize,
    pub seed: u64,
    pub states: Vec<FisherState>,
}

impl Ewc {
    pub fn new(lambda: f32, fisher_samples: usize, seed: u64) -> Self {
        Self { lambda, fisher_samples, seed, states: Vec::new() }
    }
}

impl Method for Ewc {
    fn name(&self) -> &'static str {
        "ewc"
    }

    fn begin_dataset(&mut self, net: &mut Network, _dataset: usize) -> Result<()> {
        net.pruning = PruningMode::Static;
        Ok(())
    }

    fn penalty(&self, net: &Network, grads: &mut Gradients) -> Result<f64> {
        if self.states.is_empty() {
            return Ok(0.0);
        }
        let (loss, extra) = ewc_penalty(&net.params(), &self.states)?;
        for (g, e) in grads.tensors.iter_mut().zip(extra) {
            for (a, b) in g.data_mut().iter_mut().zip(e.data()) {
                *a += b;
            }
        }
        Ok(loss)
    }

    fn end_dataset(&mut self, net: &mut Network, dataset: usize, train: &PreparedDataset) -> Result<()> {
        let seed = self.seed.wrapping_add(dataset as u64);
        let state = consolidate_ewc(net, train, self.fisher_samples, self.lambda, seed)?;
        self.states.push(state);
        Ok(())
    }
}

pub fn train_ewc(
    net: Network,
    tasks: &TaskSequence,
    cfg: &TrainConfig,
    lambda: f32,
    fisher_samples: usize,
    observer: &mut dyn SequenceObserver,
) -> Result<SequenceRunState> {
    run_sequence(net, tasks, cfg, &mut Ewc::new(lambda, fisher_samples, cfg.seed), observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::nn::LayerSpec;
    use proptest::prelude::*;

    fn logistic(w: [f32; 2]) -> Network {
        let mut net = Network::new(&[1], vec![LayerSpec::Dense { inputs: 1, outputs: 2 }], 1).unwrap();
        let d = net.maskable_mut().next().unwrap().1;
        d.weight.data_mut().copy_from_slice(&w);
        d.bias.fill(0.0);
        net
    }

    fn dataset(xs: &[f32], ys: &[usize]) -> PreparedDataset {
        PreparedDataset {
            name: "toy".into(),
            split: Split::Train,
            shape: vec![1],
            features: xs.to_vec(),
            labels: ys.to_vec(),
            classes: 2,
        }
    }

    #[test]
    fn matches_closed_form_logistic_gradient() {
        let (w, xs, ys) = ([0.7f32, -0.4], [0.5f32, -1.2, 2.0], [0usize, 1, 1]);
        let mut net = logistic(w);
        let state = consolidate_ewc(&mut net, &dataset(&xs, &ys), 3, 1.0, 5).unwrap();
        // d(−log p_y)/dw_c = (p_c − [c = y]) · x
        let mut want = [0.0f64; 2];
        for (&x, &y) in xs.iter().zip(&ys) {
            let z = [w[0] as f64 * x as f64, w[1] as f64 * x as f64];
            let m = z[0].max(z[1]);
            let e = [(z[0] - m).exp(), (z[1] - m).exp()];
            for c in 0..2 {
                let p = e[c] / (e[0] + e[1]);
                let g = (p - if c == y { 1.0 } else { 0.0 }) * x as f64;
                want[c] += g * g / 3.0;
            }
        }
        for c in 0..2 {
            assert!((state.fisher[0].data()[c] as f64 - want[c]).abs() < 1e-6, "{:?} vs {want:?}", state.fisher[0]);
        }
        assert_eq!(state.anchor[0].data(), &w);
    }

    #[test]
    fn saturated_model_has_zero_fisher() {
        let mut net = logistic([0.0, 0.0]);
        net.maskable_mut().next().unwrap().1.bias.data_mut().copy_from_slice(&[1e4, -1e4]);
        let state = consolidate_ewc(&mut net, &dataset(&[0.3, -0.2], &[0, 0]), 5, 1.0, 5).unwrap();
        assert!(state.fisher.iter().all(|f| f.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn penalty_at_anchor_is_zero_and_linear_in_lambda() {
        let net = logistic([0.5, 0.5]);
        let params = net.params();
        let fisher: Vec<Tensor> = params.iter().map(|p| Tensor::full(p.shape(), 2.0)).collect();
        let at_anchor = FisherState { fisher: fisher.clone(), anchor: params.iter().map(|&p| p.clone()).collect(), lambda: 1.0 };
        let (l, g) = ewc_penalty(&params, &[at_anchor]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));

        let shifted = |lambda| FisherState {
            fisher: fisher.clone(),
            anchor: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            lambda,
        };
        let (l1, _) = ewc_penalty(&params, &[shifted(1.0)]).unwrap();
        let (l2, _) = ewc_penalty(&params, &[shifted(2.0)]).unwrap();
        assert!(l1 > 0.0);
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn fisher_nonnegative(x in proptest::collection::vec(-3.0f32..3.0, 4), w0 in -2.0f32..2.0, w1 in -2.0f32..2.0) {
            let mut net = logistic([w0, w1]);
            let state = consolidate_ewc(&mut net, &dataset(&x, &[0, 1, 1, 0]), 4, 1.0, 5).unwrap();
            prop_assert!(state.fisher.iter().all(|f| f.data().iter().all(|&v| v >= 0.0)));
        }

        #[test]
        fn penalty_matches_direct_formula(
            w in proptest::collection::vec(-1.0f32..1.0, 3),
            a in proptest::collection::vec(-1.0f32..1.0, 3),
            f in proptest::collection::vec(0.0f32..2.0, 3),
            lambda in 0.0f32..3.0,
        ) {
            let p = Tensor::new(vec![3], w.clone()).unwrap();
            let state = FisherState {
                fisher: vec![Tensor::new(vec![3], f.clone()).unwrap()],
                anchor: vec![Tensor::new(vec![3], a.clone()).unwrap()],
                lambda,
            };
            let (loss, grads) = ewc_penalty(&[&p], &[state.clone(), state]).unwrap();
            let mut want = 0.0f64;
            for k in 0..3 {
                let d = (w[k] - a[k]) as f64;
                want += 2.0 * (lambda as f64 / 2.0) * f[k] as f64 * d * d;
                let gk = 2.0 * lambda as f64 * f[k] as f64 * d;
                prop_assert!((grads[0].data()[k] as f64 - gk).abs() < 1e-5);
            }
            prop_assert!((loss - want).abs() < 1e-5);
        }
    }

    #[test]
    fn oversized_sample_count_is_clamped() {
        let mut net = logistic([0.1, 0.2]);
        let state = consolidate_ewc(&mut net, &dataset(&[1.0], &[0]), 50, 1.0, 5).unwrap();
        assert!(state.fisher[0].data()[0] > 0.0);
    }
}
