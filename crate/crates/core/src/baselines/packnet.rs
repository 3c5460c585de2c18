//! PackNet without task masks at inference.
//!
//! Each dataset trains the free weights, prunes the smallest
//! `prune_fraction` of them per layer, retrains the survivors and freezes
//! them. Pruned weights are zeroed and handed to the next dataset. Inference
//! always uses the plain dense weights.

use crate::data::{PreparedDataset, TaskSequence};
use crate::error::{Error, Result};
use crate::nn::{MaskedWeights, Network, PruningMode};
use crate::trainer::{run_sequence, Method, SequenceObserver, SequenceRunState, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PackNetStar {
    pub prune_fraction: f64,
    /// Epochs after pruning, taken out of the per-dataset budget.
    pub retrain_epochs: usize,
    pub epochs_per_dataset: usize,
}

impl PackNetStar {
    pub fn new(prune_fraction: f64, retrain_epochs: usize, epochs_per_dataset: usize) -> Result<Self> {
        if !(prune_fraction > 0.0 && prune_fraction < 1.0) {
            return Err(Error::Config(format!("prune_fraction must lie in (0, 1), got {prune_fraction}")));
        }
        if retrain_epochs == 0 || retrain_epochs >= epochs_per_dataset {
            return Err(Error::Config(format!(
                "retrain_epochs must lie in [1, epochs_per_dataset), got {retrain_epochs} of {epochs_per_dataset}"
            )));
        }
        Ok(Self { prune_fraction, retrain_epochs, epochs_per_dataset })
    }
}

/// Masks out `floor(fraction × free)` of the layer's free weights with the
/// smallest magnitude; equal magnitudes go lowest flat index first. Returns
/// the number pruned.
pub fn packnet_prune(m: &mut MaskedWeights, fraction: f64) -> usize {
    let mut free: Vec<usize> = (0..m.weight.len()).filter(|&k| !m.freeze_mask.bits()[k]).collect();
    let count = (fraction * free.len() as f64).floor() as usize;
    let w = m.weight.data();
    free.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));
    let bits = m.prune_mask.bits_mut();
    bits.fill(true);
    for &k in &free[..count] {
        bits[k] = false;
    }
    count
}

impl Method for PackNetStar {
    fn name(&self) -> &'static str {
        "packnet_star"
    }

    fn begin_dataset(&mut self, net: &mut Network, dataset: usize) -> Result<()> {
        net.pruning = PruningMode::Static;
        let free: usize = net.maskable().map(|(_, m)| m.weight.len() - m.freeze_mask.count_ones()).sum();
        if free == 0 {
            return Err(Error::Capacity(format!("no free weights left for dataset {dataset}")));
        }
        for (_, m) in net.maskable_mut() {
            m.prune_mask.fill(true);
        }
        Ok(())
    }

    fn begin_epoch(&mut self, net: &mut Network, _dataset: usize, epoch: usize) -> Result<bool> {
        if epoch != self.epochs_per_dataset - self.retrain_epochs {
            return Ok(false);
        }
        for (_, m) in net.maskable_mut() {
            packnet_prune(m, self.prune_fraction);
        }
        Ok(true)
    }

    fn end_dataset(&mut self, net: &mut Network, _dataset: usize, _train: &PreparedDataset) -> Result<()> {
        for (_, m) in net.maskable_mut() {
            let mut keep = m.freeze_mask.clone();
            keep.union_with(&m.prune_mask)?;
            for (w, &k) in m.weight.data_mut().iter_mut().zip(keep.bits()) {
                if !k {
                    *w = 0.0;
                }
            }
            m.freeze_mask = keep;
            m.prune_mask.fill(true);
        }
        net.freeze_batchnorm();
        Ok(())
    }
}

pub fn train_packnet_star(
    net: Network,
    tasks: &TaskSequence,
    cfg: &TrainConfig,
    prune_fraction: f64,
    retrain_epochs: usize,
    observer: &mut dyn SequenceObserver,
) -> Result<SequenceRunState> {
    let mut method = PackNetStar::new(prune_fraction, retrain_epochs, cfg.epochs_per_dataset)?;
    run_sequence(net, tasks, cfg, &mut method, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use crate::tensor::Tensor;

    fn layer(weights: Vec<f32>, cols: usize) -> MaskedWeights {
        let rows = weights.len() / cols;
        let mut rng = crate::rng::substream(1, crate::rng::Purpose::Init, 0);
        let mut m = MaskedWeights::init(rows, cols, &mut rng);
        m.weight = Tensor::new(vec![rows, cols], weights).unwrap();
        m
    }

    #[test]
    fn ninety_nine_weights_leave_sixty_six_frozen() {
        let mut net = Network::new(&[33], vec![LayerSpec::Dense { inputs: 33, outputs: 3 }], 5).unwrap();
        let mut p = PackNetStar::new(1.0 / 3.0, 1, 2).unwrap();
        p.begin_dataset(&mut net, 0).unwrap();
        assert!(p.begin_epoch(&mut net, 0, 1).unwrap());
        let dummy = crate::data::PreparedDataset {
            name: "x".into(),
            split: crate::data::Split::Train,
            shape: vec![33],
            features: vec![],
            labels: vec![],
            classes: 3,
        };
        p.end_dataset(&mut net, 0, &dummy).unwrap();
        let m = net.maskable().next().unwrap().1;
        assert_eq!(m.freeze_mask.count_ones(), 66);
        assert_eq!(m.weight.data().iter().filter(|&&w| w == 0.0).count(), 33);
        // Second dataset: floor(33 / 3) = 11 more released, 22 more frozen.
        p.begin_dataset(&mut net, 1).unwrap();
        p.begin_epoch(&mut net, 1, 1).unwrap();
        p.end_dataset(&mut net, 1, &dummy).unwrap();
        assert_eq!(net.maskable().next().unwrap().1.freeze_mask.count_ones(), 88);
    }

    #[test]
    fn ties_break_by_index() {
        let mut m = layer(vec![0.5, -0.1, 0.1, 0.3, 0.1, 0.9], 3);
        assert_eq!(packnet_prune(&mut m, 0.5), 3);
        assert_eq!(m.prune_mask.bits(), &[true, false, false, true, false, true]);
        let mut m = layer(vec![0.2, 0.2, 0.2, 0.2], 2);
        packnet_prune(&mut m, 0.5);
        assert_eq!(m.prune_mask.bits(), &[false, false, true, true]);
    }

    #[test]
    fn frozen_weights_are_not_candidates() {
        let mut m = layer(vec![0.01, 0.02, 0.5, 0.6], 2);
        m.freeze_mask.bits_mut()[0] = true;
        assert_eq!(packnet_prune(&mut m, 0.5), 1);
        assert_eq!(m.prune_mask.bits(), &[true, false, true, true]);
    }

    #[test]
    fn exhausted_capacity_is_an_error() {
        let mut net = Network::new(&[2], vec![LayerSpec::Dense { inputs: 2, outputs: 2 }], 5).unwrap();
        net.maskable_mut().for_each(|(_, m)| m.freeze_mask.fill(true));
        let mut p = PackNetStar::new(1.0 / 3.0, 1, 2).unwrap();
        assert!(matches!(p.begin_dataset(&mut net, 3), Err(Error::Capacity(_))));
    }

    #[test]
    fn config_bounds() {
        assert!(PackNetStar::new(0.0, 1, 2).is_err());
        assert!(PackNetStar::new(0.5, 2, 2).is_err());
        assert!(PackNetStar::new(0.5, 0, 2).is_err());
    }
}
