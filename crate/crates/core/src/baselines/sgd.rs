use crate::data::{PreparedDataset, TaskSequence};
use crate::error::Result;
use crate::nn::{Network, PruningMode};
use crate::trainer::{run_sequence, Method, SequenceObserver, SequenceRunState, TrainConfig};

/// Plain finetuning: no masks, no penalties.
#[derive(Debug, Clone, Copy, Default)]
pub struct NaiveSgd;

impl Method for NaiveSgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn begin_dataset(&mut self, net: &mut Network, _dataset: usize) -> Result<()> {
        net.pruning = PruningMode::Static;
        Ok(())
    }

    fn end_dataset(&mut self, _net: &mut Network, _dataset: usize, _train: &PreparedDataset) -> Result<()> {
        Ok(())
    }
}

pub fn train_sgd_naive(
    net: Network,
    tasks: &TaskSequence,
    cfg: &TrainConfig,
    observer: &mut dyn SequenceObserver,
) -> Result<SequenceRunState> {
    run_sequence(net, tasks, cfg, &mut NaiveSgd, observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_sequence, Shift};
    use crate::nn::build_toy_cnn;
    use crate::trainer::AdaptCl;

    #[test]
    fn single_task_matches_unpruned_trainer() {
        let seq = synthetic_sequence(1, 4, 3, Shift::Strong, 5).unwrap();
        let cfg = TrainConfig { epochs_per_dataset: 2, batch_size: 4, learning_rate: 0.01, ..TrainConfig::default() };
        let net = || build_toy_cnn(&[1, 8, 8], 3, 5).unwrap();
        let a = train_sgd_naive(net(), &seq, &cfg, &mut ()).unwrap();
        let b = run_sequence(net(), &seq, &cfg, &mut NoPruning(AdaptCl { alpha: 0.0 }), &mut ()).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.network.params(), b.network.params());
        let again = train_sgd_naive(net(), &seq, &cfg, &mut ()).unwrap();
        assert_eq!(a.history, again.history);
    }

    /// The trainer with dynamic pruning switched off.
    struct NoPruning(AdaptCl);

    impl Method for NoPruning {
        fn name(&self) -> &'static str {
            "adaptcl-dense"
        }

        fn begin_dataset(&mut self, net: &mut Network, d: usize) -> Result<()> {
            self.0.begin_dataset(net, d)?;
            net.pruning = PruningMode::Static;
            Ok(())
        }

        fn alpha(&self) -> f32 {
            self.0.alpha()
        }

        fn end_dataset(&mut self, net: &mut Network, d: usize, train: &PreparedDataset) -> Result<()> {
            self.0.end_dataset(net, d, train)
        }
    }
}
