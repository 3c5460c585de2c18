//! Separated-model learning: an independent network per task.

use crate::data::TaskSequence;
use crate::error::Result;
use crate::exec::Exec;
use crate::metrics::{accuracy, ResultMatrix};
use crate::nn::Network;
use crate::trainer::{evaluate_all, train_on_dataset, EpochRecord, SequenceRunState, TrainConfig};

use super::sgd::NaiveSgd;

/// Trains one fresh network per task, in parallel. Row `i` of the matrix
/// holds `R[j][j]` for tasks already seen (`j ≤ i`) and the untrained
/// accuracy for the rest, so only the diagonal carries information.
pub fn train_sml(
    build: &(dyn Fn() -> Result<Network> + Sync),
    tasks: &TaskSequence,
    cfg: &TrainConfig,
) -> Result<SequenceRunState> {
    train_sml_models(build, tasks, cfg).map(|(state, _)| state)
}

/// [`train_sml`], also returning every per-task model in task order.
pub fn train_sml_models(
    build: &(dyn Fn() -> Result<Network> + Sync),
    tasks: &TaskSequence,
    cfg: &TrainConfig,
) -> Result<(SequenceRunState, Vec<Network>)> {
    cfg.validate()?;
    tasks.validate()?;
    let fresh = build()?;
    let b_bar = evaluate_all(&fresh, tasks)?;
    let runs = Exec::default().map(tasks.len(), |d| -> Result<(Network, Vec<EpochRecord>, f64)> {
        let mut net = build()?;
        let mut history = Vec::new();
        let mut method = NaiveSgd;
        crate::trainer::Method::begin_dataset(&mut method, &mut net, d)?;
        let cfg = TrainConfig { seed: cfg.seed.wrapping_add(d as u64), ..*cfg };
        // Per-epoch records score every task, so curves line up with the
        // sequential methods.
        train_on_dataset(&mut net, &mut method, tasks, d, &cfg, &mut history, &mut ())?;
        let acc = accuracy(&net, &tasks.tasks[d].test)?;
        Ok((net, history, acc))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let t = tasks.len();
    let mut matrix = ResultMatrix::new(t);
    matrix.b_bar = b_bar.clone();
    for i in 0..t {
        let row = (0..t).map(|j| if j <= i { runs[j].2 } else { b_bar[j] }).collect();
        matrix.set_row(i, row)?;
    }
    let mut history = Vec::new();
    for (d, (_, h, _)) in runs.iter().enumerate() {
        for r in h {
            history.push(EpochRecord { dataset_idx: d, epoch: history.len() + 1, ..r.clone() });
        }
    }
    let per_model: Vec<usize> = runs.iter().map(|(n, _, _)| n.count_used()).collect();
    let used_params = (1..=t).map(|i| per_model[..i].iter().sum()).collect();
    let layer_usage = runs.iter().map(|(n, _, _)| n.layer_usage()).collect();
    let models: Vec<Network> = runs.into_iter().map(|(n, _, _)| n).collect();
    let network = models.last().expect("at least one task").clone();
    Ok((SequenceRunState { network, history, matrix, used_params, layer_usage }, models))
}
