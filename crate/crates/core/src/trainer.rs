//! Sequential training over a task sequence with freeze-masked updates.
//!
//! Per dataset: reset thresholds, train with the prune mask recomputed every
//! step and frozen weight gradients zeroed, fold the prune mask into the
//! freeze mask, then hard-zero every inactive weight so the network can be
//! used without masks.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{PreparedDataset, TaskSequence};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, ResultMatrix};
use crate::nn::{Gradients, Layer, Mode, Network, ParamRole, PruningMode};
use crate::optim::{Sgd, SgdConfig};
use crate::pruning::{self, Mask, RegularizerConfig};
use crate::rng::{substream, Purpose, DEFAULT_SEED};
use crate::tensor::{softmax_cross_entropy, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the sparsity regulariser; 0 disables it.
    pub alpha: f32,
    pub learning_rate: f32,
    pub momentum: f32,
    pub nesterov: bool,
    pub epochs_per_dataset: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-5,
            learning_rate: 0.001,
            momentum: 0.9,
            nesterov: true,
            epochs_per_dataset: 20,
            batch_size: 64,
            seed: DEFAULT_SEED,
        }
    }
}

impl TrainConfig {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig { learning_rate: self.learning_rate, momentum: self.momentum, nesterov: self.nesterov }
    }

    pub fn validate(&self) -> Result<()> {
        self.sgd().validate()?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if self.epochs_per_dataset == 0 {
            return Err(Error::Config("epochs_per_dataset must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// `alpha` from the rule of thumb `alpha · samples · epochs ≈ 1`.
    pub fn budget_alpha(samples: usize, epochs: usize) -> f32 {
        RegularizerConfig::from_budget(samples, epochs).map_or(0.0, |r| r.alpha)
    }
}

/// One row of training history: state after a completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub dataset_idx: usize,
    /// Epochs completed since the start of the sequence, 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub remaining_ratio: f64,
    /// Percent, one entry per task in the sequence.
    pub test_accuracy: Vec<f64>,
}

/// One row per (epoch, evaluated task).
pub fn history_csv(history: &[EpochRecord], method: &str) -> String {
    let mut out = String::from("dataset_idx,epoch,task_idx,test_accuracy,remaining_ratio,train_loss,method\n");
    for r in history {
        for (task, acc) in r.test_accuracy.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.6},{:.6},{method}\n",
                r.dataset_idx, r.epoch, task, acc, r.remaining_ratio, r.train_loss
            ));
        }
    }
    out
}

/// Where a training step happened, for diagnostics and observers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepAt {
    pub dataset: usize,
    pub epoch: usize,
    pub step: usize,
}

/// Zeroes gradient entries whose freeze bit is set.
pub fn apply_freeze(grad: &Tensor, frozen: &Mask) -> Result<Tensor> {
    frozen.matches(grad)?;
    let data = grad
        .data()
        .iter()
        .zip(frozen.bits())
        .map(|(&g, &f)| if f { 0.0 } else { g })
        .collect();
    Tensor::new(grad.shape().to_vec(), data)
}

/// `M^f ∨ M^p`.
pub fn update_freeze_mask(frozen: &Mask, prune: &Mask) -> Result<Mask> {
    let mut out = frozen.clone();
    out.union_with(prune)?;
    Ok(out)
}

/// Folds every layer's prune mask into its freeze mask.
pub fn update_freeze_masks(net: &mut Network) {
    for (_, m) in net.maskable_mut() {
        m.freeze_mask = update_freeze_mask(&m.freeze_mask, &m.prune_mask).expect("own masks agree");
    }
}

/// Hard-zeroes inactive weights and, from the first dataset on, freezes batch-norm.
pub fn finalize_dataset(net: &mut Network) {
    for (_, m) in net.maskable_mut() {
        let active: Vec<bool> = (0..m.weight.len()).map(|k| m.is_active(k)).collect();
        for (w, on) in m.weight.data_mut().iter_mut().zip(active) {
            if !on {
                *w = 0.0;
            }
        }
    }
    net.freeze_batchnorm();
}

/// Zeroes frozen weight gradients in place.
pub fn freeze_gradients(net: &Network, grads: &mut Gradients) -> Result<()> {
    for (layer, m) in net.maskable() {
        if m.freeze_mask.count_ones() == 0 {
            continue;
        }
        let g = grads
            .get_mut(layer, ParamRole::Weight)
            .ok_or_else(|| Error::State(format!("no weight gradient for layer {layer}")))?;
        *g = apply_freeze(g, &m.freeze_mask)?;
    }
    Ok(())
}

/// Per-method behaviour plugged into [`run_sequence`].
pub trait Method {
    fn name(&self) -> &'static str;

    fn begin_dataset(&mut self, net: &mut Network, dataset: usize) -> Result<()>;

    /// Called before every epoch. Returning `true` restarts the optimizer.
    fn begin_epoch(&mut self, _net: &mut Network, _dataset: usize, _epoch: usize) -> Result<bool> {
        Ok(false)
    }

    /// Sparsity regulariser weight for the current step.
    fn alpha(&self) -> f32 {
        0.0
    }

    /// Extra loss term; its gradient is added to `grads`.
    fn penalty(&self, _net: &Network, _grads: &mut Gradients) -> Result<f64> {
        Ok(0.0)
    }

    /// Runs after training on a dataset, before it is evaluated.
    fn end_dataset(&mut self, net: &mut Network, dataset: usize, train: &PreparedDataset) -> Result<()>;
}

/// Dynamic pruning with trainable thresholds and freeze-mask reuse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptCl {
    pub alpha: f32,
}

impl Method for AdaptCl {
    fn name(&self) -> &'static str {
        "adaptcl"
    }

    fn begin_dataset(&mut self, net: &mut Network, _dataset: usize) -> Result<()> {
        net.pruning = PruningMode::Dynamic;
        net.reset_thresholds();
        net.refresh_prune_masks();
        Ok(())
    }

    fn alpha(&self) -> f32 {
        self.alpha
    }

    fn end_dataset(&mut self, net: &mut Network, _dataset: usize, _train: &PreparedDataset) -> Result<()> {
        net.refresh_prune_masks();
        update_freeze_masks(net);
        finalize_dataset(net);
        Ok(())
    }
}

/// Hooks for checks that watch a run from outside.
pub trait SequenceObserver {
    /// After every optimizer step. May mutate the network (fault injection).
    fn on_step(&mut self, _net: &mut Network, _at: StepAt) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _record: &EpochRecord) {}

    /// After a dataset is finished and finalized, before evaluation.
    fn on_dataset_end(&mut self, _net: &Network, _dataset: usize) -> Result<()> {
        Ok(())
    }
}

impl SequenceObserver for () {}

/// One optimizer step on a batch; returns the total loss.
pub fn train_step(
    net: &mut Network,
    opt: &mut Sgd,
    method: &dyn Method,
    x: &Tensor,
    labels: &[usize],
    at: StepAt,
) -> Result<f64> {
    let dynamic = net.pruning == PruningMode::Dynamic;
    if dynamic {
        net.refresh_prune_masks();
    }
    let logits = net.forward(x, Mode::Train)?;
    let (mut loss, grad_logits) = softmax_cross_entropy(&logits, labels)?;
    let mut grads = net.backward(&grad_logits)?;

    let alpha = method.alpha();
    if dynamic && alpha > 0.0 {
        let thresholds: Vec<&Tensor> = net.maskable().map(|(_, m)| &m.threshold).collect();
        let (reg, reg_grads) = pruning::sparse_reg(&thresholds);
        loss += alpha as f64 * reg;
        let layers: Vec<usize> = net.maskable().map(|(i, _)| i).collect();
        for (layer, rg) in layers.into_iter().zip(reg_grads) {
            let g = grads.get_mut(layer, ParamRole::Threshold).expect("maskable layers have thresholds");
            for (a, b) in g.data_mut().iter_mut().zip(rg.data()) {
                *a += alpha * b;
            }
        }
    }
    loss += method.penalty(net, &mut grads)?;
    freeze_gradients(net, &mut grads)?;

    let diverged = |detail: String| Error::Diverged { dataset: at.dataset, epoch: at.epoch, step: at.step, detail };
    if !loss.is_finite() {
        return Err(diverged(format!("loss is {loss}")));
    }
    for (slot, g) in grads.slots.iter().zip(&grads.tensors) {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(diverged(format!("non-finite {:?} gradient in layer {}", slot.role, slot.layer)));
        }
    }
    opt.step(&mut net.params_mut(), &grads.tensors)?;
    if dynamic {
        net.refresh_prune_masks();
    }
    Ok(loss)
}

/// Accuracy on every task's test split, in task order.
pub fn evaluate_all(net: &Network, tasks: &TaskSequence) -> Result<Vec<f64>> {
    let per_task = net.exec.map(tasks.len(), |j| accuracy(net, &tasks.tasks[j].test));
    per_task.into_iter().collect()
}

/// Shuffled mini-batch index lists for one epoch.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, dataset: usize, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, Purpose::Shuffle, (dataset * 1000 + epoch) as u64));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Trains the current dataset for `cfg.epochs_per_dataset` epochs and appends
/// one history record per epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_on_dataset(
    net: &mut Network,
    method: &mut dyn Method,
    tasks: &TaskSequence,
    dataset: usize,
    cfg: &TrainConfig,
    history: &mut Vec<EpochRecord>,
    observer: &mut dyn SequenceObserver,
) -> Result<()> {
    let train = &tasks.tasks[dataset].train;
    if train.is_empty() {
        return Err(Error::Input(format!("dataset {dataset} has no training samples")));
    }
    let mut opt = Sgd::new(cfg.sgd());
    let mut step = 0;
    for epoch in 0..cfg.epochs_per_dataset {
        if method.begin_epoch(net, dataset, epoch)? {
            opt = Sgd::new(cfg.sgd());
        }
        let mut loss_sum = 0.0;
        let batches = epoch_batches(train.len(), cfg.batch_size, cfg.seed, dataset, epoch);
        for idx in &batches {
            let (x, y) = train.batch(idx)?;
            let at = StepAt { dataset, epoch, step };
            loss_sum += train_step(net, &mut opt, &*method, &x, &y, at)?;
            observer.on_step(net, at)?;
            step += 1;
        }
        net.clear_caches();
        let record = EpochRecord {
            dataset_idx: dataset,
            epoch: history.len() + 1,
            train_loss: loss_sum / batches.len() as f64,
            remaining_ratio: net.remaining_ratio(),
            test_accuracy: evaluate_all(net, tasks)?,
        };
        log::debug!(
            "{} dataset {dataset} epoch {}: loss {:.4}, keep {:.3}, acc {:?}",
            method.name(),
            epoch + 1,
            record.train_loss,
            record.remaining_ratio,
            record.test_accuracy
        );
        observer.on_epoch(&record);
        history.push(record);
    }
    Ok(())
}

/// Everything a finished sequence run produced.
#[derive(Debug, Clone)]
pub struct SequenceRunState {
    pub network: Network,
    pub history: Vec<EpochRecord>,
    pub matrix: ResultMatrix,
    /// `count_used` after each dataset.
    pub used_params: Vec<usize>,
    /// Per dataset, per maskable layer: `(layer index, used, total)`.
    pub layer_usage: Vec<Vec<(usize, usize, usize)>>,
}

/// Runs `method` over every task in order and fills the accuracy matrix.
pub fn run_sequence(
    mut net: Network,
    tasks: &TaskSequence,
    cfg: &TrainConfig,
    method: &mut dyn Method,
    observer: &mut dyn SequenceObserver,
) -> Result<SequenceRunState> {
    cfg.validate()?;
    let (shape, classes) = tasks.validate()?;
    if shape != net.input_shape() || classes != net.classes() {
        return Err(Error::Config(format!(
            "sequence provides {shape:?} inputs and {classes} classes, network expects {:?} and {}",
            net.input_shape(),
            net.classes()
        )));
    }
    let mut matrix = ResultMatrix::new(tasks.len());
    matrix.b_bar = evaluate_all(&net, tasks)?;
    let mut history = Vec::new();
    let mut used_params = Vec::new();
    let mut layer_usage = Vec::new();
    for d in 0..tasks.len() {
        method.begin_dataset(&mut net, d)?;
        train_on_dataset(&mut net, method, tasks, d, cfg, &mut history, observer)?;
        method.end_dataset(&mut net, d, &tasks.tasks[d].train)?;
        observer.on_dataset_end(&net, d)?;
        matrix.set_row(d, evaluate_all(&net, tasks)?)?;
        used_params.push(net.count_used());
        layer_usage.push(net.layer_usage());
        log::info!("{} finished dataset {d}: {:?}", method.name(), matrix.r[d]);
    }
    Ok(SequenceRunState { network: net, history, matrix, used_params, layer_usage })
}

/// Snapshot of every weight currently covered by a freeze mask.
pub fn frozen_snapshot(net: &Network) -> Vec<Vec<(usize, u32)>> {
    net.layers
        .iter()
        .map(|l| match l.masked() {
            Some(m) => m
                .freeze_mask
                .bits()
                .iter()
                .enumerate()
                .filter(|(_, &f)| f)
                .map(|(k, _)| (k, m.weight.data()[k].to_bits()))
                .collect(),
            None => Vec::new(),
        })
        .collect()
}

/// True if every weight in `snapshot` still has exactly the recorded bits.
pub fn frozen_unchanged(net: &Network, snapshot: &[Vec<(usize, u32)>]) -> bool {
    net.layers.iter().zip(snapshot).all(|(l, snap)| match l.masked() {
        Some(m) => snap.iter().all(|&(k, bits)| m.weight.data()[k].to_bits() == bits),
        None => snap.is_empty(),
    })
}

/// Batch-norm layers that are frozen, with their four tensors.
pub fn batchnorm_snapshot(net: &Network) -> Vec<Vec<u32>> {
    net.layers
        .iter()
        .filter_map(|l| match l {
            Layer::BatchNorm(b) if b.frozen => Some(
                [&b.gain, &b.shift, &b.running_mean, &b.running_var]
                    .iter()
                    .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
                    .collect(),
            ),
            _ => None,
        })
        .collect()
}
