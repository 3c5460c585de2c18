use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerGrads, LayerSpec, MaskUse, MaskedWeights};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::pruning;
use crate::rng::{substream, Purpose};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How prune masks evolve during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PruningMode {
    /// Masks are set by the caller and held fixed; thresholds receive no gradient.
    Static,
    /// Masks follow `S(|W| - t)` and thresholds are trained.
    Dynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    Threshold,
    Gain,
    Shift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamSlot {
    pub layer: usize,
    pub role: ParamRole,
}

/// Gradients for every trainable tensor, in [`Network::param_slots`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub slots: Vec<ParamSlot>,
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, layer: usize, role: ParamRole) -> Option<&Tensor> {
        self.position(layer, role).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, layer: usize, role: ParamRole) -> Option<&mut Tensor> {
        self.position(layer, role).map(move |i| &mut self.tensors[i])
    }

    fn position(&self, layer: usize, role: ParamRole) -> Option<usize> {
        self.slots.iter().position(|s| s.layer == layer && s.role == role)
    }

    pub fn all_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|&v| v == 0.0))
    }
}

/// Sequential network with a single shared classification head.
#[derive(Debug, Clone)]
pub struct Network {
    specs: Vec<LayerSpec>,
    pub layers: Vec<Layer>,
    input_shape: Vec<usize>,
    classes: usize,
    pub pruning: PruningMode,
    pub exec: Exec,
}

impl Network {
    /// Builds the stack for per-sample `input_shape`, initialising weights
    /// from the `Init` substream of `seed`.
    pub fn new(input_shape: &[usize], specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, Purpose::Init, 0);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in &specs {
            let (layer, out) = Layer::build(spec, &shape, &mut rng)?;
            layers.push(layer);
            shape = out;
        }
        let classes = match (shape.as_slice(), specs.last()) {
            (&[k], Some(LayerSpec::Dense { .. })) if k > 0 => k,
            _ => {
                return Err(Error::Config(format!(
                    "network must end in a single dense head, final output is {shape:?}"
                )))
            }
        };
        Ok(Self {
            specs,
            layers,
            input_shape: input_shape.to_vec(),
            classes,
            pruning: PruningMode::Static,
            exec: Exec::default(),
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() == 0 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::Dimension(format!(
                "network expects [B, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Logits for a batch. Train mode caches activations for [`Network::backward`].
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Eval => self.infer(x),
            Mode::Train => {
                self.check_input(x)?;
                let exec = self.exec;
                let mut h = x.clone();
                for layer in &mut self.layers {
                    h = layer.forward(h, true, MaskUse::Masked, exec)?;
                }
                Ok(h)
            }
        }
    }

    /// Eval-mode logits with masks applied. Read-only.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.infer_with(x, MaskUse::Masked)
    }

    /// Eval-mode logits using the raw weights, ignoring every mask.
    pub fn infer_dense(&self, x: &Tensor) -> Result<Tensor> {
        self.infer_with(x, MaskUse::Dense)
    }

    fn infer_with(&self, x: &Tensor, use_mask: MaskUse) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(h, use_mask, self.exec)?;
        }
        Ok(h)
    }

    /// Argmax class per row; ties go to the lowest index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.infer(x)?;
        Ok(logits
            .data()
            .chunks(self.classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
            })
            .collect())
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn param_slots(&self) -> Vec<ParamSlot> {
        let mut slots = Vec::new();
        for (layer, l) in self.layers.iter().enumerate() {
            let roles: &[ParamRole] = match l {
                Layer::Dense(_) | Layer::Conv(_) => &[ParamRole::Weight, ParamRole::Bias, ParamRole::Threshold],
                Layer::BatchNorm(_) => &[ParamRole::Gain, ParamRole::Shift],
                _ => &[],
            };
            slots.extend(roles.iter().map(|&role| ParamSlot { layer, role }));
        }
        slots
    }

    /// Trainable tensors in [`Network::param_slots`] order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Dense(d) => out.extend([&mut d.params.weight, &mut d.params.bias, &mut d.params.threshold]),
                Layer::Conv(c) => out.extend([&mut c.params.weight, &mut c.params.bias, &mut c.params.threshold]),
                Layer::BatchNorm(b) => out.extend([&mut b.gain, &mut b.shift]),
                _ => {}
            }
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Dense(d) => out.extend([&d.params.weight, &d.params.bias, &d.params.threshold]),
                Layer::Conv(c) => out.extend([&c.params.weight, &c.params.bias, &c.params.threshold]),
                Layer::BatchNorm(b) => out.extend([&b.gain, &b.shift]),
                _ => {}
            }
        }
        out
    }

    /// Backpropagates `grad_logits` through the cached train-mode forward.
    ///
    /// Weight gradients of maskable layers are routed through the prune mask
    /// according to [`Network::pruning`]. Freeze masks are not applied here.
    pub fn backward(&mut self, grad_logits: &Tensor) -> Result<Gradients> {
        let exec = self.exec;
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut grad = grad_logits.clone();
        for layer in self.layers.iter_mut().rev() {
            let (dx, g) = layer.backward(grad, exec)?;
            per_layer.push(g);
            grad = dx;
        }
        per_layer.reverse();

        let mut tensors = Vec::new();
        for (layer, g) in self.layers.iter().zip(per_layer) {
            match g {
                LayerGrads::None => {}
                LayerGrads::Masked { grad_eff, bias } => {
                    let p = layer.masked().expect("masked grads come from maskable layers");
                    let (gw, gt) = route_weight_grad(p, &grad_eff, self.pruning)?;
                    tensors.extend([gw, bias, gt]);
                }
                LayerGrads::Norm { gain, shift } => tensors.extend([gain, shift]),
            }
        }
        Ok(Gradients { slots: self.param_slots(), tensors })
    }

    pub fn maskable(&self) -> impl Iterator<Item = (usize, &MaskedWeights)> {
        self.layers.iter().enumerate().filter_map(|(i, l)| l.masked().map(|m| (i, m)))
    }

    pub fn maskable_mut(&mut self) -> impl Iterator<Item = (usize, &mut MaskedWeights)> {
        self.layers.iter_mut().enumerate().filter_map(|(i, l)| l.masked_mut().map(|m| (i, m)))
    }

    pub fn refresh_prune_masks(&mut self) {
        self.maskable_mut().for_each(|(_, m)| m.refresh_prune_mask());
    }

    pub fn reset_thresholds(&mut self) {
        self.maskable_mut().for_each(|(_, m)| m.threshold.fill(0.0));
    }

    /// All trainable parameters: weights, biases and normalisation affine terms.
    /// Thresholds are pruning state, not model parameters, and are excluded.
    pub fn count_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => d.params.weight.len() + d.params.bias.len(),
                Layer::Conv(c) => c.params.weight.len() + c.params.bias.len(),
                Layer::BatchNorm(b) => b.gain.len() + b.shift.len(),
                _ => 0,
            })
            .sum()
    }

    /// Weights with an active prune or freeze mask plus every non-maskable parameter.
    pub fn count_used(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => d.params.used_weights() + d.params.bias.len(),
                Layer::Conv(c) => c.params.used_weights() + c.params.bias.len(),
                Layer::BatchNorm(b) => b.gain.len() + b.shift.len(),
                _ => 0,
            })
            .sum()
    }

    /// Active fraction over all maskable weights.
    pub fn remaining_ratio(&self) -> f64 {
        let (active, total) = self
            .maskable()
            .fold((0, 0), |(a, t), (_, m)| (a + m.used_weights(), t + m.weight.len()));
        if total == 0 {
            1.0
        } else {
            active as f64 / total as f64
        }
    }

    /// Per maskable layer: `(layer index, used weights, total weights)`.
    pub fn layer_usage(&self) -> Vec<(usize, usize, usize)> {
        self.maskable().map(|(i, m)| (i, m.used_weights(), m.weight.len())).collect()
    }

    pub fn freeze_popcounts(&self) -> Vec<usize> {
        self.maskable().map(|(_, m)| m.freeze_mask.count_ones()).collect()
    }

    pub fn freeze_batchnorm(&mut self) {
        for l in &mut self.layers {
            if let Layer::BatchNorm(b) = l {
                b.frozen = true;
            }
        }
    }
}

fn route_weight_grad(p: &MaskedWeights, grad_eff: &Tensor, mode: PruningMode) -> Result<(Tensor, Tensor)> {
    match mode {
        PruningMode::Dynamic => {
            pruning::masked_backward(grad_eff, &p.weight, &p.threshold, &p.prune_mask, &p.freeze_mask)
        }
        PruningMode::Static => {
            let data = grad_eff
                .data()
                .iter()
                .enumerate()
                .map(|(k, &g)| if p.is_active(k) { g } else { 0.0 })
                .collect();
            Ok((
                Tensor::new(grad_eff.shape().to_vec(), data)?,
                Tensor::zeros(p.threshold.shape()),
            ))
        }
    }
}
