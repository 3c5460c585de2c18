//! Stochastic gradient descent with (Nesterov) momentum.
//!
//! Update rule, per parameter:
//!
//! ```text
//! v ← μ·v + g
//! u ← μ·v + g   (nesterov)    |    u ← v   (classic)
//! w ← w − lr·u
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub nesterov: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            nesterov: true,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Optimizer state: one velocity buffer per parameter tensor, created lazily.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    /// Applies one update to `params[i]` using `grads[i]`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            p.same_shape(g)?;
            g.check_finite("gradient")?;
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            if v.shape() != p.shape() {
                return Err(Error::State(
                    "parameter layout changed under a live optimizer".into(),
                ));
            }
            sgd_step(p, g, v, &self.config);
        }
        Ok(())
    }
}

/// Single-tensor update; shapes must already agree.
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, velocity: &mut Tensor, cfg: &SgdConfig) {
    let (mu, lr) = (cfg.momentum, cfg.learning_rate);
    for ((w, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        *v = mu * *v + g;
        let update = if cfg.nesterov { mu * *v + g } else { *v };
        *w -= lr * update;
    }
}
