use serde::{Deserialize, Serialize};

use super::layers::LayerSpec;
use super::network::Network;
use crate::error::{Error, Result};

/// Parameter count of the reference LeNet-5 on 32×32 greyscale input.
pub const LENET5_PARAMS: usize = 61_706;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lenet5,
    ToyMlp,
    ToyCnn,
}

impl ModelKind {
    pub fn build(self, input_shape: &[usize], classes: usize, seed: u64) -> Result<Network> {
        match self {
            ModelKind::Lenet5 => {
                if input_shape != [1, 32, 32] || classes != 10 {
                    return Err(Error::Config(format!(
                        "lenet5 needs 1x32x32 input and 10 classes, got {input_shape:?} / {classes}"
                    )));
                }
                build_lenet5(seed)
            }
            ModelKind::ToyMlp => build_toy_mlp(input_shape, 64, classes, seed),
            ModelKind::ToyCnn => build_toy_cnn(input_shape, classes, seed),
        }
    }
}

/// conv(6@5×5) → pool → conv(16@5×5) → pool → 400 → 120 → 84 → 10, Tanh.
pub fn build_lenet5(seed: u64) -> Result<Network> {
    use LayerSpec::*;
    let specs = vec![
        Conv { in_channels: 1, out_channels: 6, kernel: 5, stride: 1, padding: 0 },
        Tanh,
        MaxPool { size: 2 },
        Conv { in_channels: 6, out_channels: 16, kernel: 5, stride: 1, padding: 0 },
        Tanh,
        MaxPool { size: 2 },
        Flatten,
        Dense { inputs: 400, outputs: 120 },
        Tanh,
        Dense { inputs: 120, outputs: 84 },
        Tanh,
        Dense { inputs: 84, outputs: 10 },
    ];
    Network::new(&[1, 32, 32], specs, seed)
}

pub const TOY_CNN_CHANNELS: usize = 32;
pub const TOY_CNN_HIDDEN: usize = 96;

/// Small ReLU convnet for `[c, s, s]` inputs with even `s`. On the 8×8
/// synthetic tasks with 10 classes it has 50,538 parameters.
pub fn build_toy_cnn(input_shape: &[usize], classes: usize, seed: u64) -> Result<Network> {
    use LayerSpec::*;
    let &[c, h, w] = input_shape else {
        return Err(Error::Config(format!("toy_cnn needs [c, h, w] input, got {input_shape:?}")));
    };
    let channels = TOY_CNN_CHANNELS;
    let flat = channels * (h / 2) * (w / 2);
    let specs = vec![
        Conv { in_channels: c, out_channels: channels, kernel: 3, stride: 1, padding: 1 },
        Relu,
        MaxPool { size: 2 },
        Flatten,
        Dense { inputs: flat, outputs: TOY_CNN_HIDDEN },
        Relu,
        Dense { inputs: TOY_CNN_HIDDEN, outputs: classes },
    ];
    Network::new(input_shape, specs, seed)
}

pub fn build_toy_mlp(input_shape: &[usize], hidden: usize, classes: usize, seed: u64) -> Result<Network> {
    use LayerSpec::*;
    let inputs = input_shape.iter().product();
    let mut specs = Vec::new();
    if input_shape.len() > 1 {
        specs.push(Flatten);
    }
    specs.extend([
        Dense { inputs, outputs: hidden },
        Relu,
        Dense { inputs: hidden, outputs: classes },
    ]);
    Network::new(input_shape, specs, seed)
}
