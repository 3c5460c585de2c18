pub mod builders;
pub mod checkpoint;
pub mod layers;
pub mod network;

pub use builders::{build_lenet5, build_toy_cnn, build_toy_mlp, ModelKind, LENET5_PARAMS};
pub use layers::{Layer, LayerSpec, MaskUse, MaskedWeights};
pub use network::{Gradients, Mode, Network, ParamRole, ParamSlot, PruningMode};
