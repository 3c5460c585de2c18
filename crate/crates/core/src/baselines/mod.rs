//! Reference learners sharing the trainer's sequence loop and result schema.

pub mod ewc;
pub mod packnet;
pub mod sgd;
pub mod sml;

pub use ewc::{consolidate_ewc, ewc_penalty, train_ewc, Ewc, FisherState};
pub use packnet::{packnet_prune, train_packnet_star, PackNetStar};
pub use sgd::{train_sgd_naive, NaiveSgd};
pub use sml::{train_sml, train_sml_models};
