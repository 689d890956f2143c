//! Minimal layer library with explicit forward/backward passes.

pub mod attention;
pub mod checkpoint;
mod dense;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod recurrent;
pub mod spec;
pub mod tensor;
pub mod train;

pub use attention::LocationAttention;
pub use checkpoint::Checkpoint;
pub use layers::{backward, backward_cached, forward, forward_cached, init_layer, LayerCache};
pub use loss::l1_loss;
pub use optim::{Algorithm, OptimizerConfig, OptimizerState};
pub use params::{Param, ParamStore};
pub use spec::{Activation, LayerKind, LayerSpec};
pub use tensor::Tensor2D;
pub use train::{run_training, run_training_with, TrainConfig, TrainReport};
