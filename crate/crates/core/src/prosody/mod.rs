//! Duration and F0 prediction from phoneme embeddings.

pub mod alignment;
pub mod predictor;

pub use predictor::{
    expand_embeddings, train_duration_predictor, train_f0_predictor, ProsodyConfig, ProsodyPredictor,
    ProsodyTraining, TargetKind,
};
