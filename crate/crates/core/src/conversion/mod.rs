//! Conditioned mel generator, its training regimes and full conversion.

pub mod convert;
pub mod model;

pub use convert::{convert_utterance, ConversionInputs, ConversionOutput, ConversionPipeline, ProsodyMode};
pub use model::{
    adapt_speaker, conversion_forward, pretrain_ada_cm, train_enc_cm, AdaptMode, ConditionedInput, ConversionConfig,
    ConversionExample, ConversionModel, ConversionTraining, ConversionVariant,
};
