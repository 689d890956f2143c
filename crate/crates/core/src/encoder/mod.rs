//! Seq2seq phoneme recognizer producing phoneme embeddings.

pub mod inventory;
pub mod model;

pub use inventory::PhonemeInventory;
pub use model::{encoder_features, EncoderConfig, EncoderVariant, PhonemeEmbeddingSeq, SpeechEncoder};
pub mod train;

pub use train::{examples_from_records, finetune_encoder, pretrain_encoder, token_accuracy, EncoderExample};
