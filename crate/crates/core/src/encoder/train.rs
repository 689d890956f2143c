//! Pretraining, fine-tuning and evaluation of the speech encoder.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::inventory::{PhonemeInventory, EOS_TOKEN};
use super::model::{encoder_features, EncoderConfig, EncoderVariant, SpeechEncoder, FEATURE_DIM};
use crate::corpus::UtteranceRecord;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_model, save_model};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::{run_training, ParamStore, Tensor2D, TrainConfig, TrainReport};

pub const CHECKPOINT_KIND: &str = "speech-encoder";

/// One training utterance: encoder features and target tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderExample {
    pub utterance_id: String,
    pub features: Tensor2D,
    pub tokens: Vec<usize>,
}

pub fn examples_from_records<'a>(
    inventory: &PhonemeInventory,
    records: impl IntoIterator<Item = &'a UtteranceRecord>,
) -> Result<Vec<EncoderExample>> {
    records
        .into_iter()
        .map(|r| {
            Ok(EncoderExample {
                utterance_id: r.utterance_id.clone(),
                features: encoder_features(&r.mel)?,
                tokens: inventory.encode(&r.phones)?,
            })
        })
        .collect()
}

fn targets(tokens: &[usize]) -> Vec<usize> {
    tokens.iter().copied().chain([EOS_TOKEN]).collect()
}

impl SpeechEncoder {
    /// Mean token cross-entropy (including `<eos>`) under teacher forcing.
    fn example_loss(&self, store: &ParamStore, ex: &EncoderExample) -> Result<f64> {
        let (probs, _) = self.teacher_forced(store, &ex.features, &ex.tokens)?;
        Ok(softmax_cross_entropy(&probs.map(f64::ln), &targets(&ex.tokens))?.0)
    }

    pub fn loss(&self, examples: &[EncoderExample]) -> Result<f64> {
        mean_loss(self, &self.params, examples)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(
            path,
            CHECKPOINT_KIND,
            &EncoderMeta {
                config: self.config.clone(),
                inventory: self.inventory.clone(),
                variant: self.variant.clone(),
            },
            &self.params,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, params): (EncoderMeta, ParamStore) = load_model(path, CHECKPOINT_KIND)?;
        let enc = Self {
            config: meta.config,
            inventory: meta.inventory,
            variant: meta.variant,
            params,
        };
        let fresh = SpeechEncoder::new(enc.config.clone(), enc.inventory.clone(), 0)?;
        for (name, p) in fresh.params.iter() {
            let got = enc
                .params
                .value(name)
                .map_err(|_| Error::format(path, format!("missing tensor {name}")))?;
            if got.shape() != p.value.shape() {
                return Err(Error::format(path, format!("tensor {name} has shape {:?}", got.shape())));
            }
        }
        Ok(enc)
    }
}

#[derive(Serialize, Deserialize)]
struct EncoderMeta {
    config: EncoderConfig,
    inventory: PhonemeInventory,
    variant: EncoderVariant,
}

fn mean_loss(enc: &SpeechEncoder, store: &ParamStore, examples: &[EncoderExample]) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        total += enc.example_loss(store, ex)?;
    }
    Ok(total / examples.len().max(1) as f64)
}

fn check_examples(enc: &SpeechEncoder, examples: &[EncoderExample]) -> Result<()> {
    for ex in examples {
        if ex.features.cols() != FEATURE_DIM {
            return Err(Error::dims(
                format!("features of {}", ex.utterance_id),
                FEATURE_DIM,
                ex.features.cols(),
            ));
        }
        if ex.tokens.is_empty() {
            return Err(Error::invalid(format!("utterance {} has an empty transcript", ex.utterance_id)));
        }
        if let Some(&t) = ex.tokens.iter().find(|&&t| t < 2 || t >= enc.vocab()) {
            return Err(Error::invalid(format!("token {t} of {} is not a phoneme", ex.utterance_id)));
        }
    }
    Ok(())
}

fn train(enc: &mut SpeechEncoder, examples: &[EncoderExample], config: &TrainConfig) -> Result<TrainReport> {
    check_examples(enc, examples)?;
    let model = enc.clone();
    let step = |store: &mut ParamStore, idx: &[usize]| -> Result<f64> {
        let scale = 1.0 / idx.len() as f64;
        let mut total = 0.0;
        for &i in idx {
            let ex = &examples[i];
            let (probs, cache) = model.teacher_forced(store, &ex.features, &ex.tokens)?;
            let (loss, mut dlogits, _) = softmax_cross_entropy(&probs.map(f64::ln), &targets(&ex.tokens))?;
            dlogits.scale(scale);
            model.teacher_backward(store, cache, &dlogits)?;
            total += loss;
        }
        Ok(total * scale)
    };
    run_training(&mut enc.params, examples.len(), config, step, |store| {
        mean_loss(&model, store, examples)
    })
}

/// Feature mean and standard deviation over all frames.
fn feature_statistics(examples: &[EncoderExample]) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; FEATURE_DIM];
    let mut sq = vec![0.0; FEATURE_DIM];
    let mut n = 0usize;
    for ex in examples {
        for r in 0..ex.features.rows() {
            for (c, &v) in ex.features.row(r).iter().enumerate() {
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        n += ex.features.rows();
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / n - m * m).max(0.0).sqrt())
        .collect();
    (mean, std)
}

/// Trains a fresh encoder on typical speech. Input standardization
/// statistics are taken from the training features.
pub fn pretrain_encoder(
    config: EncoderConfig,
    inventory: PhonemeInventory,
    examples: &[EncoderExample],
    train_config: &TrainConfig,
) -> Result<(SpeechEncoder, TrainReport)> {
    let mut enc = SpeechEncoder::new(config, inventory, train_config.seed)?;
    check_examples(&enc, examples)?;
    let (mean, std) = feature_statistics(examples);
    enc.set_feature_normalization(&mean, &std)?;
    let report = train(&mut enc, examples, train_config)?;
    Ok((enc, report))
}

/// Continues training a pretrained encoder on one speaker's utterances.
/// The base model is left untouched.
pub fn finetune_encoder(
    base: &SpeechEncoder,
    speaker: &str,
    examples: &[EncoderExample],
    train_config: &TrainConfig,
) -> Result<(SpeechEncoder, TrainReport)> {
    let mut enc = base.clone();
    enc.params.reseed(train_config.seed);
    enc.variant = EncoderVariant::FineTuned {
        speaker: speaker.to_string(),
    };
    let report = train(&mut enc, examples, train_config)?;
    Ok((enc, report))
}

/// Fraction of transcript tokens whose teacher-forced argmax is correct.
pub fn token_accuracy(enc: &SpeechEncoder, examples: &[EncoderExample]) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for ex in examples {
        let (probs, _) = enc.teacher_forced(&enc.params, &ex.features, &ex.tokens)?;
        for (r, &t) in ex.tokens.iter().enumerate() {
            let row = probs.row(r);
            let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
            hit += usize::from(best == t);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_inventory, generate_typical_corpus, TextConfig};
    use crate::nn::OptimizerConfig;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            conv_channels: vec![8, 8],
            conv_pool: vec![true, true],
            conv_kernel: 3,
            blstm_units: 8,
            blstm_layers: 1,
            attention_dim: 8,
            attention_kernel: 5,
            decoder_units: 16,
            decoder_layers: 1,
        }
    }

    #[test]
    fn single_batch_overfit_and_checkpoint_roundtrip() {
        let c = generate_typical_corpus(1, 2, &default_inventory(), &TextConfig::default(), 3).unwrap();
        let ex = examples_from_records(&c.inventory, &c.records).unwrap();
        let cfg = TrainConfig::new(150, 2, OptimizerConfig::adam().with_lr(1e-2), 1);
        let (enc, report) = pretrain_encoder(tiny_config(), c.inventory.clone(), &ex, &cfg).unwrap();
        assert!(report.reduction() >= 0.8, "{} -> {}", report.initial_loss, report.final_loss);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        enc.save(&path).unwrap();
        let back = SpeechEncoder::load(&path).unwrap();
        assert_eq!(back, enc);
        assert!(crate::nn::checkpoint::load_model::<serde_json::Value>(&path, "speaker-encoder").is_err());
    }

    #[test]
    fn finetune_leaves_base_untouched() {
        let c = generate_typical_corpus(1, 1, &default_inventory(), &TextConfig::default(), 3).unwrap();
        let ex = examples_from_records(&c.inventory, &c.records).unwrap();
        let base = SpeechEncoder::new(tiny_config(), c.inventory.clone(), 2).unwrap();
        let snapshot = base.clone();
        let cfg = TrainConfig::new(3, 1, OptimizerConfig::adadelta(), 1);
        let (ft, _) = finetune_encoder(&base, "spk00", &ex, &cfg).unwrap();
        assert_eq!(base, snapshot);
        assert_ne!(ft.params, base.params);
        assert_eq!(ft.variant, EncoderVariant::FineTuned { speaker: "spk00".into() });
    }
}
