//! Duration and F0 predictors: BGRU stack → convs (5, 9, 19) → scalar
//! projection, regressing log-duration per phoneme or log-F0 per frame.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::f0::F0Contour;
use crate::encoder::inventory::PhonemeInventory;
use crate::encoder::model::PhonemeEmbeddingSeq;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_model, save_model};
use crate::nn::{
    backward_cached, forward, forward_cached, init_layer, l1_loss, run_training, Activation, LayerSpec, ParamStore,
    Tensor2D, TrainConfig, TrainReport,
};

pub const CONV_KERNELS: [usize; 3] = [5, 9, 19];
pub const CHECKPOINT_KIND: &str = "prosody-predictor";
const OFFSET: &str = "offset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProsodyConfig {
    pub gru_units: usize,
    pub gru_layers: usize,
    pub conv_channels: usize,
    pub conv_kernels: Vec<usize>,
}

impl Default for ProsodyConfig {
    fn default() -> Self {
        Self {
            gru_units: 32,
            gru_layers: 1,
            conv_channels: 32,
            conv_kernels: CONV_KERNELS.to_vec(),
        }
    }
}

impl ProsodyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_kernels != CONV_KERNELS {
            return Err(Error::Config(format!(
                "prosody conv kernels must be {CONV_KERNELS:?}, got {:?}",
                self.conv_kernels
            )));
        }
        if self.gru_units == 0 || self.gru_layers == 0 || self.conv_channels == 0 {
            return Err(Error::Config("prosody layer sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    Duration,
    F0,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyPredictor {
    pub config: ProsodyConfig,
    pub target: TargetKind,
    pub inventory: PhonemeInventory,
    pub params: ParamStore,
}

/// Input rows (phoneme embeddings or expanded frames) and log-domain targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyExample {
    pub utterance_id: String,
    pub input: Tensor2D,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyTraining {
    pub predictor: ProsodyPredictor,
    pub report: TrainReport,
    /// Utterances left out of training, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Repeats row `i` of `emb` `durations[i]` times.
pub fn expand_embeddings(emb: &Tensor2D, durations: &[usize]) -> Result<Tensor2D> {
    if emb.rows() != durations.len() {
        return Err(Error::dims("expand_embeddings durations", emb.rows(), durations.len()));
    }
    let frames: usize = durations.iter().sum();
    let mut out = Tensor2D::zeros(frames, emb.cols());
    let mut t = 0;
    for (i, &d) in durations.iter().enumerate() {
        for _ in 0..d {
            out.row_mut(t).copy_from_slice(emb.row(i));
            t += 1;
        }
    }
    Ok(out)
}

impl ProsodyPredictor {
    pub fn new(config: ProsodyConfig, target: TargetKind, inventory: PhonemeInventory, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = Self {
            config,
            target,
            inventory,
            params: ParamStore::new(seed),
        };
        let mut store = ParamStore::new(seed);
        for spec in p.layers() {
            init_layer(&spec, &mut store)?;
        }
        store.insert(OFFSET, Tensor2D::zeros(1, 1));
        store.set_trainable(OFFSET, false)?;
        p.params = store;
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.inventory.size()
    }

    fn layers(&self) -> Vec<LayerSpec> {
        let c = &self.config;
        let mut v = vec![LayerSpec::bgru("bgru", self.input_dim(), c.gru_units, c.gru_layers)];
        let mut width = 2 * c.gru_units;
        for (i, &k) in c.conv_kernels.iter().enumerate() {
            v.push(LayerSpec::conv1d(&format!("conv{i}"), width, c.conv_channels, k, Activation::Relu));
            width = c.conv_channels;
        }
        v.push(LayerSpec::fully_connected("out", width, 1, Activation::Identity));
        v
    }

    fn offset(&self, store: &ParamStore) -> Result<f64> {
        Ok(store.value(OFFSET)?.get(0, 0))
    }

    fn check_input(&self, x: &Tensor2D) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::dims("prosody predictor input", self.input_dim(), x.cols()));
        }
        Ok(())
    }

    fn forward_with(&self, store: &ParamStore, x: &Tensor2D) -> Result<Tensor2D> {
        self.check_input(x)?;
        if x.rows() == 0 {
            return Ok(Tensor2D::zeros(0, 1));
        }
        let mut h = x.clone();
        for spec in self.layers() {
            h = forward(&spec, store, &h)?;
        }
        let off = self.offset(store)?;
        Ok(h.map(|v| v + off))
    }

    /// Raw log-domain predictions, one per input row.
    pub fn forward(&self, x: &Tensor2D) -> Result<Vec<f64>> {
        Ok(self.forward_with(&self.params, x)?.into_vec())
    }

    fn example_loss(&self, store: &ParamStore, ex: &ProsodyExample) -> Result<f64> {
        let pred = self.forward_with(store, &ex.input)?;
        Ok(l1_loss(&pred, &target_tensor(&ex.target)?)?.0)
    }

    fn loss_and_backward(&self, store: &mut ParamStore, ex: &ProsodyExample, scale: f64) -> Result<f64> {
        let layers = self.layers();
        let mut h = ex.input.clone();
        let mut caches = Vec::with_capacity(layers.len());
        for spec in &layers {
            let (y, cache) = forward_cached(spec, store, &h)?;
            caches.push(cache);
            h = y;
        }
        let off = self.offset(store)?;
        let pred = h.map(|v| v + off);
        let (loss, mut g) = l1_loss(&pred, &target_tensor(&ex.target)?)?;
        g.scale(scale);
        for (spec, cache) in layers.iter().zip(caches).rev() {
            g = backward_cached(spec, store, &cache, &g)?;
        }
        Ok(loss)
    }

    /// Mean per-utterance L1 in the log domain.
    pub fn loss(&self, examples: &[ProsodyExample]) -> Result<f64> {
        mean_loss(self, &self.params, examples)
    }

    /// Per-phoneme durations: exp of the prediction, rounded, at least 1.
    pub fn predict_durations(&self, emb: &PhonemeEmbeddingSeq) -> Result<Vec<usize>> {
        self.expect(TargetKind::Duration)?;
        Ok(self
            .forward(&emb.probs)?
            .into_iter()
            .map(|v| (v.exp().round() as usize).max(1))
            .collect())
    }

    /// Per-frame log-F0; voicing follows the most likely phoneme of each frame.
    pub fn predict_f0(&self, expanded: &Tensor2D) -> Result<F0Contour> {
        self.expect(TargetKind::F0)?;
        let log_f0 = self.forward(expanded)?;
        let voiced = (0..expanded.rows())
            .map(|r| {
                let row = expanded.row(r);
                let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
                self.inventory.is_voiced_token(best)
            })
            .collect();
        Ok(F0Contour { log_f0, voiced })
    }

    fn expect(&self, kind: TargetKind) -> Result<()> {
        if self.target != kind {
            return Err(Error::invalid(format!("predictor was trained for {:?}, not {kind:?}", self.target)));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(
            path,
            CHECKPOINT_KIND,
            &ProsodyMeta {
                config: self.config.clone(),
                target: self.target,
                inventory: self.inventory.clone(),
            },
            &self.params,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, params): (ProsodyMeta, ParamStore) = load_model(path, CHECKPOINT_KIND)?;
        meta.config.validate()?;
        Ok(Self {
            config: meta.config,
            target: meta.target,
            inventory: meta.inventory,
            params,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ProsodyMeta {
    config: ProsodyConfig,
    target: TargetKind,
    inventory: PhonemeInventory,
}

fn target_tensor(t: &[f64]) -> Result<Tensor2D> {
    Tensor2D::from_vec(t.len(), 1, t.to_vec())
}

fn mean_loss(p: &ProsodyPredictor, store: &ParamStore, examples: &[ProsodyExample]) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        total += p.example_loss(store, ex)?;
    }
    Ok(total / examples.len().max(1) as f64)
}

fn train(
    config: ProsodyConfig,
    target: TargetKind,
    inventory: PhonemeInventory,
    examples: Vec<ProsodyExample>,
    skipped: Vec<(String, String)>,
    train_config: &TrainConfig,
) -> Result<ProsodyTraining> {
    let mut predictor = ProsodyPredictor::new(config, target, inventory, train_config.seed)?;
    for ex in &examples {
        predictor.check_input(&ex.input)?;
    }
    let n: usize = examples.iter().map(|e| e.target.len()).sum();
    let mean = examples.iter().flat_map(|e| &e.target).sum::<f64>() / n.max(1) as f64;
    predictor.params.value_mut(OFFSET)?.set(0, 0, mean);
    let model = predictor.clone();
    let report = run_training(
        &mut predictor.params,
        examples.len(),
        train_config,
        |store, idx| {
            let scale = 1.0 / idx.len() as f64;
            let mut total = 0.0;
            for &i in idx {
                total += model.loss_and_backward(store, &examples[i], scale)?;
            }
            Ok(total * scale)
        },
        |store| mean_loss(&model, store, &examples),
    )?;
    Ok(ProsodyTraining {
        predictor,
        report,
        skipped,
    })
}

/// Trains on (phoneme embeddings, ground-truth durations) pairs with L1 on
/// log-duration. Empty utterances and zero-frame phonemes are skipped.
pub fn train_duration_predictor(
    config: ProsodyConfig,
    inventory: PhonemeInventory,
    pairs: &[(String, PhonemeEmbeddingSeq, Vec<usize>)],
    train_config: &TrainConfig,
) -> Result<ProsodyTraining> {
    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    for (id, emb, dur) in pairs {
        if emb.tokens() != dur.len() {
            return Err(Error::dims(format!("durations of {id}"), emb.tokens(), dur.len()));
        }
        if dur.is_empty() || dur.contains(&0) {
            log::warn!("skipping {id}: zero-length phoneme or utterance");
            skipped.push((id.clone(), "zero-length".to_string()));
            continue;
        }
        examples.push(ProsodyExample {
            utterance_id: id.clone(),
            input: emb.probs.clone(),
            target: dur.iter().map(|&d| (d as f64).ln()).collect(),
        });
    }
    train(config, TargetKind::Duration, inventory, examples, skipped, train_config)
}

/// Trains on (expanded embeddings, F0 contour) pairs with L1 on log-F0 over
/// all frames. Pairs whose frame counts disagree are skipped and reported.
pub fn train_f0_predictor(
    config: ProsodyConfig,
    inventory: PhonemeInventory,
    pairs: &[(String, Tensor2D, F0Contour)],
    train_config: &TrainConfig,
) -> Result<ProsodyTraining> {
    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    for (id, expanded, f0) in pairs {
        if expanded.rows() != f0.frames() || expanded.rows() == 0 {
            log::warn!("skipping {id}: {} embedding frames vs {} F0 frames", expanded.rows(), f0.frames());
            skipped.push((
                id.clone(),
                format!("frame mismatch: {} vs {}", expanded.rows(), f0.frames()),
            ));
            continue;
        }
        examples.push(ProsodyExample {
            utterance_id: id.clone(),
            input: expanded.clone(),
            target: f0.log_f0.clone(),
        });
    }
    train(config, TargetKind::F0, inventory, examples, skipped, train_config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OptimizerConfig;

    fn inv() -> PhonemeInventory {
        PhonemeInventory::new(vec![("a".into(), true), ("s".into(), false), ("o".into(), true)]).unwrap()
    }

    fn onehot(tokens: &[usize], v: usize) -> PhonemeEmbeddingSeq {
        let mut p = Tensor2D::zeros(tokens.len(), v);
        for (r, &t) in tokens.iter().enumerate() {
            p.set(r, t, 1.0);
        }
        PhonemeEmbeddingSeq {
            probs: p,
            truncated: false,
        }
    }

    fn small() -> ProsodyConfig {
        ProsodyConfig {
            gru_units: 8,
            conv_channels: 8,
            ..ProsodyConfig::default()
        }
    }

    #[test]
    fn expansion_follows_definition() {
        let e = Tensor2D::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let x = expand_embeddings(&e, &[2, 0, 3]).unwrap();
        assert_eq!(x.rows(), 5);
        assert_eq!(x.row(1), &[1.0, 2.0]);
        assert_eq!(x.row(2), &[5.0, 6.0]);
        assert_eq!(expand_embeddings(&e, &[1, 1, 1]).unwrap(), e);
        assert!(expand_embeddings(&e, &[1, 1]).is_err());
    }

    #[test]
    fn fixed_class_durations_are_recovered() {
        let class_dur = [0usize, 0, 4, 9, 6];
        let mut rng_state = 1u64;
        let mut pairs = Vec::new();
        for u in 0..6 {
            let tokens: Vec<usize> = (0..8)
                .map(|_| {
                    rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    2 + (rng_state >> 33) as usize % 3
                })
                .collect();
            let dur = tokens.iter().map(|&t| class_dur[t]).collect();
            pairs.push((format!("u{u}"), onehot(&tokens, 5), dur));
        }
        pairs.push(("empty".into(), onehot(&[], 5), vec![]));
        let cfg = TrainConfig::new(400, 3, OptimizerConfig::adam().with_lr(1e-2), 4);
        let t = train_duration_predictor(small(), inv(), &pairs, &cfg).unwrap();
        assert_eq!(t.skipped.len(), 1);
        for (_, emb, dur) in pairs.iter().take(6) {
            let pred = t.predictor.predict_durations(emb).unwrap();
            for (p, d) in pred.iter().zip(dur) {
                assert!(p.abs_diff(*d) <= 1, "{pred:?} vs {dur:?}");
            }
        }
        assert!(t.predictor.predict_f0(&pairs[0].1.probs).is_err());
    }

    #[test]
    fn f0_predictor_voicing_and_mismatch() {
        let emb = onehot(&[2, 3, 4], 5);
        let expanded = expand_embeddings(&emb.probs, &[3, 2, 4]).unwrap();
        let f0 = F0Contour {
            log_f0: vec![5.0; 9],
            voiced: vec![true; 9],
        };
        let bad = F0Contour {
            log_f0: vec![5.0; 4],
            voiced: vec![true; 4],
        };
        let pairs = vec![("a".into(), expanded.clone(), f0), ("b".into(), expanded.clone(), bad)];
        let cfg = TrainConfig::new(5, 1, OptimizerConfig::adam(), 4);
        let t = train_f0_predictor(small(), inv(), &pairs, &cfg).unwrap();
        assert_eq!(t.skipped.len(), 1);
        let out = t.predictor.predict_f0(&expanded).unwrap();
        assert_eq!(out.frames(), 9);
        assert_eq!(
            out.voiced,
            vec![true, true, true, false, false, true, true, true, true]
        );
        assert_eq!(out, t.predictor.predict_f0(&expanded).unwrap());
    }

    #[test]
    fn checkpoint_roundtrip_and_kernel_validation() {
        let p = ProsodyPredictor::new(small(), TargetKind::F0, inv(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        p.save(&path).unwrap();
        assert_eq!(ProsodyPredictor::load(&path).unwrap(), p);
        let bad = ProsodyConfig {
            conv_kernels: vec![3, 3, 3],
            ..small()
        };
        assert!(ProsodyPredictor::new(bad, TargetKind::F0, inv(), 3).is_err());
    }
}
