//! Frame-level generator f(p, v; W, e): FC → FC → BLSTM → FC to 80 bands.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::language::MEL_BANDS;
use crate::dsp::f0::F0Contour;
use crate::dsp::mel::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_model, save_model};
use crate::nn::{
    backward_cached, forward, forward_cached, init_layer, l1_loss, run_training, Activation, LayerSpec, ParamStore,
    Tensor2D, TrainConfig, TrainReport,
};
use crate::speaker::{EmbeddingSource, EmbeddingTable, SpeakerEmbedding};
use crate::util::derive_seed;

pub const CHECKPOINT_KIND: &str = "conversion-model";
const OUT_MEAN: &str = "norm/out_mean";
const OUT_STD: &str = "norm/out_std";
const F0_STATS: &str = "norm/f0";
const TABLE_PREFIX: &str = "table/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConversionConfig {
    pub fc_units: usize,
    pub blstm_units: usize,
    pub blstm_layers: usize,
    pub embedding_dim: usize,
    /// Training crop length in frames.
    pub crop_frames: usize,
}

impl Default for ConversionConfig {
    fn default() -> Self {
        Self {
            fc_units: 128,
            blstm_units: 64,
            blstm_layers: 1,
            embedding_dim: 256,
            crop_frames: 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum ConversionVariant {
    /// Trained with speaker-encoder embeddings.
    EncCm,
    /// Jointly trained with an embedding table.
    AdaCmPretrained,
    /// Adapted to one new speaker.
    AdaCmAdapted { speaker: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptMode {
    Joint,
    EmbeddingOnly,
}

/// Frames × (p ‖ [log-F0, voicing] ‖ e).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedInput {
    pub values: Tensor2D,
    pub p_dim: usize,
    pub e_dim: usize,
}

impl ConditionedInput {
    pub fn new(expanded: &Tensor2D, f0: &F0Contour, dse: &[f64]) -> Result<Self> {
        if expanded.rows() != f0.frames() {
            return Err(Error::dims("conditioning F0 frames", expanded.rows(), f0.frames()));
        }
        if dse.is_empty() {
            return Err(Error::invalid("speaker embedding is empty"));
        }
        let p = expanded.cols();
        let mut values = Tensor2D::zeros(expanded.rows(), p + 2 + dse.len());
        for t in 0..expanded.rows() {
            let row = values.row_mut(t);
            row[..p].copy_from_slice(expanded.row(t));
            row[p] = f0.log_f0[t];
            row[p + 1] = if f0.voiced[t] { 1.0 } else { 0.0 };
            row[p + 2..].copy_from_slice(dse);
        }
        Ok(Self {
            values,
            p_dim: p,
            e_dim: dse.len(),
        })
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }
}

/// One utterance of conversion training data.
#[derive(Debug, Clone, PartialEq)]
pub struct ConversionExample {
    pub utterance_id: String,
    pub speaker_id: String,
    pub expanded: Tensor2D,
    pub f0: F0Contour,
    pub target: MelSpectrogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionModel {
    pub config: ConversionConfig,
    pub variant: ConversionVariant,
    pub p_dim: usize,
    pub params: ParamStore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionTraining {
    pub model: ConversionModel,
    pub report: TrainReport,
    pub skipped: Vec<(String, String)>,
}

fn table_name(speaker: &str) -> String {
    format!("{TABLE_PREFIX}{speaker}")
}

impl ConversionModel {
    pub fn new(config: ConversionConfig, p_dim: usize, variant: ConversionVariant, seed: u64) -> Result<Self> {
        if config.fc_units == 0 || config.blstm_units == 0 || config.blstm_layers == 0 || config.embedding_dim == 0 {
            return Err(Error::Config("conversion model sizes must be positive".into()));
        }
        let mut m = Self {
            config,
            variant,
            p_dim,
            params: ParamStore::new(seed),
        };
        let mut store = ParamStore::new(seed);
        for spec in m.layers() {
            init_layer(&spec, &mut store)?;
        }
        for (name, value) in [
            (OUT_MEAN, Tensor2D::zeros(1, MEL_BANDS)),
            (OUT_STD, Tensor2D::filled(1, MEL_BANDS, 1.0)),
            (F0_STATS, Tensor2D::from_vec(1, 2, vec![0.0, 1.0])?),
        ] {
            store.insert(name, value);
            store.set_trainable(name, false)?;
        }
        m.params = store;
        Ok(m)
    }

    pub fn input_dim(&self) -> usize {
        self.p_dim + 2 + self.config.embedding_dim
    }

    fn layers(&self) -> Vec<LayerSpec> {
        let c = &self.config;
        vec![
            LayerSpec::fully_connected("cm/fc0", self.input_dim(), c.fc_units, Activation::Relu),
            LayerSpec::fully_connected("cm/fc1", c.fc_units, c.fc_units, Activation::Relu),
            LayerSpec::blstm("cm/blstm", c.fc_units, c.blstm_units, c.blstm_layers),
            LayerSpec::fully_connected("cm/out", 2 * c.blstm_units, MEL_BANDS, Activation::Identity),
        ]
    }

    fn check(&self, cond: &ConditionedInput) -> Result<()> {
        if cond.values.cols() != self.input_dim() {
            return Err(Error::dims("conditioned input width", self.input_dim(), cond.values.cols()));
        }
        if cond.frames() == 0 {
            return Err(Error::invalid("conditioned input has no frames"));
        }
        Ok(())
    }

    /// Standardizes the log-F0 channel.
    fn prepare(&self, store: &ParamStore, x: &Tensor2D) -> Result<Tensor2D> {
        let st = store.value(F0_STATS)?.row(0);
        let (mean, std) = (st[0], st[1]);
        let mut y = x.clone();
        for t in 0..y.rows() {
            let v = &mut y.row_mut(t)[self.p_dim];
            *v = (*v - mean) / std;
        }
        Ok(y)
    }

    fn denormalize(&self, store: &ParamStore, y: &Tensor2D) -> Result<Tensor2D> {
        let mean = store.value(OUT_MEAN)?.row(0);
        let std = store.value(OUT_STD)?.row(0);
        let mut out = y.clone();
        for t in 0..out.rows() {
            for ((v, m), s) in out.row_mut(t).iter_mut().zip(mean).zip(std) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }

    fn forward_with(&self, store: &ParamStore, x: &Tensor2D) -> Result<Tensor2D> {
        let mut h = self.prepare(store, x)?;
        for spec in self.layers() {
            h = forward(&spec, store, &h)?;
        }
        self.denormalize(store, &h)
    }

    /// Mel prediction with the same frame count as the input.
    pub fn forward(&self, cond: &ConditionedInput) -> Result<MelSpectrogram> {
        self.check(cond)?;
        Ok(MelSpectrogram::new(self.forward_with(&self.params, &cond.values)?))
    }

    /// L1 loss against `target`, backpropagated with weight `scale`.
    /// Returns the loss and dL/d(input).
    fn loss_and_backward(
        &self,
        store: &mut ParamStore,
        x: &Tensor2D,
        target: &Tensor2D,
        scale: f64,
    ) -> Result<(f64, Tensor2D)> {
        let layers = self.layers();
        let mut h = self.prepare(store, x)?;
        let mut caches = Vec::with_capacity(layers.len());
        for spec in &layers {
            let (y, c) = forward_cached(spec, store, &h)?;
            caches.push(c);
            h = y;
        }
        let pred = self.denormalize(store, &h)?;
        let (loss, mut g) = l1_loss(&pred, target)?;
        let std = store.value(OUT_STD)?.row(0).to_vec();
        for t in 0..g.rows() {
            for (v, s) in g.row_mut(t).iter_mut().zip(&std) {
                *v *= s * scale;
            }
        }
        for (spec, c) in layers.iter().zip(caches).rev() {
            g = backward_cached(spec, store, &c, &g)?;
        }
        Ok((loss, g))
    }

    pub fn table_speakers(&self) -> Vec<String> {
        self.params
            .names()
            .filter_map(|n| n.strip_prefix(TABLE_PREFIX).map(str::to_string))
            .collect()
    }

    pub fn table_embedding(&self, speaker: &str) -> Option<SpeakerEmbedding> {
        self.params.value(&table_name(speaker)).ok().map(|t| SpeakerEmbedding {
            values: t.row(0).to_vec(),
            source: EmbeddingSource::Table,
        })
    }

    pub fn table(&self) -> EmbeddingTable {
        EmbeddingTable {
            dim: self.config.embedding_dim,
            entries: self
                .table_speakers()
                .into_iter()
                .map(|s| {
                    let v = self.params.value(&table_name(&s)).expect("listed entry").row(0).to_vec();
                    (s, v)
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(
            path,
            CHECKPOINT_KIND,
            &ConversionMeta {
                config: self.config.clone(),
                variant: self.variant.clone(),
                p_dim: self.p_dim,
            },
            &self.params,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, params): (ConversionMeta, ParamStore) = load_model(path, CHECKPOINT_KIND)?;
        Ok(Self {
            config: meta.config,
            variant: meta.variant,
            p_dim: meta.p_dim,
            params,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ConversionMeta {
    config: ConversionConfig,
    variant: ConversionVariant,
    p_dim: usize,
}

/// Free-function form of [`ConversionModel::forward`].
pub fn conversion_forward(model: &ConversionModel, cond: &ConditionedInput) -> Result<MelSpectrogram> {
    model.forward(cond)
}

/// Where each training utterance's speaker embedding comes from.
enum DseSource<'a> {
    Fixed(&'a BTreeMap<String, Vec<f64>>),
    Table,
}

struct Prepared {
    /// Conditioned rows with the embedding slice zeroed for table sources.
    input: Tensor2D,
    target: Tensor2D,
    table: Option<String>,
}

fn prepare_examples(
    model: &ConversionModel,
    examples: &[ConversionExample],
    source: &DseSource,
) -> Result<(Vec<Prepared>, Vec<(String, String)>)> {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    let zero = vec![0.0; model.config.embedding_dim];
    for ex in examples {
        let frames = ex.target.frames();
        if ex.expanded.rows() != frames || ex.f0.frames() != frames || frames == 0 {
            skipped.push((
                ex.utterance_id.clone(),
                format!(
                    "frame mismatch: embeddings {}, F0 {}, mel {}",
                    ex.expanded.rows(),
                    ex.f0.frames(),
                    frames
                ),
            ));
            continue;
        }
        if ex.target.bands() != MEL_BANDS {
            return Err(Error::dims(format!("target mel of {}", ex.utterance_id), MEL_BANDS, ex.target.bands()));
        }
        if ex.expanded.cols() != model.p_dim {
            return Err(Error::dims(format!("embeddings of {}", ex.utterance_id), model.p_dim, ex.expanded.cols()));
        }
        let (dse, table) = match source {
            DseSource::Fixed(map) => match map.get(&ex.speaker_id) {
                Some(v) => (v.clone(), None),
                None => {
                    skipped.push((ex.utterance_id.clone(), format!("no embedding for {}", ex.speaker_id)));
                    continue;
                }
            },
            DseSource::Table => (zero.clone(), Some(table_name(&ex.speaker_id))),
        };
        if dse.len() != model.config.embedding_dim {
            return Err(Error::dims("speaker embedding", model.config.embedding_dim, dse.len()));
        }
        let cond = ConditionedInput::new(&ex.expanded, &ex.f0, &dse)?;
        out.push(Prepared {
            input: cond.values,
            target: ex.target.values.clone(),
            table,
        });
    }
    if !skipped.is_empty() {
        log::warn!("{} conversion utterances skipped", skipped.len());
    }
    if out.is_empty() {
        return Err(Error::invalid("no usable conversion training utterances"));
    }
    Ok((out, skipped))
}

fn with_table(model: &ConversionModel, store: &ParamStore, p: &Prepared, x: &Tensor2D) -> Result<Tensor2D> {
    let Some(name) = &p.table else {
        return Ok(x.clone());
    };
    let e = store.value(name)?.row(0);
    let off = model.p_dim + 2;
    let mut y = x.clone();
    for t in 0..y.rows() {
        y.row_mut(t)[off..].copy_from_slice(e);
    }
    Ok(y)
}

fn set_statistics(model: &mut ConversionModel, data: &[Prepared]) -> Result<()> {
    let mut sum = vec![0.0; MEL_BANDS];
    let mut sq = vec![0.0; MEL_BANDS];
    let (mut f, mut fsq) = (0.0, 0.0);
    let mut n = 0usize;
    for p in data {
        for t in 0..p.target.rows() {
            for (c, &v) in p.target.row(t).iter().enumerate() {
                sum[c] += v;
                sq[c] += v * v;
            }
            let lf = p.input.get(t, model.p_dim);
            f += lf;
            fsq += lf * lf;
        }
        n += p.target.rows();
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-3))
        .collect();
    let fm = f / n;
    let fs = (fsq / n - fm * fm).max(0.0).sqrt().max(1e-3);
    model.params.value_mut(OUT_MEAN)?.row_mut(0).copy_from_slice(&mean);
    model.params.value_mut(OUT_STD)?.row_mut(0).copy_from_slice(&std);
    model.params.value_mut(F0_STATS)?.row_mut(0).copy_from_slice(&[fm, fs]);
    Ok(())
}

fn mean_loss(model: &ConversionModel, store: &ParamStore, data: &[Prepared]) -> Result<f64> {
    let mut total = 0.0;
    for p in data {
        let x = with_table(model, store, p, &p.input)?;
        let pred = model.forward_with(store, &x)?;
        total += l1_loss(&pred, &p.target)?.0;
    }
    Ok(total / data.len() as f64)
}

fn fit(model: &mut ConversionModel, data: &[Prepared], config: &TrainConfig) -> Result<TrainReport> {
    let frozen = model.clone();
    let crop = frozen.config.crop_frames.max(1);
    let e_off = frozen.p_dim + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "cm/crops"));
    run_training(
        &mut model.params,
        data.len(),
        config,
        |store, idx| {
            let scale = 1.0 / idx.len() as f64;
            let mut total = 0.0;
            for &i in idx {
                let p = &data[i];
                let (s, e) = if p.target.rows() > crop {
                    let s = rng.random_range(0..=p.target.rows() - crop);
                    (s, s + crop)
                } else {
                    (0, p.target.rows())
                };
                let x = with_table(&frozen, store, p, &p.input.slice_rows(s, e))?;
                let (loss, dx) = frozen.loss_and_backward(store, &x, &p.target.slice_rows(s, e), scale)?;
                total += loss;
                if let Some(name) = &p.table {
                    let mut de = Tensor2D::zeros(1, frozen.config.embedding_dim);
                    for t in 0..dx.rows() {
                        for (a, v) in de.row_mut(0).iter_mut().zip(&dx.row(t)[e_off..]) {
                            *a += v;
                        }
                    }
                    store.accumulate(name, &de)?;
                }
            }
            Ok(total * scale)
        },
        |store| mean_loss(&frozen, store, data),
    )
}

/// Eq. 1 training: per-speaker embeddings come from the speaker encoder.
pub fn train_enc_cm(
    config: ConversionConfig,
    p_dim: usize,
    examples: &[ConversionExample],
    embeddings: &BTreeMap<String, Vec<f64>>,
    train_config: &TrainConfig,
) -> Result<ConversionTraining> {
    let mut model = ConversionModel::new(config, p_dim, ConversionVariant::EncCm, train_config.seed)?;
    let (data, skipped) = prepare_examples(&model, examples, &DseSource::Fixed(embeddings))?;
    set_statistics(&mut model, &data)?;
    let report = fit(&mut model, &data, train_config)?;
    Ok(ConversionTraining {
        model,
        report,
        skipped,
    })
}

/// Eq. 2 pretraining: the table entries are learned jointly with W unless
/// `freeze_table` is set (ablation).
pub fn pretrain_ada_cm(
    config: ConversionConfig,
    p_dim: usize,
    examples: &[ConversionExample],
    train_config: &TrainConfig,
    freeze_table: bool,
) -> Result<ConversionTraining> {
    let mut model = ConversionModel::new(config, p_dim, ConversionVariant::AdaCmPretrained, train_config.seed)?;
    let mut speakers: Vec<String> = examples.iter().map(|e| e.speaker_id.clone()).collect();
    speakers.sort();
    speakers.dedup();
    let table = crate::speaker::init_embedding_table(
        &speakers,
        model.config.embedding_dim,
        derive_seed(train_config.seed, "cm/table"),
    )?;
    for (s, v) in &table.entries {
        let name = table_name(s);
        model.params.insert(&name, Tensor2D::from_vec(1, v.len(), v.clone())?);
        model.params.set_trainable(&name, !freeze_table)?;
    }
    let (data, skipped) = prepare_examples(&model, examples, &DseSource::Table)?;
    set_statistics(&mut model, &data)?;
    let report = fit(&mut model, &data, train_config)?;
    Ok(ConversionTraining {
        model,
        report,
        skipped,
    })
}

/// Eq. 3 adaptation to `speaker`, whose embedding starts from a fresh random
/// draw. Embedding-only mode keeps W frozen.
pub fn adapt_speaker(
    base: &ConversionModel,
    speaker: &str,
    examples: &[ConversionExample],
    mode: AdaptMode,
    train_config: &TrainConfig,
) -> Result<(ConversionTraining, SpeakerEmbedding)> {
    if examples.is_empty() {
        return Err(Error::invalid("adaptation corpus is empty"));
    }
    if base.variant == ConversionVariant::EncCm {
        return Err(Error::invalid("adaptation requires an Ada-CM model"));
    }
    let mut model = base.clone();
    model.params.reseed(train_config.seed);
    model.variant = ConversionVariant::AdaCmAdapted {
        speaker: speaker.to_string(),
    };
    let init = crate::speaker::init_embedding_table(
        &[speaker.to_string()],
        model.config.embedding_dim,
        derive_seed(train_config.seed, &format!("cm/adapt/{speaker}")),
    )?;
    let name = table_name(speaker);
    model.params.insert(&name, Tensor2D::from_vec(1, init.dim, init.entries[0].1.clone())?);
    let names: Vec<String> = model.params.names().cloned().collect();
    for n in names {
        let trainable = if n == name {
            true
        } else if n.starts_with("norm/") || n.starts_with(TABLE_PREFIX) {
            false
        } else {
            mode == AdaptMode::Joint
        };
        model.params.set_trainable(&n, trainable)?;
    }
    let rows: Vec<ConversionExample> = examples
        .iter()
        .map(|e| ConversionExample {
            speaker_id: speaker.to_string(),
            ..e.clone()
        })
        .collect();
    let (data, skipped) = prepare_examples(&model, &rows, &DseSource::Table)?;
    let report = fit(&mut model, &data, train_config)?;
    let names: Vec<String> = model.params.names().cloned().collect();
    for n in names {
        let trainable = !(n.starts_with("norm/") || n.starts_with(TABLE_PREFIX));
        model.params.set_trainable(&n, trainable)?;
    }
    let e = model.table_embedding(speaker).expect("entry inserted above");
    Ok((
        ConversionTraining {
            model,
            report,
            skipped,
        },
        e,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OptimizerConfig;

    fn small() -> ConversionConfig {
        ConversionConfig {
            fc_units: 8,
            blstm_units: 4,
            blstm_layers: 1,
            embedding_dim: 3,
            crop_frames: 1000,
        }
    }

    fn example(id: &str, spk: &str, frames: usize, level: f64) -> ConversionExample {
        let mut p = Tensor2D::zeros(frames, 4);
        for t in 0..frames {
            p.set(t, t % 4, 1.0);
        }
        let f0 = F0Contour {
            log_f0: (0..frames).map(|t| 5.0 + 0.01 * t as f64).collect(),
            voiced: (0..frames).map(|t| t % 3 != 0).collect(),
        };
        let mel = Tensor2D::from_vec(
            frames,
            MEL_BANDS,
            (0..frames * MEL_BANDS)
                .map(|i| level + ((i % MEL_BANDS) as f64 * 0.1).sin() + ((i / MEL_BANDS) % 4) as f64 * 0.5)
                .collect(),
        )
        .unwrap();
        ConversionExample {
            utterance_id: id.into(),
            speaker_id: spk.into(),
            expanded: p,
            f0,
            target: MelSpectrogram::new(mel),
        }
    }

    #[test]
    fn conditioned_input_layout_and_mismatch() {
        let ex = example("u", "s", 5, 0.0);
        let c = ConditionedInput::new(&ex.expanded, &ex.f0, &[0.5, -0.5, 1.0]).unwrap();
        assert_eq!(c.values.cols(), 4 + 2 + 3);
        for t in 0..5 {
            assert_eq!(&c.values.row(t)[6..], &[0.5, -0.5, 1.0]);
            assert_eq!(c.values.get(t, 4), ex.f0.log_f0[t]);
        }
        let short = F0Contour {
            log_f0: vec![5.0; 4],
            voiced: vec![true; 4],
        };
        assert!(ConditionedInput::new(&ex.expanded, &short, &[1.0]).is_err());
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut m = ConversionModel::new(small(), 4, ConversionVariant::EncCm, 1).unwrap();
        for (_, p) in m.params.iter_mut() {
            p.value.fill(0.0);
        }
        m.params.value_mut(F0_STATS).unwrap().set(0, 1, 1.0);
        let ex = example("u", "s", 6, 0.0);
        let c = ConditionedInput::new(&ex.expanded, &ex.f0, &[1.0, 2.0, 3.0]).unwrap();
        let out = conversion_forward(&m, &c).unwrap();
        assert_eq!(out.frames(), 6);
        assert!(out.values.as_slice().iter().all(|&v| v == 0.0));
        let wrong = ConditionedInput::new(&ex.expanded, &ex.f0, &[1.0]).unwrap();
        assert!(conversion_forward(&m, &wrong).is_err());
    }

    #[test]
    fn enc_cm_initial_loss_is_exact_and_overfits() {
        let ex = vec![example("u", "s", 10, -3.0)];
        let dse: BTreeMap<String, Vec<f64>> = [("s".to_string(), vec![0.6, 0.0, 0.8])].into();
        let cfg = TrainConfig::new(0, 1, OptimizerConfig::adam(), 5);
        let t0 = train_enc_cm(small(), 4, &ex, &dse, &cfg).unwrap();
        let cond = ConditionedInput::new(&ex[0].expanded, &ex[0].f0, &dse["s"]).unwrap();
        let direct = l1_loss(&t0.model.forward(&cond).unwrap().values, &ex[0].target.values).unwrap().0;
        assert_eq!(t0.report.initial_loss, direct);

        let cfg = TrainConfig::new(300, 1, OptimizerConfig::adam().with_lr(1e-2), 5);
        let t = train_enc_cm(small(), 4, &ex, &dse, &cfg).unwrap();
        assert!(t.report.reduction() >= 0.8, "{:?}", t.report.final_loss);
        let missing = vec![example("v", "other", 10, 0.0), ex[0].clone()];
        assert_eq!(train_enc_cm(small(), 4, &missing, &dse, &cfg).unwrap().skipped.len(), 1);
    }

    #[test]
    fn ada_cm_table_learns_and_adaptation_modes_nest() {
        let ex = vec![example("a1", "a", 12, -2.0), example("b1", "b", 12, 1.0)];
        let cfg = TrainConfig::new(1, 2, OptimizerConfig::adam(), 2);
        let init = pretrain_ada_cm(small(), 4, &ex, &TrainConfig::new(0, 2, OptimizerConfig::adam(), 2), false).unwrap();
        let one = pretrain_ada_cm(small(), 4, &ex, &cfg, false).unwrap();
        assert_ne!(init.model.table_embedding("a"), one.model.table_embedding("a"));
        let frozen = pretrain_ada_cm(small(), 4, &ex, &cfg, true).unwrap();
        assert_eq!(init.model.table_embedding("a"), frozen.model.table_embedding("a"));

        let base = pretrain_ada_cm(small(), 4, &ex, &TrainConfig::new(200, 2, OptimizerConfig::adam().with_lr(1e-2), 2), false)
            .unwrap()
            .model;
        let target = vec![example("c1", "c", 12, 0.3)];
        let zero = TrainConfig::new(0, 1, OptimizerConfig::adam(), 9);
        let (z, _) = adapt_speaker(&base, "c", &target, AdaptMode::Joint, &zero).unwrap();
        for n in base.params.names() {
            assert_eq!(z.model.params.value(n).unwrap(), base.params.value(n).unwrap());
        }
        let budget = TrainConfig::new(100, 1, OptimizerConfig::adam().with_lr(1e-2), 9);
        let (joint, _) = adapt_speaker(&base, "c", &target, AdaptMode::Joint, &budget).unwrap();
        let (emb, _) = adapt_speaker(&base, "c", &target, AdaptMode::EmbeddingOnly, &budget).unwrap();
        assert!(joint.report.final_loss <= emb.report.final_loss);
        for n in base.params.names().filter(|n| !n.starts_with("table/")) {
            assert_eq!(emb.model.params.value(n).unwrap(), base.params.value(n).unwrap(), "{n}");
        }
        assert!(adapt_speaker(&base, "c", &[], AdaptMode::Joint, &budget).is_err());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cm.ckpt");
        joint.model.save(&p).unwrap();
        assert_eq!(ConversionModel::load(&p).unwrap(), joint.model);
    }
}
