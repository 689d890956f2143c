//! LSTM speaker encoder: final state → projection → L2 normalization.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ge2e::ge2e_loss;
use super::{EmbeddingSource, SpeakerEmbedding};
use crate::dsp::mel::{fold_to_40, MelSpectrogram};
use crate::error::{Error, Result};
use crate::nn::checkpoint::{load_model, save_model};
use crate::nn::tensor::dot;
use crate::nn::{
    backward_cached, forward, forward_cached, init_layer, run_training_with, Activation, LayerSpec, ParamStore,
    Tensor2D, TrainConfig, TrainReport,
};
use crate::util::derive_seed;

pub const CHECKPOINT_KIND: &str = "speaker-encoder";
pub const INPUT_BANDS: usize = 40;
const W: &str = "ge2e/w";
const B: &str = "ge2e/b";
const NORM_MEAN: &str = "norm/mean";
const NORM_STD: &str = "norm/std";
const MIN_W: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeakerEncoderConfig {
    pub lstm_units: usize,
    pub lstm_layers: usize,
    pub embedding_dim: usize,
    /// Speakers per GE2E batch.
    pub speakers_per_batch: usize,
    /// Utterances per speaker in a batch.
    pub utterances_per_speaker: usize,
    /// Random crop length in frames during training.
    pub crop_frames: usize,
}

impl Default for SpeakerEncoderConfig {
    fn default() -> Self {
        Self {
            lstm_units: 64,
            lstm_layers: 1,
            embedding_dim: 256,
            speakers_per_batch: 4,
            utterances_per_speaker: 4,
            crop_frames: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEncoder {
    pub config: SpeakerEncoderConfig,
    pub params: ParamStore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTrainReport {
    pub train: TrainReport,
    pub same_speaker_cosine: f64,
    pub different_speaker_cosine: f64,
}

/// 40-band speaker-encoder input from an 80- or 40-band mel.
pub fn speaker_features(mel: &MelSpectrogram) -> Result<Tensor2D> {
    match mel.bands() {
        40 => Ok(mel.values.clone()),
        80 => Ok(fold_to_40(mel)?.values),
        b => Err(Error::dims("speaker encoder input bands (40 or 80)", INPUT_BANDS, b)),
    }
}

fn l2_normalize(z: &[f64]) -> (Vec<f64>, f64) {
    let n = dot(z, z).sqrt().max(1e-12);
    (z.iter().map(|v| v / n).collect(), n)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt()).max(1e-12)
}

impl SpeakerEncoder {
    pub fn new(config: SpeakerEncoderConfig, seed: u64) -> Result<Self> {
        if config.embedding_dim == 0 || config.lstm_units == 0 || config.lstm_layers == 0 {
            return Err(Error::Config("speaker encoder sizes must be positive".into()));
        }
        let mut enc = Self {
            config,
            params: ParamStore::new(seed),
        };
        let mut store = ParamStore::new(seed);
        init_layer(&enc.lstm_spec(), &mut store)?;
        init_layer(&enc.proj_spec(), &mut store)?;
        store.insert(W, Tensor2D::filled(1, 1, 10.0));
        store.insert(B, Tensor2D::filled(1, 1, -5.0));
        store.insert(NORM_MEAN, Tensor2D::zeros(1, INPUT_BANDS));
        store.insert(NORM_STD, Tensor2D::filled(1, INPUT_BANDS, 1.0));
        store.set_trainable(NORM_MEAN, false)?;
        store.set_trainable(NORM_STD, false)?;
        enc.params = store;
        Ok(enc)
    }

    fn lstm_spec(&self) -> LayerSpec {
        LayerSpec::lstm("spk/lstm", INPUT_BANDS, self.config.lstm_units, self.config.lstm_layers)
    }

    fn proj_spec(&self) -> LayerSpec {
        LayerSpec::fully_connected(
            "spk/proj",
            self.config.lstm_units,
            self.config.embedding_dim,
            Activation::Identity,
        )
    }

    pub fn similarity_scale(&self) -> (f64, f64) {
        let w = self.params.value(W).map(|t| t.get(0, 0)).unwrap_or(MIN_W);
        let b = self.params.value(B).map(|t| t.get(0, 0)).unwrap_or(0.0);
        (w, b)
    }

    fn normalize(&self, store: &ParamStore, x: &Tensor2D) -> Result<Tensor2D> {
        if x.cols() != INPUT_BANDS {
            return Err(Error::dims("speaker encoder features", INPUT_BANDS, x.cols()));
        }
        if x.rows() == 0 {
            return Err(Error::invalid("speaker encoder input has no frames"));
        }
        let mean = store.value(NORM_MEAN)?.row(0);
        let std = store.value(NORM_STD)?.row(0);
        let mut y = x.clone();
        for r in 0..y.rows() {
            for ((v, m), s) in y.row_mut(r).iter_mut().zip(mean).zip(std) {
                *v = (*v - m) / s;
            }
        }
        Ok(y)
    }

    fn embed_with(&self, store: &ParamStore, x: &Tensor2D) -> Result<Vec<f64>> {
        let h = forward(&self.lstm_spec(), store, &self.normalize(store, x)?)?;
        let last = h.slice_rows(h.rows() - 1, h.rows());
        let z = forward(&self.proj_spec(), store, &last)?;
        Ok(l2_normalize(z.row(0)).0)
    }

    /// Unit-norm embedding of one utterance (40-band features).
    pub fn embed(&self, features: &Tensor2D) -> Result<Vec<f64>> {
        self.embed_with(&self.params, features)
    }

    /// Normalized mean of per-utterance embeddings.
    pub fn extract_dse(&self, utterances: &[Tensor2D]) -> Result<SpeakerEmbedding> {
        if utterances.is_empty() {
            return Err(Error::invalid("extract_dse needs at least one utterance"));
        }
        let mut acc = vec![0.0; self.config.embedding_dim];
        for u in utterances {
            for (a, v) in acc.iter_mut().zip(self.embed(u)?) {
                *a += v;
            }
        }
        Ok(SpeakerEmbedding {
            values: l2_normalize(&acc).0,
            source: EmbeddingSource::Encoder,
        })
    }

    /// GE2E loss of one batch, backpropagated into `store` scaled by `scale`.
    fn batch_backward(&self, store: &mut ParamStore, batch: &[Tensor2D], n: usize, m: usize) -> Result<f64> {
        let lstm = self.lstm_spec();
        let proj = self.proj_spec();
        let mut caches = Vec::with_capacity(batch.len());
        let mut embs = Tensor2D::zeros(batch.len(), self.config.embedding_dim);
        let mut norms = Vec::with_capacity(batch.len());
        for (r, x) in batch.iter().enumerate() {
            let (h, lc) = forward_cached(&lstm, store, &self.normalize(store, x)?)?;
            let last = h.slice_rows(h.rows() - 1, h.rows());
            let (z, pc) = forward_cached(&proj, store, &last)?;
            let (e, nz) = l2_normalize(z.row(0));
            embs.row_mut(r).copy_from_slice(&e);
            norms.push(nz);
            caches.push((lc, pc, h.rows()));
        }
        let (w, b) = (store.value(W)?.get(0, 0), store.value(B)?.get(0, 0));
        let out = ge2e_loss(&embs, n, m, w, b)?;
        store.accumulate(W, &Tensor2D::filled(1, 1, out.dw))?;
        store.accumulate(B, &Tensor2D::filled(1, 1, out.db))?;
        for (r, (lc, pc, rows)) in caches.into_iter().enumerate() {
            let e = embs.row(r);
            let dy = out.d_embeddings.row(r);
            let proj_dot = dot(e, dy);
            let dz: Vec<f64> = e.iter().zip(dy).map(|(y, g)| (g - y * proj_dot) / norms[r]).collect();
            let dlast = backward_cached(&proj, store, &pc, &Tensor2D::from_vec(1, dz.len(), dz)?)?;
            let mut dh = Tensor2D::zeros(rows, self.config.lstm_units);
            dh.row_mut(rows - 1).copy_from_slice(dlast.row(0));
            backward_cached(&lstm, store, &lc, &dh)?;
        }
        Ok(out.loss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(path, CHECKPOINT_KIND, &self.config, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, params) = load_model(path, CHECKPOINT_KIND)?;
        Ok(Self { config, params })
    }
}

fn crop(x: &Tensor2D, len: usize, rng: &mut ChaCha8Rng) -> Tensor2D {
    if x.rows() <= len {
        return x.clone();
    }
    let start = rng.random_range(0..=x.rows() - len);
    x.slice_rows(start, start + len)
}

/// Mean same-speaker and different-speaker cosine over all utterance pairs.
pub fn separation(enc: &SpeakerEncoder, speakers: &[Vec<Tensor2D>]) -> Result<(f64, f64)> {
    let embs: Vec<Vec<Vec<f64>>> = speakers
        .iter()
        .map(|utts| utts.iter().map(|u| enc.embed(u)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let (mut same, mut ns, mut diff, mut nd) = (0.0, 0usize, 0.0, 0usize);
    let flat: Vec<(usize, &Vec<f64>)> = embs
        .iter()
        .enumerate()
        .flat_map(|(s, v)| v.iter().map(move |e| (s, e)))
        .collect();
    for a in 0..flat.len() {
        for b in a + 1..flat.len() {
            let c = dot(flat[a].1, flat[b].1);
            if flat[a].0 == flat[b].0 {
                same += c;
                ns += 1;
            } else {
                diff += c;
                nd += 1;
            }
        }
    }
    Ok((same / ns.max(1) as f64, diff / nd.max(1) as f64))
}

/// GE2E training over per-speaker utterance lists (40-band features).
/// Each step draws N speakers and M random crops per speaker.
pub fn train_speaker_encoder(
    config: SpeakerEncoderConfig,
    speakers: &[Vec<Tensor2D>],
    train_config: &TrainConfig,
) -> Result<(SpeakerEncoder, SpeakerTrainReport)> {
    let (n, m) = (config.speakers_per_batch, config.utterances_per_speaker);
    if n < 2 || m < 2 {
        return Err(Error::invalid(format!("GE2E batch must be at least 2×2, got {n}×{m}")));
    }
    if speakers.len() < n {
        return Err(Error::invalid(format!(
            "speaker encoder needs at least {n} speakers, got {}",
            speakers.len()
        )));
    }
    if let Some((s, u)) = speakers.iter().enumerate().find(|(_, u)| u.len() < m) {
        return Err(Error::invalid(format!(
            "speaker {s} has {} utterances, at least {m} are needed",
            u.len()
        )));
    }
    let mut enc = SpeakerEncoder::new(config, train_config.seed)?;
    let (mean, std) = band_statistics(speakers.iter().flatten());
    enc.params.value_mut(NORM_MEAN)?.row_mut(0).copy_from_slice(&mean);
    enc.params.value_mut(NORM_STD)?.row_mut(0).copy_from_slice(&std);

    // Fixed evaluation batch: the first M utterances of the first N speakers.
    let eval_batch: Vec<Tensor2D> = speakers[..n].iter().flat_map(|u| u[..m].iter().cloned()).collect();
    let model = enc.clone();
    let crop_len = enc.config.crop_frames;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(train_config.seed, "ge2e/crops"));
    let cfg = TrainConfig {
        batch_size: n,
        ..train_config.clone()
    };
    let train = run_training_with(
        &mut enc.params,
        speakers.len(),
        &cfg,
        |store, idx| {
            let mut batch = Vec::with_capacity(n * m);
            for &s in idx {
                let utts = &speakers[s];
                for u in rand::seq::index::sample(&mut rng, utts.len(), m).into_iter() {
                    batch.push(crop(&utts[u], crop_len, &mut rng));
                }
            }
            model.batch_backward(store, &batch, n, m)
        },
        |store| {
            let mut s = store.clone();
            model.batch_backward(&mut s, &eval_batch, n, m)
        },
        |store| {
            if let Ok(w) = store.value_mut(W) {
                let v = w.get(0, 0).max(MIN_W);
                w.set(0, 0, v);
            }
        },
    )?;
    let (same, diff) = separation(&enc, speakers)?;
    Ok((
        enc,
        SpeakerTrainReport {
            train,
            same_speaker_cosine: same,
            different_speaker_cosine: diff,
        },
    ))
}

fn band_statistics<'a>(utts: impl Iterator<Item = &'a Tensor2D>) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; INPUT_BANDS];
    let mut sq = vec![0.0; INPUT_BANDS];
    let mut n = 0usize;
    for u in utts {
        for r in 0..u.rows() {
            for (c, &v) in u.row(r).iter().enumerate().take(INPUT_BANDS) {
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        n += u.rows();
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-3))
        .collect();
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_inventory, generate_typical_corpus, TextConfig};
    use crate::nn::OptimizerConfig;

    fn small() -> SpeakerEncoderConfig {
        SpeakerEncoderConfig {
            lstm_units: 8,
            embedding_dim: 6,
            crop_frames: 1000,
            ..SpeakerEncoderConfig::default()
        }
    }

    fn speakers(n: usize, m: usize) -> Vec<Vec<Tensor2D>> {
        let c = generate_typical_corpus(n, m, &default_inventory(), &TextConfig::default(), 2).unwrap();
        c.speakers
            .iter()
            .map(|s| c.records_of(s).map(|r| speaker_features(&r.mel).unwrap()).collect())
            .collect()
    }

    #[test]
    fn embeddings_are_unit_norm_and_mean_of_duplicates_is_identity() {
        let spk = speakers(1, 2);
        let enc = SpeakerEncoder::new(small(), 1).unwrap();
        let e = enc.embed(&spk[0][0]).unwrap();
        assert!((dot(&e, &e).sqrt() - 1.0).abs() < 1e-9);
        let twice = enc.extract_dse(&[spk[0][0].clone(), spk[0][0].clone()]).unwrap();
        for (a, b) in twice.values.iter().zip(&e) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(enc.extract_dse(&[]).is_err());
    }

    #[test]
    fn single_batch_overfit_is_deterministic_and_checks_preconditions() {
        let spk = speakers(4, 4);
        let cfg = TrainConfig::new(60, 4, OptimizerConfig::adam().with_lr(1e-2), 3);
        let (a, ra) = train_speaker_encoder(small(), &spk, &cfg).unwrap();
        let (b, rb) = train_speaker_encoder(small(), &spk, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.train.reduction() >= 0.8, "{:?}", ra.train);
        assert!(a.similarity_scale().0 >= MIN_W);
        assert!(train_speaker_encoder(small(), &spk[..2], &cfg).is_err());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("spk.ckpt");
        a.save(&p).unwrap();
        assert_eq!(SpeakerEncoder::load(&p).unwrap(), a);
    }
}
