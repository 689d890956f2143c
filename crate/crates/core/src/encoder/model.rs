//! Seq2seq recognizer: conv frontend (each layer followed by ×2 average
//! pooling in time) → BLSTM → location-aware attention → LSTM decoder →
//! softmax over the inventory.

use serde::{Deserialize, Serialize};

use super::inventory::{PhonemeInventory, EOS_TOKEN, SOS_TOKEN};
use crate::dsp::delta::delta_features;
use crate::dsp::mel::{fold_to_40, MelSpectrogram};
use crate::error::{Error, Result};
use crate::nn::attention::{AttentionMemory, AttentionStepCache};
use crate::nn::loss::softmax_in_place;
use crate::nn::recurrent::{CellGrads, CellKind, CellParams, CellState, CellWeights, StepCache};
use crate::nn::tensor::{gemv, gemv_t_acc, outer_acc};
use crate::nn::{
    backward_cached, forward_cached, init_layer, Activation, LayerCache, LayerSpec, LocationAttention, ParamStore,
    Tensor2D,
};

pub const FEATURE_DIM: usize = 120;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub conv_channels: Vec<usize>,
    /// Whether each conv layer is followed by ×2 average pooling in time.
    pub conv_pool: Vec<bool>,
    pub conv_kernel: usize,
    pub blstm_units: usize,
    pub blstm_layers: usize,
    pub attention_dim: usize,
    pub attention_kernel: usize,
    pub decoder_units: usize,
    pub decoder_layers: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![32, 32],
            conv_pool: vec![true, true],
            conv_kernel: 3,
            blstm_units: 64,
            blstm_layers: 1,
            attention_dim: 64,
            attention_kernel: 31,
            decoder_units: 128,
            decoder_layers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum EncoderVariant {
    Pretrained,
    FineTuned { speaker: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechEncoder {
    pub config: EncoderConfig,
    pub inventory: PhonemeInventory,
    pub variant: EncoderVariant,
    pub params: ParamStore,
}

/// Per-token phoneme distributions; each row sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeEmbeddingSeq {
    pub probs: Tensor2D,
    /// Set when free-running decoding hit the length cap before `<eos>`.
    pub truncated: bool,
}

impl PhonemeEmbeddingSeq {
    pub fn tokens(&self) -> usize {
        self.probs.rows()
    }

    pub fn dim(&self) -> usize {
        self.probs.cols()
    }

    /// Most likely token per row.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.tokens())
            .map(|r| {
                let row = self.probs.row(r);
                (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0)
            })
            .collect()
    }
}

/// 40-band mel plus Δ and ΔΔ. 80-band input is folded to 40 bands first.
pub fn encoder_features(mel: &MelSpectrogram) -> Result<Tensor2D> {
    let mel40 = match mel.bands() {
        40 => mel.clone(),
        80 => fold_to_40(mel)?,
        b => return Err(Error::dims("encoder input bands (40 or 80)", 40, b)),
    };
    delta_features(&mel40)
}

const NORM_MEAN: &str = "norm/mean";
const NORM_STD: &str = "norm/std";

fn pool2(x: &Tensor2D) -> Tensor2D {
    let rows = x.rows().div_ceil(2);
    let mut out = Tensor2D::zeros(rows, x.cols());
    for r in 0..rows {
        let a = x.row(2 * r);
        if 2 * r + 1 < x.rows() {
            let b = x.row(2 * r + 1);
            for ((o, p), q) in out.row_mut(r).iter_mut().zip(a).zip(b) {
                *o = 0.5 * (p + q);
            }
        } else {
            out.row_mut(r).copy_from_slice(a);
        }
    }
    out
}

fn pool2_backward(g: &Tensor2D, input_rows: usize) -> Tensor2D {
    let mut out = Tensor2D::zeros(input_rows, g.cols());
    for r in 0..g.rows() {
        if 2 * r + 1 < input_rows {
            for k in [2 * r, 2 * r + 1] {
                for (o, v) in out.row_mut(k).iter_mut().zip(g.row(r)) {
                    *o = 0.5 * v;
                }
            }
        } else {
            out.row_mut(2 * r).copy_from_slice(g.row(r));
        }
    }
    out
}

pub(crate) struct EncodeCache {
    convs: Vec<(LayerCache, usize, bool)>,
    blstm: LayerCache,
}

pub(crate) struct DecodeStepCache {
    lstm: Vec<StepCache>,
    att: AttentionStepCache,
    hc: Vec<f64>,
}

/// One decoder step's outputs.
pub(crate) struct DecodeStep {
    pub state: Vec<CellState>,
    pub context: Vec<f64>,
    pub align: Vec<f64>,
    pub probs: Vec<f64>,
    pub cache: DecodeStepCache,
}

impl SpeechEncoder {
    pub fn new(config: EncoderConfig, inventory: PhonemeInventory, seed: u64) -> Result<Self> {
        if config.conv_channels.is_empty() {
            return Err(Error::Config("speech encoder needs at least one conv layer".into()));
        }
        if config.conv_pool.len() != config.conv_channels.len() {
            return Err(Error::Config(format!(
                "conv_pool has {} entries for {} conv layers",
                config.conv_pool.len(),
                config.conv_channels.len()
            )));
        }
        if config.decoder_layers == 0 || config.blstm_layers == 0 {
            return Err(Error::Config("speech encoder layer counts must be positive".into()));
        }
        let mut params = ParamStore::new(seed);
        let mut enc = Self {
            config,
            inventory,
            variant: EncoderVariant::Pretrained,
            params: ParamStore::new(seed),
        };
        for l in 0..enc.config.conv_channels.len() {
            init_layer(&enc.conv_spec(l), &mut params)?;
        }
        init_layer(&enc.blstm_spec(), &mut params)?;
        enc.attention()?.init(&mut params);
        for cell in enc.cells() {
            cell.init(&mut params);
        }
        init_layer(&enc.out_spec(), &mut params)?;
        params.insert(NORM_MEAN, Tensor2D::zeros(1, FEATURE_DIM));
        params.insert(NORM_STD, Tensor2D::filled(1, FEATURE_DIM, 1.0));
        params.set_trainable(NORM_MEAN, false)?;
        params.set_trainable(NORM_STD, false)?;
        enc.params = params;
        Ok(enc)
    }

    pub fn vocab(&self) -> usize {
        self.inventory.size()
    }

    fn memory_dim(&self) -> usize {
        2 * self.config.blstm_units
    }

    fn conv_spec(&self, l: usize) -> LayerSpec {
        let input = if l == 0 { FEATURE_DIM } else { self.config.conv_channels[l - 1] };
        LayerSpec::conv1d(
            &format!("enc/conv{l}"),
            input,
            self.config.conv_channels[l],
            self.config.conv_kernel,
            Activation::Relu,
        )
    }

    fn blstm_spec(&self) -> LayerSpec {
        LayerSpec::blstm(
            "enc/blstm",
            *self.config.conv_channels.last().expect("validated non-empty"),
            self.config.blstm_units,
            self.config.blstm_layers,
        )
    }

    fn attention(&self) -> Result<LocationAttention> {
        LocationAttention::new(LayerSpec::location_attention(
            "dec/att",
            self.memory_dim(),
            self.config.decoder_units,
            self.config.attention_dim,
            self.config.attention_kernel,
        ))
    }

    fn cells(&self) -> Vec<CellParams> {
        (0..self.config.decoder_layers)
            .map(|l| {
                let input = if l == 0 {
                    self.vocab() + self.memory_dim()
                } else {
                    self.config.decoder_units
                };
                CellParams::new(&format!("dec/lstm/l{l}"), CellKind::Lstm, input, self.config.decoder_units)
            })
            .collect()
    }

    fn initial_state(&self) -> Vec<CellState> {
        vec![CellState::zeros(self.config.decoder_units); self.config.decoder_layers]
    }

    fn out_spec(&self) -> LayerSpec {
        LayerSpec::fully_connected(
            "dec/out",
            self.config.decoder_units + self.memory_dim(),
            self.vocab(),
            Activation::Identity,
        )
    }

    /// Stores per-dimension feature statistics used to standardize input.
    pub fn set_feature_normalization(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        if mean.len() != FEATURE_DIM || std.len() != FEATURE_DIM {
            return Err(Error::dims("feature statistics", FEATURE_DIM, mean.len().min(std.len())));
        }
        self.params.value_mut(NORM_MEAN)?.row_mut(0).copy_from_slice(mean);
        let s = self.params.value_mut(NORM_STD)?;
        for (o, v) in s.row_mut(0).iter_mut().zip(std) {
            *o = v.max(1e-3);
        }
        Ok(())
    }

    fn normalize(&self, features: &Tensor2D) -> Result<Tensor2D> {
        if features.cols() != FEATURE_DIM {
            return Err(Error::dims("encoder features", FEATURE_DIM, features.cols()));
        }
        if features.rows() == 0 {
            return Err(Error::invalid("encoder features have no frames"));
        }
        let mean = self.params.value(NORM_MEAN)?.row(0);
        let std = self.params.value(NORM_STD)?.row(0);
        let mut x = features.clone();
        for r in 0..x.rows() {
            for ((v, m), s) in x.row_mut(r).iter_mut().zip(mean).zip(std) {
                *v = (*v - m) / s;
            }
        }
        Ok(x)
    }

    pub(crate) fn encode(&self, store: &ParamStore, features: &Tensor2D) -> Result<(Tensor2D, EncodeCache)> {
        let mut x = self.normalize(features)?;
        let mut convs = Vec::with_capacity(self.config.conv_channels.len());
        for l in 0..self.config.conv_channels.len() {
            let (y, cache) = forward_cached(&self.conv_spec(l), store, &x)?;
            let pooled = self.config.conv_pool[l];
            convs.push((cache, y.rows(), pooled));
            x = if pooled { pool2(&y) } else { y };
        }
        let (h, blstm) = forward_cached(&self.blstm_spec(), store, &x)?;
        Ok((h, EncodeCache { convs, blstm }))
    }

    pub(crate) fn encode_backward(&self, store: &mut ParamStore, cache: EncodeCache, dmem: &Tensor2D) -> Result<()> {
        let mut g = backward_cached(&self.blstm_spec(), store, &cache.blstm, dmem)?;
        for (l, (conv_cache, rows, pooled)) in cache.convs.into_iter().enumerate().rev() {
            let up = if pooled { pool2_backward(&g, rows) } else { g };
            g = backward_cached(&self.conv_spec(l), store, &conv_cache, &up)?;
        }
        Ok(())
    }

    pub(crate) fn decode_step(
        &self,
        store: &ParamStore,
        att: &LocationAttention,
        mem: &AttentionMemory,
        prev_token: usize,
        prev_context: &[f64],
        prev_state: &[CellState],
        prev_align: &[f64],
    ) -> Result<DecodeStep> {
        let mut x = vec![0.0; self.vocab() + self.memory_dim()];
        x[prev_token] = 1.0;
        x[self.vocab()..].copy_from_slice(prev_context);
        let mut state = Vec::with_capacity(prev_state.len());
        let mut lstm = Vec::with_capacity(prev_state.len());
        for (p, prev) in self.cells().iter().zip(prev_state) {
            let cell = CellWeights::load(p, store)?;
            let (s, c) = cell.step(&x, prev);
            x = s.h.clone();
            state.push(s);
            lstm.push(c);
        }
        let top = &state.last().expect("at least one decoder layer").h;
        let st = att.step(store, mem, top, prev_align)?;
        let mut hc = top.clone();
        hc.extend_from_slice(&st.context);
        let w = store.value("dec/out/W")?;
        let b = store.value("dec/out/b")?.row(0);
        let mut probs = vec![0.0; b.len()];
        gemv(w, &hc, &mut probs);
        for (p, bb) in probs.iter_mut().zip(b) {
            *p += bb;
        }
        softmax_in_place(&mut probs);
        Ok(DecodeStep {
            state,
            context: st.context,
            align: st.align,
            probs,
            cache: DecodeStepCache { lstm, att: st.cache, hc },
        })
    }

    /// Teacher-forced pass over `tokens` (without `<sos>`/`<eos>`). Returns
    /// the distributions of the `tokens.len() + 1` steps (the last predicts
    /// `<eos>`) and the caches needed for backpropagation.
    pub(crate) fn teacher_forced(
        &self,
        store: &ParamStore,
        features: &Tensor2D,
        tokens: &[usize],
    ) -> Result<(Tensor2D, TeacherCache)> {
        let (memory, enc_cache) = self.encode(store, features)?;
        let att = self.attention()?;
        let mem = att.prepare(store, &memory)?;
        let mut state = self.initial_state();
        let mut context = vec![0.0; self.memory_dim()];
        let mut align = att.initial_alignment(&mem);
        let mut probs = Tensor2D::zeros(tokens.len() + 1, self.vocab());
        let mut steps = Vec::with_capacity(tokens.len() + 1);
        let mut prev = SOS_TOKEN;
        for i in 0..=tokens.len() {
            let st = self.decode_step(store, &att, &mem, prev, &context, &state, &align)?;
            probs.row_mut(i).copy_from_slice(&st.probs);
            state = st.state;
            context = st.context;
            align = st.align;
            steps.push(st.cache);
            if i < tokens.len() {
                prev = tokens[i];
            }
        }
        Ok((
            probs,
            TeacherCache {
                enc: enc_cache,
                mem,
                steps,
            },
        ))
    }

    /// Backpropagates `dlogits` (one row per decoder step) through the
    /// decoder, attention and encoder, accumulating into `store`.
    pub(crate) fn teacher_backward(&self, store: &mut ParamStore, cache: TeacherCache, dlogits: &Tensor2D) -> Result<()> {
        let att = self.attention()?;
        let cell_p = self.cells();
        let vocab = self.vocab();
        let mdim = self.memory_dim();
        let units = self.config.decoder_units;
        let mut cell_grads: Vec<CellGrads> = cell_p.iter().map(CellGrads::new).collect();
        let mut att_grads = att.grads(&cache.mem);
        let mut dw_out = Tensor2D::zeros(vocab, units + mdim);
        let mut db_out = Tensor2D::zeros(1, vocab);
        {
            let cells = cell_p.iter().map(|p| CellWeights::load(p, store)).collect::<Result<Vec<_>>>()?;
            let w_out = store.value("dec/out/W")?;
            let mut carry_state = self.initial_state();
            let mut carry_ctx = vec![0.0; mdim];
            let mut carry_align = vec![0.0; cache.mem.len()];
            for (i, step) in cache.steps.iter().enumerate().rev() {
                let g = dlogits.row(i);
                outer_acc(&mut dw_out, g, &step.hc);
                for (a, v) in db_out.row_mut(0).iter_mut().zip(g) {
                    *a += v;
                }
                let mut dhc = vec![0.0; units + mdim];
                gemv_t_acc(w_out, g, &mut dhc);
                let mut dctx = dhc[units..].to_vec();
                for (a, b) in dctx.iter_mut().zip(&carry_ctx) {
                    *a += b;
                }
                let (dq, dprev_align) =
                    att.step_backward(store, &cache.mem, &step.att, &dctx, &carry_align, &mut att_grads)?;
                let mut dh = dhc[..units].to_vec();
                for (a, b) in dh.iter_mut().zip(&dq) {
                    *a += b;
                }
                for l in (0..cells.len()).rev() {
                    for (a, c) in dh.iter_mut().zip(&carry_state[l].h) {
                        *a += c;
                    }
                    let (dx, dprev) =
                        cells[l].step_backward(&step.lstm[l], &dh, &carry_state[l].c, &mut cell_grads[l]);
                    carry_state[l] = dprev;
                    if l == 0 {
                        carry_ctx = dx[vocab..].to_vec();
                    } else {
                        dh = dx;
                    }
                }
                carry_align = dprev_align;
            }
        }
        for (g, p) in cell_grads.into_iter().zip(&cell_p) {
            g.flush(p, store)?;
        }
        store.accumulate("dec/out/W", &dw_out)?;
        store.accumulate("dec/out/b", &db_out)?;
        let dmem = att.finish_backward(store, &cache.mem, att_grads)?;
        self.encode_backward(store, cache.enc, &dmem)
    }

    /// Greedy decoding until `<eos>` or the cap of twice the encoder length.
    /// Returns the emitted distributions (excluding the `<eos>` step).
    pub fn free_running(&self, features: &Tensor2D) -> Result<PhonemeEmbeddingSeq> {
        let store = &self.params;
        let (memory, _) = self.encode(store, features)?;
        let att = self.attention()?;
        let mem = att.prepare(store, &memory)?;
        let cap = 2 * memory.rows();
        let mut state = self.initial_state();
        let mut context = vec![0.0; self.memory_dim()];
        let mut align = att.initial_alignment(&mem);
        let mut prev = SOS_TOKEN;
        let mut rows = Vec::new();
        let mut truncated = true;
        for _ in 0..cap {
            let st = self.decode_step(store, &att, &mem, prev, &context, &state, &align)?;
            let tok = (0..st.probs.len())
                .max_by(|&a, &b| st.probs[a].total_cmp(&st.probs[b]))
                .expect("non-empty vocabulary");
            if tok == EOS_TOKEN {
                truncated = false;
                break;
            }
            rows.push(st.probs.clone());
            prev = tok;
            state = st.state;
            context = st.context;
            align = st.align;
        }
        let probs = if rows.is_empty() {
            Tensor2D::zeros(0, self.vocab())
        } else {
            Tensor2D::from_rows(&rows)?
        };
        Ok(PhonemeEmbeddingSeq { probs, truncated })
    }

    /// Phoneme embeddings: per transcript token when teacher-forced,
    /// otherwise from greedy decoding.
    pub fn extract_phoneme_embeddings(
        &self,
        features: &Tensor2D,
        transcript: Option<&[String]>,
        teacher_forced: bool,
    ) -> Result<PhonemeEmbeddingSeq> {
        if teacher_forced {
            let transcript =
                transcript.ok_or_else(|| Error::invalid("teacher-forced extraction requires a transcript"))?;
            let tokens = self.inventory.encode(transcript)?;
            let (probs, _) = self.teacher_forced(&self.params, features, &tokens)?;
            Ok(PhonemeEmbeddingSeq {
                probs: probs.slice_rows(0, tokens.len()),
                truncated: false,
            })
        } else {
            self.free_running(features)
        }
    }

    /// Greedy phoneme decode with special tokens stripped.
    pub fn decode_phonemes(&self, features: &Tensor2D) -> Result<DecodedPhonemes> {
        let seq = self.free_running(features)?;
        let phones = seq
            .argmax()
            .into_iter()
            .filter(|&t| t >= 2)
            .map(|t| self.inventory.symbol(t).to_string())
            .collect();
        Ok(DecodedPhonemes {
            phones,
            truncated: seq.truncated,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPhonemes {
    pub phones: Vec<String>,
    pub truncated: bool,
}

pub(crate) struct TeacherCache {
    enc: EncodeCache,
    mem: AttentionMemory,
    steps: Vec<DecodeStepCache>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{numeric_gradient, relative_error};
    use crate::nn::loss::softmax_cross_entropy;

    fn tiny() -> SpeechEncoder {
        let inv = PhonemeInventory::new(vec![("a".into(), true), ("b".into(), false), ("c".into(), true)]).unwrap();
        let cfg = EncoderConfig {
            conv_channels: vec![3, 2],
            conv_pool: vec![true, false],
            conv_kernel: 3,
            blstm_units: 2,
            blstm_layers: 1,
            attention_dim: 3,
            attention_kernel: 3,
            decoder_units: 3,
            decoder_layers: 2,
        };
        SpeechEncoder::new(cfg, inv, 5).unwrap()
    }

    fn feats(rows: usize) -> Tensor2D {
        Tensor2D::from_vec(rows, FEATURE_DIM, (0..rows * FEATURE_DIM).map(|i| (i as f64 * 0.173).sin()).collect())
            .unwrap()
    }

    #[test]
    fn pooling_adjoint() {
        let x = Tensor2D::from_vec(5, 2, (0..10).map(|i| i as f64).collect()).unwrap();
        let g = Tensor2D::from_vec(3, 2, vec![1.0, -2.0, 0.5, 3.0, -1.0, 2.0]).unwrap();
        let lhs: f64 = pool2(&x).as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.as_slice().iter().zip(pool2_backward(&g, 5).as_slice()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn teacher_forced_gradient_matches_finite_differences() {
        let enc = tiny();
        let x = feats(9);
        let tokens = vec![2, 4, 3];
        let targets: Vec<usize> = tokens.iter().copied().chain([EOS_TOKEN]).collect();
        let loss_of = |p: &ParamStore| -> f64 {
            let (probs, _) = enc.teacher_forced(p, &x, &tokens).unwrap();
            let logits = probs.map(|v| v.ln());
            softmax_cross_entropy(&logits, &targets).unwrap().0
        };
        let mut store = enc.params.clone();
        let (probs, cache) = enc.teacher_forced(&store, &x, &tokens).unwrap();
        let (_, dlogits, _) = softmax_cross_entropy(&probs.map(|v| v.ln()), &targets).unwrap();
        store.zero_grad();
        enc.teacher_backward(&mut store, cache, &dlogits).unwrap();
        let mut worst = 0.0f64;
        for name in ["dec/out/W", "dec/lstm/l0/W", "dec/lstm/l1/U", "dec/att/F", "dec/att/Wm", "enc/blstm/l0/fw/U", "enc/conv0/W", "enc/conv1/b"] {
            let base = enc.params.value(name).unwrap().clone();
            let mut probe = enc.params.clone();
            let num = numeric_gradient(base.as_slice(), 1e-5, |v| {
                probe.value_mut(name).unwrap().as_mut_slice().copy_from_slice(v);
                loss_of(&probe)
            });
            for (a, n) in store.grad(name).unwrap().as_slice().iter().zip(&num) {
                worst = worst.max(relative_error(*a, *n));
            }
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn embeddings_are_distributions() {
        let enc = tiny();
        let x = feats(12);
        let t: Vec<String> = ["a", "b", "c", "a"].iter().map(|s| s.to_string()).collect();
        let e = enc.extract_phoneme_embeddings(&x, Some(&t), true).unwrap();
        assert_eq!(e.tokens(), 4);
        assert_eq!(e.dim(), enc.vocab());
        for r in 0..e.tokens() {
            let s: f64 = e.probs.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert!(enc.extract_phoneme_embeddings(&x, None, true).is_err());
        let free = enc.free_running(&x).unwrap();
        assert!(free.tokens() <= 2 * 3);
        assert_eq!(enc.decode_phonemes(&x).unwrap(), enc.decode_phonemes(&x).unwrap());
    }
}
