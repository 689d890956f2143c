use std::collections::HashMap;
use std::path::Path;

use super::stages::{atypical_split, load_atypical, load_speech_encoder, load_typical};
use super::{row_name, Stage, StageContext, System, ORIGINAL_ROW};
use crate::conversion::ProsodyMode;
use crate::corpus::{render_mel, OracleProsody};
use crate::dsp::f0::F0Contour;
use crate::dsp::features::UtteranceFeatures;
use crate::dsp::mel::MelSpectrogram;
use crate::encoder::{encoder_features, SpeechEncoder};
use crate::error::{Error, Result};
use crate::eval::metrics::f0_squared_error;
use crate::eval::{build_report, cer, mel_l1, per, spectral_template_distance, wer, SystemMetrics};
use crate::prosody::alignment::load_alignments;
use crate::util::{atomic_write, read_to_string};

/// Prefix of the report row scoring other speakers' renderings: every typical
/// speaker rendered along the Enc-CM path, pooled.
pub const CONTROL_PREFIX: &str = "Other speaker";

/// Pools per-utterance errors into one report row.
#[derive(Default)]
struct Pooled {
    per_pairs: Vec<(Vec<String>, Vec<String>)>,
    dur_abs: usize,
    dur_n: usize,
    f0_sq: f64,
    f0_n: usize,
    l1_sum: f64,
    l1_n: usize,
    template_sum: f64,
    template_n: usize,
}

impl Pooled {
    fn prosody(&mut self, durations: &[usize], f0: &F0Contour, oracle: &OracleProsody) -> Result<()> {
        if durations.len() != oracle.durations.len() {
            return Err(Error::invalid("converted and oracle phoneme counts differ"));
        }
        self.dur_abs += durations.iter().zip(&oracle.durations).map(|(a, b)| a.abs_diff(*b)).sum::<usize>();
        self.dur_n += durations.len();
        let (sq, n) = f0_squared_error(f0, durations, &oracle.f0, &oracle.durations)?;
        self.f0_sq += sq;
        self.f0_n += n;
        Ok(())
    }

    fn recognize(&mut self, enc: &SpeechEncoder, reference: &[String], mel: &MelSpectrogram) -> Result<()> {
        let decoded = enc.decode_phonemes(&encoder_features(mel)?)?;
        self.per_pairs.push((reference.to_vec(), decoded.phones));
        Ok(())
    }

    fn l1(&mut self, a: &MelSpectrogram, b: &MelSpectrogram) -> Result<()> {
        let cells = a.values.len();
        self.l1_sum += mel_l1(a, b)? * cells as f64;
        self.l1_n += cells;
        self.template_sum += spectral_template_distance(a, b)?;
        self.template_n += 1;
        Ok(())
    }

    fn finish(self, name: &str) -> Result<SystemMetrics> {
        Ok(SystemMetrics {
            per: if self.per_pairs.is_empty() { None } else { Some(per(&self.per_pairs)?) },
            duration_deviation: (self.dur_n > 0).then(|| self.dur_abs as f64 / self.dur_n as f64),
            f0_rmse: (self.f0_n > 0).then(|| (self.f0_sq / self.f0_n as f64).sqrt()),
            mel_l1: (self.l1_n > 0).then(|| self.l1_sum / self.l1_n as f64),
            speaker_distance: (self.template_n > 0).then(|| self.template_sum / self.template_n as f64),
            ..SystemMetrics::new(name)
        })
    }
}

fn load_text(path: &Path) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (n, line) in read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, format!("line {}: expected utterance-id<TAB>text", n + 1)))?;
        out.insert(id.to_string(), text.to_string());
    }
    Ok(out)
}

fn external_rates(ctx: &StageContext, rows: &mut Vec<SystemMetrics>) -> Result<()> {
    let section = &ctx.config.evaluate;
    let Some(ref_path) = &section.references else {
        return Ok(());
    };
    let refs = load_text(ref_path)?;
    for (row, hyp_path) in &section.hypotheses {
        let hyps = load_text(hyp_path)?;
        let mut ids: Vec<&String> = hyps.keys().collect();
        ids.sort();
        let pairs = ids
            .into_iter()
            .map(|id| {
                let r = refs
                    .get(id)
                    .ok_or_else(|| Error::invalid(format!("{}: no reference for {id}", hyp_path.display())))?;
                Ok((r.clone(), hyps[id].clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let idx = match rows.iter().position(|r| &r.system == row) {
            Some(i) => i,
            None => {
                rows.push(SystemMetrics::new(row));
                rows.len() - 1
            }
        };
        rows[idx].cer = Some(cer(&pairs)?);
        rows[idx].wer = Some(wer(&pairs)?);
    }
    Ok(())
}

pub(super) fn evaluate(ctx: &mut StageContext) -> Result<()> {
    let typical = load_typical(ctx)?;
    let atypical = load_atypical(ctx)?;
    let enc = load_speech_encoder(ctx, "speech_encoder", Stage::TrainSpeechEncoder)?;
    let speaker = ctx.config.corpus.atypical_speaker.clone();
    let language = atypical
        .language
        .clone()
        .ok_or_else(|| Error::MissingArtifact("synthetic.json in the atypical corpus".into()))?;
    let target = atypical
        .profile(&speaker)
        .cloned()
        .ok_or_else(|| Error::MissingArtifact(format!("speaker profile of {speaker}")))?;
    if typical.profiles.is_empty() {
        return Err(Error::MissingArtifact("synthetic.json in the typical corpus".into()));
    }
    let (_, eval) = atypical_split(ctx, &atypical);
    if eval.is_empty() {
        return Err(Error::invalid("no atypical utterances are held out for evaluation"));
    }
    let oracle = |r: &crate::corpus::UtteranceRecord| {
        r.oracle
            .clone()
            .ok_or_else(|| Error::invalid(format!("{} has no oracle prosody", r.utterance_id)))
    };

    let mut rows = Vec::new();
    let mut original = Pooled::default();
    for r in &eval {
        original.prosody(&r.durations, &r.f0, &oracle(r)?)?;
        original.recognize(&enc, &r.phones, &r.mel)?;
    }
    rows.push(original.finish(ORIGINAL_ROW)?);

    let modes = ctx.config.convert.modes.clone();
    let path_mode = if modes.contains(&ProsodyMode::PdPf) { ProsodyMode::PdPf } else { modes[0] };
    let mut control_row = Pooled::default();
    for system in System::ALL {
        for &mode in &modes {
            let dir = ctx.input(ctx.ws.converted(system, mode), Stage::Convert)?;
            let aligns: HashMap<String, Vec<usize>> = load_alignments(&dir.join("alignments.txt"))?
                .into_iter()
                .map(|a| (a.utterance_id, a.durations))
                .collect();
            let mut pooled = Pooled::default();
            for r in &eval {
                let feats = UtteranceFeatures::load(&dir.join("feats").join(format!("{}.feat", r.utterance_id)))?;
                let durations = aligns
                    .get(&r.utterance_id)
                    .ok_or_else(|| Error::MissingArtifact(format!("alignment of {} in {}", r.utterance_id, dir.display())))?;
                pooled.prosody(durations, &feats.f0, &oracle(r)?)?;
                pooled.recognize(&enc, &r.phones, &feats.mel)?;
                let reference = render_mel(&target, &language, &r.phones, durations, &feats.f0)?;
                pooled.l1(&feats.mel, &reference)?;
                if system == System::ALL[0] && mode == path_mode {
                    for other in &typical.profiles {
                        control_row.l1(&render_mel(other, &language, &r.phones, durations, &feats.f0)?, &reference)?;
                    }
                }
            }
            rows.push(pooled.finish(&row_name(system, mode))?);
        }
    }
    rows.push(control_row.finish(&format!("{CONTROL_PREFIX} (mean of {})", typical.profiles.len()))?);
    external_rates(ctx, &mut rows)?;

    let (report, table) = build_report(&rows);
    atomic_write(&ctx.output(ctx.ws.report("eval.json")), report.to_json().as_bytes())?;
    atomic_write(&ctx.output(ctx.ws.report("eval.txt")), table.as_bytes())?;
    for row in &report.rows {
        for (k, v) in [
            ("per", row.per),
            ("mel_l1", row.mel_l1),
            ("speaker_distance", row.speaker_distance),
            ("f0_rmse", row.f0_rmse),
            ("duration_deviation", row.duration_deviation),
        ] {
            if let Some(v) = v {
                ctx.summary.insert(format!("{}/{k}", row.system), v);
            }
        }
    }
    Ok(())
}
