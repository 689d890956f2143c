//! Full conversion: features → phoneme embeddings → durations → expansion →
//! F0 → conditioned generation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::model::{ConditionedInput, ConversionModel};
use crate::dsp::f0::F0Contour;
use crate::dsp::mel::MelSpectrogram;
use crate::encoder::model::{encoder_features, PhonemeEmbeddingSeq};
use crate::encoder::SpeechEncoder;
use crate::error::{Error, Result};
use crate::prosody::{expand_embeddings, ProsodyPredictor};

/// Which of duration and F0 come from ground truth (G) or the predictors (P).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProsodyMode {
    #[serde(rename = "GD+GF")]
    GdGf,
    #[serde(rename = "GD+PF")]
    GdPf,
    #[serde(rename = "PD+PF")]
    PdPf,
}

impl ProsodyMode {
    pub const ALL: [ProsodyMode; 3] = [ProsodyMode::GdGf, ProsodyMode::GdPf, ProsodyMode::PdPf];

    pub fn ground_truth_durations(self) -> bool {
        matches!(self, ProsodyMode::GdGf | ProsodyMode::GdPf)
    }

    pub fn ground_truth_f0(self) -> bool {
        self == ProsodyMode::GdGf
    }
}

impl fmt::Display for ProsodyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProsodyMode::GdGf => "GD+GF",
            ProsodyMode::GdPf => "GD+PF",
            ProsodyMode::PdPf => "PD+PF",
        })
    }
}

impl FromStr for ProsodyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GD+GF" => Ok(ProsodyMode::GdGf),
            "GD+PF" => Ok(ProsodyMode::GdPf),
            "PD+PF" => Ok(ProsodyMode::PdPf),
            "PD+GF" => Err(Error::invalid(
                "mode PD+GF is not supported: ground-truth F0 is only defined on the ground-truth duration grid",
            )),
            other => Err(Error::invalid(format!("unknown prosody mode {other:?} (GD+GF, GD+PF or PD+PF)"))),
        }
    }
}

/// Trained components used for one target speaker.
#[derive(Debug, Clone, Copy)]
pub struct ConversionPipeline<'a> {
    pub encoder: &'a SpeechEncoder,
    pub duration: &'a ProsodyPredictor,
    pub f0: &'a ProsodyPredictor,
    pub model: &'a ConversionModel,
    pub dse: &'a [f64],
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConversionInputs<'a> {
    pub transcript: Option<&'a [String]>,
    pub durations: Option<&'a [usize]>,
    pub f0: Option<&'a F0Contour>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionOutput {
    pub mel: MelSpectrogram,
    pub embeddings: PhonemeEmbeddingSeq,
    pub durations: Vec<usize>,
    /// The F0 track the generator was conditioned on.
    pub f0: F0Contour,
}

pub fn convert_utterance(
    pipeline: &ConversionPipeline,
    mel: &MelSpectrogram,
    inputs: &ConversionInputs,
    mode: ProsodyMode,
) -> Result<ConversionOutput> {
    let features = encoder_features(mel)?;
    let embeddings = match inputs.transcript {
        Some(t) => pipeline.encoder.extract_phoneme_embeddings(&features, Some(t), true)?,
        None => pipeline.encoder.extract_phoneme_embeddings(&features, None, false)?,
    };
    if embeddings.tokens() == 0 {
        return Err(Error::invalid("speech encoder produced no phoneme tokens"));
    }
    let durations = if mode.ground_truth_durations() {
        if inputs.transcript.is_none() {
            return Err(Error::invalid(format!(
                "mode {mode} needs a transcript so embeddings line up with the alignment"
            )));
        }
        let d = inputs
            .durations
            .ok_or_else(|| Error::invalid(format!("mode {mode} needs ground-truth durations")))?;
        if d.len() != embeddings.tokens() {
            return Err(Error::dims("ground-truth durations", embeddings.tokens(), d.len()));
        }
        d.to_vec()
    } else {
        pipeline.duration.predict_durations(&embeddings)?
    };
    let expanded = expand_embeddings(&embeddings.probs, &durations)?;
    let f0 = if mode.ground_truth_f0() {
        let f = inputs
            .f0
            .ok_or_else(|| Error::invalid(format!("mode {mode} needs a ground-truth F0 contour")))?;
        if f.frames() != expanded.rows() {
            return Err(Error::dims("ground-truth F0 frames", expanded.rows(), f.frames()));
        }
        f.clone()
    } else {
        pipeline.f0.predict_f0(&expanded)?
    };
    let cond = ConditionedInput::new(&expanded, &f0, pipeline.dse)?;
    let mel = pipeline.model.forward(&cond)?;
    Ok(ConversionOutput {
        mel,
        embeddings,
        durations,
        f0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_parsing() {
        for m in ProsodyMode::ALL {
            assert_eq!(m.to_string().parse::<ProsodyMode>().unwrap(), m);
        }
        let err = "PD+GF".parse::<ProsodyMode>().unwrap_err().to_string();
        assert!(err.contains("not supported"), "{err}");
        assert!("XX".parse::<ProsodyMode>().is_err());
    }
}
