//! Pipeline configuration: TOML with profile includes and deep merging.
//!
//! A file may name `include = "<profile or path>"`; included tables are the
//! base and the including file's values override them key by key. Built-in
//! profiles are `desk` and `paper-scale`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::conversion::{AdaptMode, ConversionConfig, ProsodyMode};
use crate::corpus::{AtypicalDistortion, TextConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::nn::{OptimizerConfig, TrainConfig};
use crate::prosody::ProsodyConfig;
use crate::speaker::encoder::SpeakerEncoderConfig;
use crate::util::{read_to_string, sha256_hex};

pub const DESK_PROFILE: &str = include_str!("../profiles/desk.toml");
pub const PAPER_SCALE_PROFILE: &str = include_str!("../profiles/paper-scale.toml");
const MAX_INCLUDE_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl TrainSettings {
    pub fn new(steps: usize, batch_size: usize, optimizer: OptimizerConfig) -> Self {
        Self {
            steps,
            batch_size,
            optimizer,
        }
    }

    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig::new(self.steps, self.batch_size, self.optimizer, seed)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config(format!("{what}: batch_size must be positive")));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::Config(format!("{what}: learning rate must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub typical_speakers: usize,
    pub utterances_per_speaker: usize,
    pub atypical_speaker: String,
    pub atypical_utterances: usize,
    /// The first this many atypical utterances are used for encoder
    /// fine-tuning, DSE extraction and adaptation; the rest are evaluated.
    pub adaptation_utterances: usize,
    /// Typical speaker whose base F0 the atypical speaker shares.
    pub reference_speaker: String,
    pub text: TextConfig,
    pub distortion: AtypicalDistortion,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            typical_speakers: 8,
            utterances_per_speaker: 40,
            atypical_speaker: "dys00".into(),
            atypical_utterances: 80,
            adaptation_utterances: 60,
            reference_speaker: "spk00".into(),
            text: TextConfig::default(),
            distortion: AtypicalDistortion {
                duration_stretch: 2.0,
                f0_shift: 0.4,
                jitter: 0,
                blend: 0.25,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeechEncoderSection {
    pub model: EncoderConfig,
    pub pretrain: TrainSettings,
    pub finetune: TrainSettings,
}

impl Default for SpeechEncoderSection {
    fn default() -> Self {
        Self {
            model: EncoderConfig::default(),
            pretrain: TrainSettings::new(2000, 8, OptimizerConfig::adadelta()),
            finetune: TrainSettings::new(800, 8, OptimizerConfig::adadelta()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProsodySection {
    pub model: ProsodyConfig,
    /// Typical speaker the predictors learn from.
    pub speaker: String,
    pub duration: TrainSettings,
    pub f0: TrainSettings,
}

impl Default for ProsodySection {
    fn default() -> Self {
        Self {
            model: ProsodyConfig::default(),
            speaker: "spk00".into(),
            duration: TrainSettings::new(600, 16, OptimizerConfig::adam()),
            f0: TrainSettings::new(600, 16, OptimizerConfig::adam()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeakerEncoderSection {
    pub model: SpeakerEncoderConfig,
    pub train: TrainSettings,
}

impl Default for SpeakerEncoderSection {
    fn default() -> Self {
        Self {
            model: SpeakerEncoderConfig::default(),
            train: TrainSettings::new(400, 4, OptimizerConfig::adam().with_lr(3e-3)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConversionSection {
    pub model: ConversionConfig,
    pub enc_cm: TrainSettings,
    pub ada_cm: TrainSettings,
    pub adapt: TrainSettings,
    pub adapt_mode: AdaptMode,
}

impl Default for ConversionSection {
    fn default() -> Self {
        Self {
            model: ConversionConfig::default(),
            enc_cm: TrainSettings::new(800, 16, OptimizerConfig::adam()),
            ada_cm: TrainSettings::new(800, 16, OptimizerConfig::adam()),
            adapt: TrainSettings::new(200, 16, OptimizerConfig::adam()),
            adapt_mode: AdaptMode::Joint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvertSection {
    pub modes: Vec<ProsodyMode>,
    /// Also write Griffin-Lim waveforms of converted mels.
    pub waveforms: bool,
    pub griffin_lim_iterations: usize,
}

impl Default for ConvertSection {
    fn default() -> Self {
        Self {
            modes: ProsodyMode::ALL.to_vec(),
            waveforms: false,
            griffin_lim_iterations: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Reference text file (`utt<TAB>text`) for CER/WER of external ASR output.
    pub references: Option<PathBuf>,
    /// Report row name → hypothesis text file in the same format.
    pub hypotheses: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub profile: String,
    pub seed: u64,
    pub corpus: CorpusSection,
    pub speech_encoder: SpeechEncoderSection,
    pub prosody: ProsodySection,
    pub speaker_encoder: SpeakerEncoderSection,
    pub conversion: ConversionSection,
    pub convert: ConvertSection,
    pub evaluate: EvaluateSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            profile: "desk".into(),
            seed: 7,
            corpus: CorpusSection::default(),
            speech_encoder: SpeechEncoderSection::default(),
            prosody: ProsodySection::default(),
            speaker_encoder: SpeakerEncoderSection::default(),
            conversion: ConversionSection::default(),
            convert: ConvertSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

pub fn builtin_profile(name: &str) -> Option<&'static str> {
    match name {
        "desk" => Some(DESK_PROFILE),
        "paper-scale" => Some(PAPER_SCALE_PROFILE),
        _ => None,
    }
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(format!("{origin}: {e}")))
}

/// Values of `over` replace those of `base`; nested tables merge recursively.
pub fn deep_merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => deep_merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Resolves `include` chains. Relative paths inside a file (includes and
/// evaluation inputs) are taken relative to that file's directory.
fn resolve_table(text: &str, origin: &str, dir: Option<&Path>, depth: usize) -> Result<toml::Table> {
    if depth > MAX_INCLUDE_DEPTH {
        return Err(Error::Config(format!("{origin}: include chain deeper than {MAX_INCLUDE_DEPTH}")));
    }
    let mut table = parse_table(text, origin)?;
    if let Some(dir) = dir {
        absolutize_paths(&mut table, dir);
    }
    let include = match table.remove("include") {
        None => return Ok(table),
        Some(toml::Value::String(s)) => s,
        Some(_) => return Err(Error::Config(format!("{origin}: include must be a string"))),
    };
    let mut base = if let Some(text) = builtin_profile(&include) {
        resolve_table(text, &include, None, depth + 1)?
    } else {
        let path = match dir {
            Some(d) => d.join(&include),
            None => PathBuf::from(&include),
        };
        let text = read_to_string(&path)
            .map_err(|_| Error::Config(format!("{origin}: cannot read included file {}", path.display())))?;
        resolve_table(&text, &path.display().to_string(), path.parent(), depth + 1)?
    };
    deep_merge(&mut base, table);
    Ok(base)
}

fn absolutize_paths(table: &mut toml::Table, dir: &Path) {
    let Some(toml::Value::Table(eval)) = table.get_mut("evaluate") else {
        return;
    };
    let fix = |v: &mut toml::Value| {
        if let toml::Value::String(s) = v {
            if Path::new(s.as_str()).is_relative() {
                *s = dir.join(s.as_str()).display().to_string();
            }
        }
    };
    if let Some(v) = eval.get_mut("references") {
        fix(v);
    }
    if let Some(toml::Value::Table(h)) = eval.get_mut("hypotheses") {
        h.iter_mut().for_each(|(_, v)| fix(v));
    }
}

impl PipelineConfig {
    /// Parses one complete TOML document, resolving its includes.
    pub fn from_toml(text: &str, dir: Option<&Path>) -> Result<Self> {
        let table = resolve_table(text, "config", dir, 0)?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let config: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Profile defaults, then the config file (if any), then the seed override.
    pub fn resolve(profile: Option<&str>, config_path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let name = profile.unwrap_or("desk");
        let text = builtin_profile(name)
            .ok_or_else(|| Error::Config(format!("unknown profile {name:?} (desk or paper-scale)")))?;
        let mut table = resolve_table(text, name, None, 0)?;
        if let Some(path) = config_path {
            let text = read_to_string(path)?;
            let over = resolve_table(&text, &path.display().to_string(), path.parent(), 0)?;
            deep_merge(&mut table, over);
        }
        if let Some(s) = seed {
            let s = i64::try_from(s).map_err(|_| Error::Config(format!("seed {s} does not fit in a TOML integer")))?;
            table.insert("seed".into(), toml::Value::Integer(s));
        }
        Self::from_table(table)
    }

    pub fn validate(&self) -> Result<()> {
        if builtin_profile(&self.profile).is_none() {
            return Err(Error::Config(format!(
                "profile must be desk or paper-scale, got {:?}",
                self.profile
            )));
        }
        let c = &self.corpus;
        if c.typical_speakers == 0 || c.utterances_per_speaker == 0 {
            return Err(Error::Config("corpus needs at least one typical speaker and utterance".into()));
        }
        if c.adaptation_utterances == 0 || c.adaptation_utterances >= c.atypical_utterances {
            return Err(Error::Config(format!(
                "adaptation_utterances must lie in 1..{}, got {}",
                c.atypical_utterances, c.adaptation_utterances
            )));
        }
        let typical: Vec<String> = self.typical_speaker_ids();
        for (what, s) in [("corpus.reference_speaker", &c.reference_speaker), ("prosody.speaker", &self.prosody.speaker)] {
            if !typical.contains(s) {
                return Err(Error::Config(format!("{what} {s:?} is not one of the generated typical speakers")));
            }
        }
        if typical.contains(&c.atypical_speaker) {
            return Err(Error::Config(format!("atypical speaker id {:?} collides with a typical speaker", c.atypical_speaker)));
        }
        if c.distortion.duration_stretch <= 0.0 {
            return Err(Error::Config("corpus.distortion.duration_stretch must be positive".into()));
        }
        if c.typical_speakers < 2 {
            return Err(Error::Config("the speaker-similarity control needs at least two typical speakers".into()));
        }
        if self.speaker_encoder.model.speakers_per_batch > c.typical_speakers {
            return Err(Error::Config(format!(
                "speaker_encoder.model.speakers_per_batch {} exceeds the {} typical speakers",
                self.speaker_encoder.model.speakers_per_batch, c.typical_speakers
            )));
        }
        if self.speaker_encoder.train.batch_size != self.speaker_encoder.model.speakers_per_batch {
            return Err(Error::Config(format!(
                "speaker_encoder.train.batch_size {} must equal speakers_per_batch {}",
                self.speaker_encoder.train.batch_size, self.speaker_encoder.model.speakers_per_batch
            )));
        }
        if self.speaker_encoder.model.embedding_dim != self.conversion.model.embedding_dim {
            return Err(Error::Config(format!(
                "speaker encoder embedding_dim {} differs from conversion embedding_dim {}",
                self.speaker_encoder.model.embedding_dim, self.conversion.model.embedding_dim
            )));
        }
        self.prosody.model.validate()?;
        for (what, t) in [
            ("speech_encoder.pretrain", &self.speech_encoder.pretrain),
            ("speech_encoder.finetune", &self.speech_encoder.finetune),
            ("prosody.duration", &self.prosody.duration),
            ("prosody.f0", &self.prosody.f0),
            ("speaker_encoder.train", &self.speaker_encoder.train),
            ("conversion.enc_cm", &self.conversion.enc_cm),
            ("conversion.ada_cm", &self.conversion.ada_cm),
            ("conversion.adapt", &self.conversion.adapt),
        ] {
            t.validate(what)?;
        }
        if self.convert.modes.is_empty() {
            return Err(Error::Config("convert.modes is empty".into()));
        }
        let e = &self.evaluate;
        if !e.hypotheses.is_empty() && e.references.is_none() {
            return Err(Error::Config("evaluate.hypotheses given without evaluate.references".into()));
        }
        for p in e.references.iter().chain(e.hypotheses.values()) {
            if !p.is_file() {
                return Err(Error::Config(format!("evaluation file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn typical_speaker_ids(&self) -> Vec<String> {
        (0..self.corpus.typical_speakers).map(|k| format!("spk{k:02}")).collect()
    }

    /// JSON of the resolved configuration; field order is fixed by the types.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_profile_matches_defaults() {
        let desk = PipelineConfig::resolve(Some("desk"), None, None).unwrap();
        assert_eq!(desk, PipelineConfig::default());
        let back = PipelineConfig::from_toml(&desk.to_toml(), None).unwrap();
        assert_eq!(back, desk);
    }

    #[test]
    fn paper_scale_mirrors_reported_settings() {
        let p = PipelineConfig::resolve(Some("paper-scale"), None, None).unwrap();
        assert_eq!(p.speech_encoder.model.blstm_layers, 5);
        assert_eq!(p.speech_encoder.model.blstm_units, 512);
        assert_eq!(p.speech_encoder.model.decoder_layers, 2);
        assert_eq!(p.speech_encoder.model.decoder_units, 1024);
        assert_eq!(p.speech_encoder.model.conv_channels.len(), 6);
        assert_eq!(p.speech_encoder.pretrain.steps, 1_000_000);
        assert_eq!(p.speech_encoder.finetune.steps, 2000);
        assert_eq!(p.prosody.model.gru_units, 256);
        assert_eq!(p.prosody.duration.steps, 30_000);
        assert_eq!(p.prosody.f0.batch_size, 16);
        assert_eq!(p.conversion.model.blstm_layers, 4);
        assert_eq!(p.conversion.model.fc_units, 512);
        assert_eq!(p.conversion.model.embedding_dim, 256);
        assert_eq!(p.conversion.enc_cm.steps, 50_000);
        assert_eq!(p.conversion.adapt.steps, 3000);
    }

    #[test]
    fn includes_merge_and_seed_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.toml"), "include = \"desk\"\n[corpus]\ntypical_speakers = 5\n").unwrap();
        std::fs::write(
            dir.path().join("run.toml"),
            "include = \"base.toml\"\n[corpus]\nutterances_per_speaker = 6\n[prosody.f0]\nsteps = 9\nbatch_size = 2\noptimizer = { algorithm = \"adam\", learning_rate = 0.01 }\n",
        )
        .unwrap();
        let c = PipelineConfig::resolve(None, Some(&dir.path().join("run.toml")), Some(99)).unwrap();
        assert_eq!(c.corpus.typical_speakers, 5);
        assert_eq!(c.corpus.utterances_per_speaker, 6);
        assert_eq!(c.corpus.atypical_speaker, "dys00");
        assert_eq!(c.prosody.f0.steps, 9);
        assert_eq!(c.seed, 99);
        assert_ne!(c.sha256(), PipelineConfig::default().sha256());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(PipelineConfig::from_toml("[corpus]\nbogus = 1\n", None).is_err());
        assert!(PipelineConfig::from_toml("[prosody.model]\nconv_kernels = [3, 3, 3]\n", None).is_err());
        assert!(PipelineConfig::from_toml("[corpus]\natypical_speaker = \"spk01\"\n", None).is_err());
        assert!(PipelineConfig::from_toml("[evaluate]\nreferences = \"/nonexistent/ref.txt\"\n", None).is_err());
        assert!(PipelineConfig::resolve(Some("huge"), None, None).is_err());
        let err = PipelineConfig::from_toml("include = \"self.toml\"\n", Some(Path::new("/nonexistent"))).unwrap_err();
        assert!(err.to_string().contains("self.toml"), "{err}");
    }
}
