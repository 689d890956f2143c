//! Stage-by-stage orchestration over a workspace directory.
//!
//! ```text
//! corpus/typical/, corpus/atypical/     generated corpora
//! models/*.ckpt                         checkpoints
//! embeddings/*.txt                      exported speaker embeddings
//! converted/<system>/<mode>/            converted features and alignments
//! reports/                              training reports and the evaluation table
//! manifests/<stage>.json                config hash, seeds and output digests
//! ```
//!
//! A stage that fails leaves `manifests/<stage>.incomplete` holding the error.

mod evaluate;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::conversion::ProsodyMode;
use crate::error::{Error, Result};
use crate::util::{atomic_write, derive_seed, sha256_hex};

pub use evaluate::CONTROL_PREFIX;

/// Environment variable naming the default workspace directory.
pub const WORKSPACE_ENV: &str = "ATYVC_WORKSPACE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    GenCorpus,
    TrainSpeechEncoder,
    FinetuneSpeechEncoder,
    TrainProsody,
    TrainSpeakerEncoder,
    TrainEncCm,
    PretrainAdaCm,
    Adapt,
    Convert,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::GenCorpus,
        Stage::TrainSpeechEncoder,
        Stage::FinetuneSpeechEncoder,
        Stage::TrainProsody,
        Stage::TrainSpeakerEncoder,
        Stage::TrainEncCm,
        Stage::PretrainAdaCm,
        Stage::Adapt,
        Stage::Convert,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCorpus => "gen-corpus",
            Stage::TrainSpeechEncoder => "train-speech-encoder",
            Stage::FinetuneSpeechEncoder => "finetune-speech-encoder",
            Stage::TrainProsody => "train-prosody",
            Stage::TrainSpeakerEncoder => "train-speaker-encoder",
            Stage::TrainEncCm => "train-enc-cm",
            Stage::PretrainAdaCm => "pretrain-ada-cm",
            Stage::Adapt => "adapt",
            Stage::Convert => "convert",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown stage {s:?}")))
    }
}

/// Conversion systems produced by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum System {
    EncCm,
    AdaCm,
}

impl System {
    pub const ALL: [System; 2] = [System::EncCm, System::AdaCm];

    pub fn label(self) -> &'static str {
        match self {
            System::EncCm => "Enc-CM",
            System::AdaCm => "Ada-CM",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            System::EncCm => "enc-cm",
            System::AdaCm => "ada-cm",
        }
    }
}

/// Report row name of one system under one prosody mode.
pub fn row_name(system: System, mode: ProsodyMode) -> String {
    format!("{} {mode}", system.label())
}

pub const ORIGINAL_ROW: &str = "Original";

fn mode_slug(mode: ProsodyMode) -> String {
    mode.to_string().to_ascii_lowercase().replace('+', "-")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn typical_corpus(&self) -> PathBuf {
        self.root.join("corpus/typical")
    }

    pub fn atypical_corpus(&self) -> PathBuf {
        self.root.join("corpus/atypical")
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.ckpt"))
    }

    pub fn embeddings(&self, name: &str) -> PathBuf {
        self.root.join("embeddings").join(format!("{name}.txt"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn converted(&self, system: System, mode: ProsodyMode) -> PathBuf {
        self.root.join("converted").join(system.slug()).join(mode_slug(mode))
    }

    pub fn manifest(&self, stage: Stage) -> PathBuf {
        self.root.join("manifests").join(format!("{stage}.json"))
    }

    pub fn incomplete_marker(&self, stage: Stage) -> PathBuf {
        self.root.join("manifests").join(format!("{stage}.incomplete"))
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    /// Relative to the workspace root.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub profile: String,
    pub config_sha256: String,
    pub seed: u64,
    pub stage_seed: u64,
    pub inputs: Vec<ArtifactDigest>,
    pub outputs: Vec<ArtifactDigest>,
    pub summary: BTreeMap<String, f64>,
}

/// SHA-256 of a file, or of the sorted `relative-path<TAB>digest` listing of
/// a directory tree.
pub fn digest_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut lines = Vec::new();
        collect_digests(path, path, &mut lines)?;
        lines.sort();
        Ok(sha256_hex(lines.concat().as_bytes()))
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }
}

fn collect_digests(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_digests(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            out.push(format!("{rel}\t{}\n", digest_path(&p)?));
        }
    }
    Ok(())
}

/// What a stage read and wrote, filled in as it runs.
pub(crate) struct StageContext<'a> {
    pub config: &'a PipelineConfig,
    pub ws: &'a Workspace,
    pub stage: Stage,
    pub seed: u64,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    pub summary: BTreeMap<String, f64>,
}

impl StageContext<'_> {
    /// Records an input, failing with a missing-artifact error naming the
    /// stage that produces it.
    pub fn input(&mut self, path: PathBuf, producer: Stage) -> Result<PathBuf> {
        if !path.exists() {
            return Err(Error::MissingArtifact(format!(
                "{} (run `{producer}` first)",
                self.ws.relative(&path)
            )));
        }
        if !self.inputs.contains(&path) {
            self.inputs.push(path.clone());
        }
        Ok(path)
    }

    pub fn output(&mut self, path: PathBuf) -> PathBuf {
        if !self.outputs.contains(&path) {
            self.outputs.push(path.clone());
        }
        path
    }

    pub fn sub_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    fn digests(&self, paths: &[PathBuf]) -> Result<Vec<ArtifactDigest>> {
        paths
            .iter()
            .map(|p| {
                Ok(ArtifactDigest {
                    path: self.ws.relative(p),
                    sha256: digest_path(p)?,
                })
            })
            .collect()
    }
}

pub fn stage_seed(config: &PipelineConfig, stage: Stage) -> u64 {
    derive_seed(config.seed, stage.name())
}

/// Runs one stage and writes its manifest.
pub fn run_stage(stage: Stage, config: &PipelineConfig, ws: &Workspace) -> Result<StageManifest> {
    config.validate()?;
    let manifest_path = ws.manifest(stage);
    let marker = ws.incomplete_marker(stage);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    }
    atomic_write(&marker, b"running\n")?;
    let mut ctx = StageContext {
        config,
        ws,
        stage,
        seed: stage_seed(config, stage),
        inputs: Vec::new(),
        outputs: Vec::new(),
        summary: BTreeMap::new(),
    };
    log::info!("stage {stage}: start");
    let result = stages::run(&mut ctx).and_then(|()| {
        Ok(StageManifest {
            stage,
            profile: config.profile.clone(),
            config_sha256: config.sha256(),
            seed: config.seed,
            stage_seed: ctx.seed,
            inputs: ctx.digests(&ctx.inputs)?,
            outputs: ctx.digests(&ctx.outputs)?,
            summary: ctx.summary.clone(),
        })
    });
    match result {
        Ok(manifest) => {
            let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
            atomic_write(&manifest_path, json.as_bytes())?;
            fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
            log::info!("stage {stage}: done");
            Ok(manifest)
        }
        Err(e) => {
            atomic_write(&marker, format!("failed: {e}\n").as_bytes())?;
            Err(e)
        }
    }
}

/// Every stage in order.
pub fn run_all(config: &PipelineConfig, ws: &Workspace) -> Result<Vec<StageManifest>> {
    Stage::ALL.iter().map(|&s| run_stage(s, config, ws)).collect()
}
