use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use atyvc_core::config::PipelineConfig;
use atyvc_core::pipeline::{run_stage, Stage, Workspace, WORKSPACE_ENV};
use atyvc_core::selftest::run_selftest;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "atyvc", version, about = "Atypical-to-typical voice conversion pipeline")]
struct Cli {
    /// TOML config merged over the selected profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    /// Workspace directory.
    #[arg(long, global = true, env = WORKSPACE_ENV, default_value = "atyvc-workspace")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    PaperScale,
}

impl Profile {
    fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::PaperScale => "paper-scale",
        }
    }
}

#[derive(Subcommand)]
enum Command {
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
    /// Every stage from gen-corpus to evaluate.
    RunAll,
    /// Gradient, alignment and edit-distance invariant suites.
    Selftest,
    /// Prints the resolved config as TOML.
    ShowConfig,
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::GenCorpus => Stage::GenCorpus,
            Command::TrainSpeechEncoder => Stage::TrainSpeechEncoder,
            Command::FinetuneSpeechEncoder => Stage::FinetuneSpeechEncoder,
            Command::TrainProsody => Stage::TrainProsody,
            Command::TrainSpeakerEncoder => Stage::TrainSpeakerEncoder,
            Command::TrainEncCm => Stage::TrainEncCm,
            Command::PretrainAdaCm => Stage::PretrainAdaCm,
            Command::Adapt => Stage::Adapt,
            Command::Convert => Stage::Convert,
            Command::Evaluate => Stage::Evaluate,
            _ => return None,
        })
    }
}

fn run_stages(stages: &[Stage], config: &PipelineConfig, ws: &Workspace) -> Result<()> {
    for &stage in stages {
        let manifest = run_stage(stage, config, ws).with_context(|| format!("stage {stage} failed"))?;
        println!("{stage}: ok ({})", ws.manifest(stage).display());
        for (k, v) in &manifest.summary {
            println!("  {k} = {v:.6}");
        }
    }
    if stages.contains(&Stage::Evaluate) {
        let table = std::fs::read_to_string(ws.report("eval.txt")).context("reading the evaluation table")?;
        print!("{table}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let profile = cli.profile.map(Profile::name);
    let resolve = || -> Result<PipelineConfig> {
        let config = PipelineConfig::resolve(profile, cli.config.as_deref(), cli.seed).context("invalid config")?;
        config.validate().context("invalid config")?;
        Ok(config)
    };
    match &cli.command {
        Command::Selftest => {
            let seed = cli.seed.unwrap_or(resolve()?.seed);
            let outcomes = run_selftest(seed)?;
            for o in &outcomes {
                println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
            }
            Ok(outcomes.iter().all(|o| o.passed))
        }
        Command::ShowConfig => {
            print!("{}", resolve()?.to_toml());
            Ok(true)
        }
        Command::RunAll => {
            run_stages(&Stage::ALL, &resolve()?, &Workspace::new(&cli.out))?;
            Ok(true)
        }
        cmd => {
            let stage = cmd.stage().expect("remaining commands are stages");
            run_stages(&[stage], &resolve()?, &Workspace::new(&cli.out))?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
