//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Runs the full desk pipeline twice, so expect it to take a while.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use atyvc_core::config::{PipelineConfig, TrainSettings};
use atyvc_core::conversion::{
    adapt_speaker, pretrain_ada_cm, train_enc_cm, AdaptMode, ConversionExample, ConversionModel, ProsodyMode,
};
use atyvc_core::corpus::{load_corpus, Corpus, UtteranceRecord};
use atyvc_core::encoder::{encoder_features, examples_from_records, finetune_encoder, pretrain_encoder, SpeechEncoder};
use atyvc_core::eval::{EvalReport, SystemMetrics};
use atyvc_core::nn::TrainReport;
use atyvc_core::pipeline::{digest_path, row_name, run_all, System, Workspace, CONTROL_PREFIX, ORIGINAL_ROW};
use atyvc_core::prosody::{expand_embeddings, train_duration_predictor, train_f0_predictor};
use atyvc_core::selftest::{alignment_suite, edit_distance_suite, gradient_suite, CheckOutcome};
use atyvc_core::speaker::{load_embeddings, speaker_features, train_speaker_encoder};
use atyvc_core::util::read_to_string;
use atyvc_core::{Error, Result};

const SEED: u64 = 20240917;

struct Verdict {
    passed: bool,
    detail: String,
}

fn from_outcomes(outcomes: &[CheckOutcome]) -> Verdict {
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.passed)
        .map(|o| format!("{} ({})", o.name, o.detail))
        .collect();
    Verdict {
        passed: failed.is_empty(),
        detail: if failed.is_empty() {
            outcomes.iter().map(|o| format!("{}: {}", o.name, o.detail)).collect::<Vec<_>>().join("; ")
        } else {
            format!("failed: {}", failed.join("; "))
        },
    }
}

fn row<'a>(report: &'a EvalReport, name: &str) -> Option<&'a SystemMetrics> {
    report.rows.iter().find(|r| r.system == name || (name == CONTROL_PREFIX && r.system.starts_with(CONTROL_PREFIX)))
}

fn load_report(ws: &Workspace) -> Result<EvalReport> {
    let text = read_to_string(&ws.report("eval.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::MissingArtifact(format!("reports/eval.json does not parse: {e}")))
}

fn criterion_1() -> Result<Verdict> {
    let start = Instant::now();
    let outcomes = gradient_suite(20, SEED)?;
    let elapsed = start.elapsed();
    let mut v = from_outcomes(&outcomes);
    v.passed &= elapsed < Duration::from_secs(120);
    v.detail = format!("{:.1}s; {}", elapsed.as_secs_f64(), v.detail);
    Ok(v)
}

fn criterion_2(ws: &Workspace) -> Result<Verdict> {
    let mut v = from_outcomes(&alignment_suite(1000, SEED)?);
    let mut records = 0;
    for dir in [ws.typical_corpus(), ws.atypical_corpus()] {
        let c = load_corpus(&dir)?;
        records += c.records.len();
        if let Err(e) = c.check_alignment() {
            v.passed = false;
            v.detail = format!("{}: {e}; {}", dir.display(), v.detail);
        }
    }
    v.detail = format!("desk corpus {records} records aligned; {}", v.detail);
    Ok(v)
}

fn criterion_3() -> Result<Verdict> {
    Ok(from_outcomes(&edit_distance_suite(7, 3, SEED)?))
}

fn criterion_4(report: &EvalReport, elapsed: Duration) -> Verdict {
    let mut ok = elapsed < Duration::from_secs(15 * 60);
    let mut detail = vec![format!("pipeline {:.0}s", elapsed.as_secs_f64())];
    let orig = row(report, ORIGINAL_ROW);
    for system in System::ALL {
        let pd = row(report, &row_name(system, ProsodyMode::PdPf));
        let gdpf = row(report, &row_name(system, ProsodyMode::GdPf));
        let gdgf = row(report, &row_name(system, ProsodyMode::GdGf));
        match (orig, pd, gdpf, gdgf) {
            (Some(o), Some(pd), Some(gdpf), Some(gdgf)) => {
                let (od, of) = (o.duration_deviation.unwrap_or(f64::NAN), o.f0_rmse.unwrap_or(f64::NAN));
                let (pdd, pdf) = (pd.duration_deviation.unwrap_or(f64::NAN), pd.f0_rmse.unwrap_or(f64::NAN));
                let (a, b) = (gdpf.f0_rmse.unwrap_or(f64::NAN), gdgf.f0_rmse.unwrap_or(f64::NAN));
                ok &= pdd <= 0.5 * od && pdf <= 0.5 * of && a < 0.9 * b;
                detail.push(format!(
                    "{}: dur {pdd:.3} vs {od:.3}, F0 {pdf:.4} vs {of:.4}, GD+PF F0 {a:.4} vs GD+GF {b:.4}",
                    system.label()
                ));
            }
            _ => {
                ok = false;
                detail.push(format!("{}: rows missing", system.label()));
            }
        }
    }
    Verdict {
        passed: ok,
        detail: detail.join("; "),
    }
}

fn criterion_5(report: &EvalReport) -> Verdict {
    let get = |name: &str| row(report, name).and_then(|r| r.speaker_distance).unwrap_or(f64::NAN);
    let ada = get(&row_name(System::AdaCm, ProsodyMode::PdPf));
    let enc = get(&row_name(System::EncCm, ProsodyMode::PdPf));
    let control = get(CONTROL_PREFIX);
    Verdict {
        passed: ada < enc && enc < control,
        detail: format!("speaker distance Ada-CM {ada:.4} < Enc-CM {enc:.4} < other speakers {control:.4}"),
    }
}

fn criterion_6(report: &EvalReport) -> Verdict {
    let get = |name: &str| row(report, name).and_then(|r| r.per).unwrap_or(f64::NAN);
    let conv = get(&row_name(System::EncCm, ProsodyMode::PdPf));
    let orig = get(ORIGINAL_ROW);
    Verdict {
        passed: conv < orig,
        detail: format!(
            "PER Enc-CM PD+PF {conv:.1}% < Original {orig:.1}% (Ada-CM PD+PF {:.1}%)",
            get(&row_name(System::AdaCm, ProsodyMode::PdPf))
        ),
    }
}

/// A single small batch, the desk optimizer and the desk step budget.
fn single_batch(settings: &TrainSettings, items: usize, seed: u64) -> atyvc_core::nn::TrainConfig {
    let mut s = settings.clone();
    s.batch_size = s.batch_size.min(items);
    s.with_seed(seed)
}

fn teacher_forced(enc: &SpeechEncoder, r: &UtteranceRecord) -> Result<ConversionExample> {
    let emb = enc.extract_phoneme_embeddings(&encoder_features(&r.mel)?, Some(&r.phones), true)?;
    Ok(ConversionExample {
        utterance_id: r.utterance_id.clone(),
        speaker_id: r.speaker_id.clone(),
        expanded: expand_embeddings(&emb.probs, &r.durations)?,
        f0: r.f0.clone(),
        target: r.mel.clone(),
    })
}

fn criterion_7(config: &PipelineConfig, ws: &Workspace) -> Result<Verdict> {
    let typical: Corpus = load_corpus(&ws.typical_corpus())?;
    let atypical: Corpus = load_corpus(&ws.atypical_corpus())?;
    let phi_p = SpeechEncoder::load(&ws.model("speech_encoder"))?;
    let mut reports: Vec<(&str, TrainReport)> = Vec::new();

    let batch: Vec<UtteranceRecord> = typical.records.iter().take(2).cloned().collect();
    let ex = examples_from_records(&typical.inventory, &batch)?;
    let se = &config.speech_encoder;
    let (_, r) = pretrain_encoder(se.model.clone(), typical.inventory.clone(), &ex, &single_batch(&se.pretrain, ex.len(), 1))?;
    reports.push(("train-speech-encoder", r));

    let a_batch: Vec<UtteranceRecord> = atypical.records.iter().take(2).cloned().collect();
    let a_ex = examples_from_records(&atypical.inventory, &a_batch)?;
    let (_, r) = finetune_encoder(&phi_p, "dys00", &a_ex, &single_batch(&se.finetune, a_ex.len(), 2))?;
    reports.push(("finetune-speech-encoder", r));

    let pr = &config.prosody;
    let mut dur_pairs = Vec::new();
    let mut f0_pairs = Vec::new();
    for r in typical.records_of(&pr.speaker).take(2) {
        let emb = phi_p.extract_phoneme_embeddings(&encoder_features(&r.mel)?, Some(&r.phones), true)?;
        f0_pairs.push((r.utterance_id.clone(), expand_embeddings(&emb.probs, &r.durations)?, r.f0.clone()));
        dur_pairs.push((r.utterance_id.clone(), emb, r.durations.clone()));
    }
    let t = train_duration_predictor(pr.model.clone(), phi_p.inventory.clone(), &dur_pairs, &single_batch(&pr.duration, 2, 3))?;
    reports.push(("train-prosody/duration", t.report));
    let t = train_f0_predictor(pr.model.clone(), phi_p.inventory.clone(), &f0_pairs, &single_batch(&pr.f0, 2, 4))?;
    reports.push(("train-prosody/f0", t.report));

    let sp = &config.speaker_encoder;
    let (n, m) = (sp.model.speakers_per_batch, sp.model.utterances_per_speaker);
    let speakers = typical.speakers[..n]
        .iter()
        .map(|s| typical.records_of(s).take(m).map(|r| speaker_features(&r.mel)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let (_, r) = train_speaker_encoder(sp.model.clone(), &speakers, &sp.train.with_seed(5))?;
    reports.push(("train-speaker-encoder", r.train));

    let cm = &config.conversion;
    let cm_batch: Vec<ConversionExample> = typical
        .speakers
        .iter()
        .take(2)
        .map(|s| teacher_forced(&phi_p, typical.records_of(s).next().expect("speaker has records")))
        .collect::<Result<_>>()?;
    let dse: BTreeMap<String, Vec<f64>> = load_embeddings(&ws.embeddings("dse"))?.into_iter().collect();
    let t = train_enc_cm(cm.model.clone(), phi_p.vocab(), &cm_batch, &dse, &single_batch(&cm.enc_cm, 2, 6))?;
    reports.push(("train-enc-cm", t.report));
    let t = pretrain_ada_cm(cm.model.clone(), phi_p.vocab(), &cm_batch, &single_batch(&cm.ada_cm, 2, 7), false)?;
    reports.push(("pretrain-ada-cm", t.report));
    let base = ConversionModel::load(&ws.model("ada_cm"))?;
    let phi_k = SpeechEncoder::load(&ws.model("speech_encoder_dys00"))?;
    let adapt_batch =
        atypical.records.iter().take(2).map(|r| teacher_forced(&phi_k, r)).collect::<Result<Vec<_>>>()?;
    let (t, _) = adapt_speaker(&base, "dys00", &adapt_batch, AdaptMode::Joint, &single_batch(&cm.adapt, 2, 8))?;
    reports.push(("adapt", t.report));

    let mut passed = true;
    let detail: Vec<String> = reports
        .iter()
        .map(|(name, r)| {
            passed &= r.reduction() >= 0.8;
            format!("{name} {:.1}% in {} steps", 100.0 * r.reduction(), r.step_losses.len())
        })
        .collect();
    Ok(Verdict {
        passed,
        detail: detail.join("; "),
    })
}

fn criterion_8(a: &Workspace, b: &Workspace) -> Result<Verdict> {
    let mut differing = Vec::new();
    let mut checked = 0;
    for sub in ["corpus", "models", "embeddings", "converted", "reports", "manifests"] {
        let (x, y) = (a.root().join(sub), b.root().join(sub));
        checked += 1;
        if digest_path(&x)? != digest_path(&y)? {
            differing.push(sub);
        }
    }
    Ok(Verdict {
        passed: differing.is_empty(),
        detail: if differing.is_empty() {
            format!("{checked} artifact trees bit-identical across two runs")
        } else {
            format!("differing: {}", differing.join(", "))
        },
    })
}

type Outcome = (&'static str, Result<Verdict>);

fn print_line(n: usize, (name, v): &Outcome) -> bool {
    match v {
        Ok(v) => {
            println!("criterion {n} {name}: {} ({})", if v.passed { "PASS" } else { "FAIL" }, v.detail);
            v.passed
        }
        Err(e) => {
            println!("criterion {n} {name}: FAIL (error: {e})");
            false
        }
    }
}

fn run_pipeline(config: &PipelineConfig, root: &Path) -> Result<(Workspace, Duration)> {
    let ws = Workspace::new(root);
    let start = Instant::now();
    run_all(config, &ws)?;
    Ok((ws, start.elapsed()))
}

fn main() -> ExitCode {
    // Cargo passes libtest flags such as `--list`; this target has no sub-tests.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let config = match PipelineConfig::resolve(Some("desk"), None, None) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("desk profile does not resolve: {e}");
            return ExitCode::FAILURE;
        }
    };
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut results: BTreeMap<usize, Outcome> = BTreeMap::new();
    let progress = |n: usize| eprintln!("acceptance: criterion {n} done");

    results.insert(1, ("gradient correctness", criterion_1()));
    progress(1);
    results.insert(3, ("edit-distance oracle", criterion_3()));
    progress(3);

    eprintln!("acceptance: desk pipeline, first run");
    let first = run_pipeline(&config, &dir.path().join("run-a"));
    match &first {
        Ok((ws, elapsed)) => {
            results.insert(2, ("alignment invariants", criterion_2(ws)));
            let report = load_report(ws);
            let fail = |e: &Error| Err(Error::MissingArtifact(e.to_string()));
            results.insert(4, ("prosody correction", report.as_ref().map_or_else(fail, |r| Ok(criterion_4(r, *elapsed)))));
            results.insert(5, ("speaker similarity", report.as_ref().map_or_else(fail, |r| Ok(criterion_5(r)))));
            results.insert(6, ("intelligibility", report.as_ref().map_or_else(fail, |r| Ok(criterion_6(r)))));
            results.insert(7, ("training sanity", criterion_7(&config, ws)));
        }
        Err(e) => {
            for (n, name) in [
                (2, "alignment invariants"),
                (4, "prosody correction"),
                (5, "speaker similarity"),
                (6, "intelligibility"),
                (7, "training sanity"),
            ] {
                results.insert(n, (name, Err(Error::MissingArtifact(format!("desk pipeline failed: {e}")))));
            }
        }
    }
    progress(7);

    eprintln!("acceptance: desk pipeline, second run");
    let second = run_pipeline(&config, &dir.path().join("run-b"));
    let verdict = match (&first, &second) {
        (Ok((a, _)), Ok((b, _))) => criterion_8(a, b),
        (_, Err(e)) | (Err(e), _) => Err(Error::MissingArtifact(format!("pipeline run failed: {e}"))),
    };
    results.insert(8, ("determinism", verdict));

    let mut all = true;
    for (n, outcome) in &results {
        all &= print_line(*n, outcome);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
