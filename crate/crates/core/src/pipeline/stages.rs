use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{Stage, StageContext, System};
use crate::conversion::{
    adapt_speaker, convert_utterance, pretrain_ada_cm, train_enc_cm, ConversionExample, ConversionInputs,
    ConversionModel, ConversionPipeline,
};
use crate::corpus::{
    default_inventory, generate_atypical_corpus, generate_typical_corpus, load_corpus, serialize_corpus, Corpus,
    SyntheticSpeakerProfile, UtteranceRecord,
};
use crate::dsp::features::UtteranceFeatures;
use crate::dsp::griffin_lim::griffin_lim_invert;
use crate::dsp::wav::write_wav;
use crate::encoder::{
    encoder_features, examples_from_records, finetune_encoder, pretrain_encoder, token_accuracy, SpeechEncoder,
};
use crate::error::{Error, Result};
use crate::nn::TrainReport;
use crate::prosody::alignment::{format_alignments, Alignment};
use crate::prosody::{expand_embeddings, train_duration_predictor, train_f0_predictor, ProsodyPredictor};
use crate::speaker::{load_embeddings, save_embeddings, speaker_features, train_speaker_encoder};
use crate::util::atomic_write;

pub(super) fn run(ctx: &mut StageContext) -> Result<()> {
    match ctx.stage {
        Stage::GenCorpus => gen_corpus(ctx),
        Stage::TrainSpeechEncoder => train_speech_encoder(ctx),
        Stage::FinetuneSpeechEncoder => finetune_speech_encoder(ctx),
        Stage::TrainProsody => train_prosody(ctx),
        Stage::TrainSpeakerEncoder => train_speaker(ctx),
        Stage::TrainEncCm => train_enc(ctx),
        Stage::PretrainAdaCm => pretrain_ada(ctx),
        Stage::Adapt => adapt(ctx),
        Stage::Convert => convert(ctx),
        Stage::Evaluate => super::evaluate::evaluate(ctx),
    }
}

fn remove_dir(path: &Path) -> Result<()> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    atomic_write(path, json.as_bytes())
}

fn record_training(ctx: &mut StageContext, prefix: &str, report: &TrainReport) {
    ctx.summary.insert(format!("{prefix}initial_loss"), report.initial_loss);
    ctx.summary.insert(format!("{prefix}final_loss"), report.final_loss);
}

pub(super) fn load_typical(ctx: &mut StageContext) -> Result<Corpus> {
    let dir = ctx.input(ctx.ws.typical_corpus(), Stage::GenCorpus)?;
    load_corpus(&dir)
}

pub(super) fn load_atypical(ctx: &mut StageContext) -> Result<Corpus> {
    let dir = ctx.input(ctx.ws.atypical_corpus(), Stage::GenCorpus)?;
    let corpus = load_corpus(&dir)?;
    let want = ctx.config.corpus.atypical_utterances;
    if corpus.records.len() != want {
        return Err(Error::invalid(format!(
            "atypical corpus has {} utterances, the config expects {want}",
            corpus.records.len()
        )));
    }
    Ok(corpus)
}

/// Adaptation and evaluation records of the atypical speaker, in corpus order.
pub(super) fn atypical_split<'a>(
    ctx: &StageContext<'_>,
    corpus: &'a Corpus,
) -> (Vec<&'a UtteranceRecord>, Vec<&'a UtteranceRecord>) {
    let n = ctx.config.corpus.adaptation_utterances;
    let speaker = &ctx.config.corpus.atypical_speaker;
    let records: Vec<&'a UtteranceRecord> = corpus.records.iter().filter(|r| &r.speaker_id == speaker).collect();
    let (a, e) = records.split_at(n.min(records.len()));
    (a.to_vec(), e.to_vec())
}

pub(super) fn load_speech_encoder(ctx: &mut StageContext, name: &str, producer: Stage) -> Result<SpeechEncoder> {
    let path = ctx.input(ctx.ws.model(name), producer)?;
    SpeechEncoder::load(&path)
}

fn finetuned_name(ctx: &StageContext) -> String {
    format!("speech_encoder_{}", ctx.config.corpus.atypical_speaker)
}

fn adapted_name(ctx: &StageContext) -> String {
    format!("ada_cm_{}", ctx.config.corpus.atypical_speaker)
}

fn gen_corpus(ctx: &mut StageContext) -> Result<()> {
    let c = &ctx.config.corpus;
    let inventory = default_inventory();
    let typical = generate_typical_corpus(c.typical_speakers, c.utterances_per_speaker, &inventory, &c.text, ctx.seed)?;
    let language = typical.language.clone().expect("generated corpora carry their language");
    let reference = typical
        .profile(&c.reference_speaker)
        .ok_or_else(|| Error::Config(format!("reference speaker {} was not generated", c.reference_speaker)))?;
    let mut profile = SyntheticSpeakerProfile::sample(&c.atypical_speaker, &language, ctx.seed);
    profile.base_f0 = reference.base_f0;
    let atypical = generate_atypical_corpus(&profile, &c.distortion, c.atypical_utterances, &inventory, &c.text, ctx.seed)?;

    remove_dir(&ctx.ws.root().join("corpus"))?;
    let t = ctx.output(ctx.ws.typical_corpus());
    serialize_corpus(&typical, &t)?;
    let a = ctx.output(ctx.ws.atypical_corpus());
    serialize_corpus(&atypical, &a)?;
    ctx.summary.insert("typical_utterances".into(), typical.records.len() as f64);
    ctx.summary.insert("atypical_utterances".into(), atypical.records.len() as f64);
    Ok(())
}

#[derive(Serialize)]
struct EncoderTrainingReport<'a> {
    training: &'a TrainReport,
    token_accuracy: f64,
}

fn train_speech_encoder(ctx: &mut StageContext) -> Result<()> {
    let corpus = load_typical(ctx)?;
    let examples = examples_from_records(&corpus.inventory, &corpus.records)?;
    let section = &ctx.config.speech_encoder;
    let (enc, report) = pretrain_encoder(
        section.model.clone(),
        corpus.inventory.clone(),
        &examples,
        &section.pretrain.with_seed(ctx.seed),
    )?;
    let acc = token_accuracy(&enc, &examples)?;
    enc.save(&ctx.output(ctx.ws.model("speech_encoder")))?;
    write_json(
        &ctx.output(ctx.ws.report("train-speech-encoder.json")),
        &EncoderTrainingReport {
            training: &report,
            token_accuracy: acc,
        },
    )?;
    record_training(ctx, "", &report);
    ctx.summary.insert("token_accuracy".into(), acc);
    Ok(())
}

fn finetune_speech_encoder(ctx: &mut StageContext) -> Result<()> {
    let base = load_speech_encoder(ctx, "speech_encoder", Stage::TrainSpeechEncoder)?;
    let corpus = load_atypical(ctx)?;
    let (adapt, _) = atypical_split(ctx, &corpus);
    let examples = examples_from_records(&base.inventory, adapt)?;
    let speaker = ctx.config.corpus.atypical_speaker.clone();
    let before = token_accuracy(&base, &examples)?;
    let (enc, report) = finetune_encoder(
        &base,
        &speaker,
        &examples,
        &ctx.config.speech_encoder.finetune.with_seed(ctx.seed),
    )?;
    let after = token_accuracy(&enc, &examples)?;
    let name = finetuned_name(ctx);
    enc.save(&ctx.output(ctx.ws.model(&name)))?;
    write_json(
        &ctx.output(ctx.ws.report("finetune-speech-encoder.json")),
        &EncoderTrainingReport {
            training: &report,
            token_accuracy: after,
        },
    )?;
    record_training(ctx, "", &report);
    ctx.summary.insert("token_accuracy_before".into(), before);
    ctx.summary.insert("token_accuracy".into(), after);
    Ok(())
}

#[derive(Serialize)]
struct ProsodyReport<'a> {
    duration: &'a TrainReport,
    f0: &'a TrainReport,
    skipped: Vec<(String, String)>,
}

fn train_prosody(ctx: &mut StageContext) -> Result<()> {
    let enc = load_speech_encoder(ctx, "speech_encoder", Stage::TrainSpeechEncoder)?;
    let corpus = load_typical(ctx)?;
    let section = &ctx.config.prosody;
    let mut dur_pairs = Vec::new();
    let mut f0_pairs = Vec::new();
    for r in corpus.records_of(&section.speaker) {
        let emb = enc.extract_phoneme_embeddings(&encoder_features(&r.mel)?, Some(&r.phones), true)?;
        f0_pairs.push((r.utterance_id.clone(), expand_embeddings(&emb.probs, &r.durations)?, r.f0.clone()));
        dur_pairs.push((r.utterance_id.clone(), emb, r.durations.clone()));
    }
    if dur_pairs.is_empty() {
        return Err(Error::invalid(format!("prosody speaker {} has no utterances", section.speaker)));
    }
    let dur = train_duration_predictor(
        section.model.clone(),
        enc.inventory.clone(),
        &dur_pairs,
        &section.duration.with_seed(ctx.sub_seed("duration")),
    )?;
    let f0 = train_f0_predictor(
        section.model.clone(),
        enc.inventory.clone(),
        &f0_pairs,
        &section.f0.with_seed(ctx.sub_seed("f0")),
    )?;
    dur.predictor.save(&ctx.output(ctx.ws.model("duration")))?;
    f0.predictor.save(&ctx.output(ctx.ws.model("f0")))?;
    let skipped = dur.skipped.iter().chain(&f0.skipped).cloned().collect();
    write_json(
        &ctx.output(ctx.ws.report("train-prosody.json")),
        &ProsodyReport {
            duration: &dur.report,
            f0: &f0.report,
            skipped,
        },
    )?;
    record_training(ctx, "duration_", &dur.report);
    record_training(ctx, "f0_", &f0.report);
    Ok(())
}

fn train_speaker(ctx: &mut StageContext) -> Result<()> {
    let typical = load_typical(ctx)?;
    let atypical = load_atypical(ctx)?;
    let mut speakers = Vec::with_capacity(typical.speakers.len());
    for s in &typical.speakers {
        speakers.push(
            typical
                .records_of(s)
                .map(|r| speaker_features(&r.mel))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let section = &ctx.config.speaker_encoder;
    let (enc, report) = train_speaker_encoder(section.model.clone(), &speakers, &section.train.with_seed(ctx.seed))?;
    enc.save(&ctx.output(ctx.ws.model("speaker_encoder")))?;

    let mut dse = Vec::new();
    for (s, feats) in typical.speakers.iter().zip(&speakers) {
        dse.push((s.clone(), enc.extract_dse(feats)?.values));
    }
    let (adapt, _) = atypical_split(ctx, &atypical);
    let feats = adapt.iter().map(|r| speaker_features(&r.mel)).collect::<Result<Vec<_>>>()?;
    dse.push((ctx.config.corpus.atypical_speaker.clone(), enc.extract_dse(&feats)?.values));
    save_embeddings(&ctx.output(ctx.ws.embeddings("dse")), &dse)?;
    write_json(&ctx.output(ctx.ws.report("train-speaker-encoder.json")), &report)?;
    record_training(ctx, "", &report.train);
    ctx.summary.insert("same_speaker_cosine".into(), report.same_speaker_cosine);
    ctx.summary.insert("different_speaker_cosine".into(), report.different_speaker_cosine);
    Ok(())
}

/// Teacher-forced embeddings of `enc`, expanded with each record's own
/// durations and paired with its F0 and mel.
fn conversion_examples<'a>(
    enc: &SpeechEncoder,
    records: impl IntoIterator<Item = &'a UtteranceRecord>,
) -> Result<Vec<ConversionExample>> {
    records
        .into_iter()
        .map(|r| {
            let emb = enc.extract_phoneme_embeddings(&encoder_features(&r.mel)?, Some(&r.phones), true)?;
            Ok(ConversionExample {
                utterance_id: r.utterance_id.clone(),
                speaker_id: r.speaker_id.clone(),
                expanded: expand_embeddings(&emb.probs, &r.durations)?,
                f0: r.f0.clone(),
                target: r.mel.clone(),
            })
        })
        .collect()
}

fn load_dse(ctx: &mut StageContext) -> Result<BTreeMap<String, Vec<f64>>> {
    let path = ctx.input(ctx.ws.embeddings("dse"), Stage::TrainSpeakerEncoder)?;
    Ok(load_embeddings(&path)?.into_iter().collect())
}

#[derive(Serialize)]
struct ConversionReport<'a> {
    training: &'a TrainReport,
    skipped: &'a [(String, String)],
}

fn train_enc(ctx: &mut StageContext) -> Result<()> {
    let enc = load_speech_encoder(ctx, "speech_encoder", Stage::TrainSpeechEncoder)?;
    let corpus = load_typical(ctx)?;
    let dse = load_dse(ctx)?;
    let examples = conversion_examples(&enc, &corpus.records)?;
    let section = &ctx.config.conversion;
    let t = train_enc_cm(section.model.clone(), enc.vocab(), &examples, &dse, &section.enc_cm.with_seed(ctx.seed))?;
    t.model.save(&ctx.output(ctx.ws.model("enc_cm")))?;
    write_json(
        &ctx.output(ctx.ws.report("train-enc-cm.json")),
        &ConversionReport {
            training: &t.report,
            skipped: &t.skipped,
        },
    )?;
    record_training(ctx, "", &t.report);
    Ok(())
}

fn pretrain_ada(ctx: &mut StageContext) -> Result<()> {
    let enc = load_speech_encoder(ctx, "speech_encoder", Stage::TrainSpeechEncoder)?;
    let corpus = load_typical(ctx)?;
    let examples = conversion_examples(&enc, &corpus.records)?;
    let section = &ctx.config.conversion;
    let t = pretrain_ada_cm(section.model.clone(), enc.vocab(), &examples, &section.ada_cm.with_seed(ctx.seed), false)?;
    t.model.save(&ctx.output(ctx.ws.model("ada_cm")))?;
    save_embeddings(&ctx.output(ctx.ws.embeddings("ada_table")), &t.model.table().entries)?;
    write_json(
        &ctx.output(ctx.ws.report("pretrain-ada-cm.json")),
        &ConversionReport {
            training: &t.report,
            skipped: &t.skipped,
        },
    )?;
    record_training(ctx, "", &t.report);
    Ok(())
}

fn adapt(ctx: &mut StageContext) -> Result<()> {
    let base_path = ctx.input(ctx.ws.model("ada_cm"), Stage::PretrainAdaCm)?;
    let base = ConversionModel::load(&base_path)?;
    let name = finetuned_name(ctx);
    let enc = load_speech_encoder(ctx, &name, Stage::FinetuneSpeechEncoder)?;
    let corpus = load_atypical(ctx)?;
    let (records, _) = atypical_split(ctx, &corpus);
    let examples = conversion_examples(&enc, records)?;
    let section = &ctx.config.conversion;
    let speaker = ctx.config.corpus.atypical_speaker.clone();
    let (t, e) = adapt_speaker(&base, &speaker, &examples, section.adapt_mode, &section.adapt.with_seed(ctx.seed))?;
    let name = adapted_name(ctx);
    t.model.save(&ctx.output(ctx.ws.model(&name)))?;
    save_embeddings(&ctx.output(ctx.ws.embeddings("adapted")), &[(speaker, e.values)])?;
    write_json(
        &ctx.output(ctx.ws.report("adapt.json")),
        &ConversionReport {
            training: &t.report,
            skipped: &t.skipped,
        },
    )?;
    record_training(ctx, "", &t.report);
    Ok(())
}

fn convert(ctx: &mut StageContext) -> Result<()> {
    let speaker = ctx.config.corpus.atypical_speaker.clone();
    let enc = load_speech_encoder(ctx, &finetuned_name(ctx), Stage::FinetuneSpeechEncoder)?;
    let duration = ProsodyPredictor::load(&ctx.input(ctx.ws.model("duration"), Stage::TrainProsody)?)?;
    let f0 = ProsodyPredictor::load(&ctx.input(ctx.ws.model("f0"), Stage::TrainProsody)?)?;
    let enc_cm = ConversionModel::load(&ctx.input(ctx.ws.model("enc_cm"), Stage::TrainEncCm)?)?;
    let ada_cm = ConversionModel::load(&ctx.input(ctx.ws.model(&adapted_name(ctx)), Stage::Adapt)?)?;
    let dse = load_dse(ctx)?;
    let enc_e = dse
        .get(&speaker)
        .cloned()
        .ok_or_else(|| Error::MissingArtifact(format!("speaker-encoder DSE for {speaker} in embeddings/dse.txt")))?;
    let adapted_path = ctx.input(ctx.ws.embeddings("adapted"), Stage::Adapt)?;
    let ada_e = load_embeddings(&adapted_path)?
        .into_iter()
        .find(|(s, _)| *s == speaker)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::MissingArtifact(format!("adapted embedding for {speaker}")))?;
    let corpus = load_atypical(ctx)?;
    let (_, eval) = atypical_split(ctx, &corpus);
    let section = ctx.config.convert.clone();

    remove_dir(&ctx.ws.root().join("converted"))?;
    for system in System::ALL {
        let (model, e) = match system {
            System::EncCm => (&enc_cm, &enc_e),
            System::AdaCm => (&ada_cm, &ada_e),
        };
        let pipeline = ConversionPipeline {
            encoder: &enc,
            duration: &duration,
            f0: &f0,
            model,
            dse: e,
        };
        for &mode in &section.modes {
            let dir = ctx.output(ctx.ws.converted(system, mode));
            let mut aligns = Vec::with_capacity(eval.len());
            for r in &eval {
                let inputs = ConversionInputs {
                    transcript: Some(&r.phones),
                    durations: Some(&r.durations),
                    f0: Some(&r.f0),
                };
                let out = convert_utterance(&pipeline, &r.mel, &inputs, mode)?;
                if section.waveforms {
                    let w = griffin_lim_invert(&out.mel, section.griffin_lim_iterations)?;
                    write_wav(&dir.join("wav").join(format!("{}.wav", r.utterance_id)), &w)?;
                }
                UtteranceFeatures::new(&r.utterance_id, out.mel, out.f0)?
                    .save(&dir.join("feats").join(format!("{}.feat", r.utterance_id)))?;
                aligns.push(Alignment {
                    utterance_id: r.utterance_id.clone(),
                    phones: r.phones.clone(),
                    durations: out.durations,
                });
            }
            atomic_write(&dir.join("alignments.txt"), format_alignments(&aligns).as_bytes())?;
        }
    }
    ctx.summary.insert("utterances".into(), eval.len() as f64);
    Ok(())
}
