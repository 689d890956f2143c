//! Corpus directory layout:
//!
//! ```text
//! inventory.txt        symbol<TAB>v|u per line
//! speakers.txt         one speaker id per line
//! utt2spk.txt          utterance-id<TAB>speaker-id
//! transcripts.txt      utterance-id<TAB>phonemes
//! alignments.txt       utterance-id<TAB>phoneme:frames ...
//! feats/<utt>.feat     feature container (mel, F0, voicing)
//! f0/<utt>.f0          one `log_f0<TAB>voiced(0|1)` line per frame
//! oracle/alignments.txt, oracle/f0/<utt>.f0   undistorted prosody (atypical only)
//! synthetic.json       generator language and speaker profiles (generated only)
//! ```
//!
//! Record order follows `transcripts.txt`, never the directory listing.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Corpus, OracleProsody, SyntheticLanguage, SyntheticSpeakerProfile, UtteranceRecord};
use crate::dsp::f0::F0Contour;
use crate::dsp::features::UtteranceFeatures;
use crate::encoder::inventory::{format_transcripts, load_transcripts, PhonemeInventory};
use crate::error::{Error, Result};
use crate::prosody::alignment::{format_alignments, load_alignments, Alignment};
use crate::util::{atomic_write, read_to_string};

#[derive(Serialize, Deserialize)]
struct SyntheticMeta {
    language: SyntheticLanguage,
    profiles: Vec<SyntheticSpeakerProfile>,
}

pub fn format_f0(f0: &F0Contour) -> String {
    f0.log_f0
        .iter()
        .zip(&f0.voiced)
        .map(|(v, &b)| format!("{v}\t{}\n", u8::from(b)))
        .collect()
}

pub fn parse_f0(text: &str, origin: &Path) -> Result<F0Contour> {
    let mut log_f0 = Vec::new();
    let mut voiced = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = || Error::format(origin, format!("line {}: expected log_f0<TAB>0|1", n + 1));
        let (v, b) = line.split_once('\t').ok_or_else(bad)?;
        log_f0.push(v.parse::<f64>().map_err(|_| bad())?);
        voiced.push(match b {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        });
    }
    let c = F0Contour { log_f0, voiced };
    c.validate()?;
    Ok(c)
}

pub fn load_f0(path: &Path) -> Result<F0Contour> {
    parse_f0(&read_to_string(path)?, path)
}

fn alignment_of(id: &str, phones: &[String], durations: &[usize]) -> Alignment {
    Alignment {
        utterance_id: id.to_string(),
        phones: phones.to_vec(),
        durations: durations.to_vec(),
    }
}

pub fn serialize_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    corpus.check_alignment()?;
    corpus.inventory.save(&dir.join("inventory.txt"))?;
    let speakers: String = corpus.speakers.iter().map(|s| format!("{s}\n")).collect();
    atomic_write(&dir.join("speakers.txt"), speakers.as_bytes())?;
    let utt2spk: String = corpus
        .records
        .iter()
        .map(|r| format!("{}\t{}\n", r.utterance_id, r.speaker_id))
        .collect();
    atomic_write(&dir.join("utt2spk.txt"), utt2spk.as_bytes())?;
    let transcripts = format_transcripts(corpus.records.iter().map(|r| (r.utterance_id.as_str(), &r.phones[..])));
    atomic_write(&dir.join("transcripts.txt"), transcripts.as_bytes())?;
    let aligns: Vec<Alignment> = corpus
        .records
        .iter()
        .map(|r| alignment_of(&r.utterance_id, &r.phones, &r.durations))
        .collect();
    atomic_write(&dir.join("alignments.txt"), format_alignments(&aligns).as_bytes())?;
    for r in &corpus.records {
        let feats = UtteranceFeatures::new(&r.utterance_id, r.mel.clone(), r.f0.clone())?;
        feats.save(&feature_path(dir, &r.utterance_id))?;
        atomic_write(&dir.join("f0").join(format!("{}.f0", r.utterance_id)), format_f0(&r.f0).as_bytes())?;
    }
    let oracles: Vec<(&UtteranceRecord, &OracleProsody)> =
        corpus.records.iter().filter_map(|r| r.oracle.as_ref().map(|o| (r, o))).collect();
    if !oracles.is_empty() {
        let aligns: Vec<Alignment> = oracles
            .iter()
            .map(|(r, o)| alignment_of(&r.utterance_id, &r.phones, &o.durations))
            .collect();
        atomic_write(&dir.join("oracle/alignments.txt"), format_alignments(&aligns).as_bytes())?;
        for (r, o) in &oracles {
            atomic_write(
                &dir.join("oracle/f0").join(format!("{}.f0", r.utterance_id)),
                format_f0(&o.f0).as_bytes(),
            )?;
        }
    }
    if let Some(language) = &corpus.language {
        let meta = SyntheticMeta {
            language: language.clone(),
            profiles: corpus.profiles.clone(),
        };
        let json = serde_json::to_vec_pretty(&meta).expect("metadata serializes");
        atomic_write(&dir.join("synthetic.json"), &json)?;
    }
    Ok(())
}

pub fn feature_path(dir: &Path, utterance_id: &str) -> PathBuf {
    dir.join("feats").join(format!("{utterance_id}.feat"))
}

fn missing(dir: &Path, what: &str) -> Error {
    Error::MissingArtifact(format!("{what} in corpus {}", dir.display()))
}

fn require(dir: &Path, rel: &str) -> Result<PathBuf> {
    let p = dir.join(rel);
    if p.exists() {
        Ok(p)
    } else {
        Err(missing(dir, rel))
    }
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    if !dir.is_dir() {
        return Err(Error::MissingArtifact(format!("corpus directory {}", dir.display())));
    }
    let inventory = PhonemeInventory::load(&require(dir, "inventory.txt")?)?;
    let speakers: Vec<String> = read_to_string(&require(dir, "speakers.txt")?)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let utt2spk_path = require(dir, "utt2spk.txt")?;
    let mut utt2spk = HashMap::new();
    for (n, line) in read_to_string(&utt2spk_path)?.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (u, s) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(&utt2spk_path, format!("line {}: expected utt<TAB>speaker", n + 1)))?;
        utt2spk.insert(u.to_string(), s.to_string());
    }
    let transcripts = load_transcripts(&require(dir, "transcripts.txt")?)?;
    let aligns: HashMap<String, Alignment> = load_alignments(&require(dir, "alignments.txt")?)?
        .into_iter()
        .map(|a| (a.utterance_id.clone(), a))
        .collect();
    let oracle_aligns: Option<HashMap<String, Alignment>> = if dir.join("oracle/alignments.txt").exists() {
        Some(
            load_alignments(&dir.join("oracle/alignments.txt"))?
                .into_iter()
                .map(|a| (a.utterance_id.clone(), a))
                .collect(),
        )
    } else {
        None
    };

    let mut records = Vec::with_capacity(transcripts.len());
    for (id, phones) in transcripts {
        inventory.encode(&phones)?;
        let speaker_id = utt2spk
            .get(&id)
            .cloned()
            .ok_or_else(|| missing(dir, &format!("utt2spk entry for {id}")))?;
        if !speakers.contains(&speaker_id) {
            return Err(Error::invalid(format!("utterance {id} names unknown speaker {speaker_id}")));
        }
        let align = aligns
            .get(&id)
            .ok_or_else(|| missing(dir, &format!("alignment for {id}")))?;
        if align.phones != phones {
            return Err(Error::invalid(format!("alignment phones of {id} differ from its transcript")));
        }
        let feat_rel = format!("feats/{id}.feat");
        let feats = UtteranceFeatures::load(&require(dir, &feat_rel)?)?;
        let f0 = load_f0(&require(dir, &format!("f0/{id}.f0"))?)?;
        let oracle = match &oracle_aligns {
            Some(m) => match m.get(&id) {
                Some(a) => Some(OracleProsody {
                    durations: a.durations.clone(),
                    f0: load_f0(&require(dir, &format!("oracle/f0/{id}.f0"))?)?,
                }),
                None => None,
            },
            None => None,
        };
        let record = UtteranceRecord {
            utterance_id: id,
            speaker_id,
            phones,
            durations: align.durations.clone(),
            f0,
            mel: feats.mel,
            oracle,
        };
        record.check_alignment()?;
        records.push(record);
    }
    let (language, profiles) = if dir.join("synthetic.json").exists() {
        let path = dir.join("synthetic.json");
        let meta: SyntheticMeta = serde_json::from_str(&read_to_string(&path)?)
            .map_err(|e| Error::format(&path, e.to_string()))?;
        (Some(meta.language), meta.profiles)
    } else {
        (None, Vec::new())
    };
    Ok(Corpus {
        inventory,
        speakers,
        records,
        language,
        profiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_inventory, generate_atypical_corpus, generate_typical_corpus, AtypicalDistortion, TextConfig};

    #[test]
    fn save_load_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_typical_corpus(2, 2, &default_inventory(), &TextConfig::default(), 1).unwrap();
        serialize_corpus(&c, dir.path()).unwrap();
        assert_eq!(load_corpus(dir.path()).unwrap(), c);

        let d = AtypicalDistortion {
            duration_stretch: 2.0,
            f0_shift: 0.4,
            jitter: 1,
            blend: 0.5,
        };
        let a = generate_atypical_corpus(&c.profiles[0], &d, 2, &default_inventory(), &TextConfig::default(), 1).unwrap();
        let adir = dir.path().join("atyp");
        serialize_corpus(&a, &adir).unwrap();
        assert_eq!(load_corpus(&adir).unwrap(), a);
    }

    #[test]
    fn missing_alignment_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_typical_corpus(1, 1, &default_inventory(), &TextConfig::default(), 1).unwrap();
        serialize_corpus(&c, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("alignments.txt")).unwrap();
        match load_corpus(dir.path()) {
            Err(Error::MissingArtifact(m)) => assert!(m.contains("alignments.txt"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn f0_text_roundtrip_is_bit_exact() {
        let c = F0Contour {
            log_f0: vec![std::f64::consts::PI, 1e-300, 5.0],
            voiced: vec![true, false, true],
        };
        assert_eq!(parse_f0(&format_f0(&c), Path::new("mem")).unwrap(), c);
    }
}
