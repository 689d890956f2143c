//! Deterministic synthetic corpora with exact phoneme, duration, F0 and
//! speaker ground truth.

pub mod io;
pub mod language;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dsp::f0::F0Contour;
use crate::dsp::mel::MelSpectrogram;
use crate::dsp::wav::{Waveform, SAMPLE_RATE};
use crate::encoder::inventory::PhonemeInventory;
use crate::error::{Error, Result};
use crate::util::derive_seed;

pub use io::{load_corpus, serialize_corpus};
pub use language::{
    default_inventory, pitch_path, render_mel, SyntheticLanguage, SyntheticSpeakerProfile, SILENCE,
};

/// Ground-truth prosody of the undistorted (typical) rendition.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleProsody {
    pub durations: Vec<usize>,
    pub f0: F0Contour,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub phones: Vec<String>,
    pub durations: Vec<usize>,
    pub f0: F0Contour,
    pub mel: MelSpectrogram,
    pub oracle: Option<OracleProsody>,
}

impl UtteranceRecord {
    pub fn frames(&self) -> usize {
        self.mel.frames()
    }

    /// `Σ durations == mel frames == F0 frames`.
    pub fn check_alignment(&self) -> Result<()> {
        let total: usize = self.durations.iter().sum();
        if self.durations.len() != self.phones.len() {
            return Err(Error::dims(
                format!("{} duration count", self.utterance_id),
                self.phones.len(),
                self.durations.len(),
            ));
        }
        if total != self.mel.frames() {
            return Err(Error::dims(format!("{} Σ durations", self.utterance_id), self.mel.frames(), total));
        }
        if self.f0.frames() != self.mel.frames() {
            return Err(Error::dims(format!("{} F0 frames", self.utterance_id), self.mel.frames(), self.f0.frames()));
        }
        if let Some(o) = &self.oracle {
            if o.durations.len() != self.phones.len() || o.f0.frames() != o.durations.iter().sum::<usize>() {
                return Err(Error::invalid(format!("{}: inconsistent oracle prosody", self.utterance_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub inventory: PhonemeInventory,
    pub speakers: Vec<String>,
    pub records: Vec<UtteranceRecord>,
    /// Present for generated corpora.
    pub language: Option<SyntheticLanguage>,
    pub profiles: Vec<SyntheticSpeakerProfile>,
}

impl Corpus {
    pub fn records_of<'a>(&'a self, speaker: &'a str) -> impl Iterator<Item = &'a UtteranceRecord> + 'a {
        self.records.iter().filter(move |r| r.speaker_id == speaker)
    }

    pub fn profile(&self, speaker: &str) -> Option<&SyntheticSpeakerProfile> {
        self.profiles.iter().find(|p| p.speaker_id == speaker)
    }

    pub fn record(&self, utterance_id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.utterance_id == utterance_id)
    }

    pub fn check_alignment(&self) -> Result<()> {
        self.records.iter().try_for_each(UtteranceRecord::check_alignment)
    }

    /// Keeps the records for which `keep` holds.
    pub fn filtered(&self, keep: impl Fn(&UtteranceRecord) -> bool) -> Corpus {
        let records: Vec<UtteranceRecord> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        let speakers = self
            .speakers
            .iter()
            .filter(|s| records.iter().any(|r| &r.speaker_id == *s))
            .cloned()
            .collect();
        Corpus {
            inventory: self.inventory.clone(),
            speakers,
            records,
            language: self.language.clone(),
            profiles: self.profiles.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextConfig {
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    /// Standard deviation of the additive log-mel noise.
    pub noise_std: f64,
    pub language_seed: u64,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            min_phonemes: 5,
            max_phonemes: 20,
            noise_std: 0.1,
            language_seed: 17,
        }
    }
}

/// Distortions applied to simulate atypical speech.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtypicalDistortion {
    pub duration_stretch: f64,
    pub f0_shift: f64,
    /// Maximum extra frames (±) added per phoneme after stretching.
    pub jitter: usize,
    /// Articulation blend weight toward each phoneme's partner.
    pub blend: f64,
}

impl Default for AtypicalDistortion {
    fn default() -> Self {
        Self::identity()
    }
}

impl AtypicalDistortion {
    pub fn identity() -> Self {
        Self {
            duration_stretch: 1.0,
            f0_shift: 0.0,
            jitter: 0,
            blend: 0.0,
        }
    }
}

fn utterance_id(speaker: &str, j: usize) -> String {
    format!("{speaker}_u{j:03}")
}

/// Phoneme string for one utterance: `sil`, a random run without immediate
/// repeats, `sil`; total length in `[min, max]`.
fn sample_phones(language: &SyntheticLanguage, text: &TextConfig, rng: &mut ChaCha8Rng) -> Vec<String> {
    let inv = &language.inventory;
    let pool: Vec<&String> = inv.phonemes().iter().filter(|s| *s != SILENCE).collect();
    let has_sil = inv.token(SILENCE).is_some();
    let len = rng.random_range(text.min_phonemes..=text.max_phonemes);
    let inner = if has_sil { len.saturating_sub(2).max(1) } else { len };
    let mut phones = Vec::with_capacity(len);
    if has_sil {
        phones.push(SILENCE.to_string());
    }
    let mut prev: Option<usize> = None;
    for _ in 0..inner {
        let mut k = rng.random_range(0..pool.len());
        if pool.len() > 1 && prev == Some(k) {
            k = (k + 1 + rng.random_range(0..pool.len() - 1)) % pool.len();
        }
        phones.push(pool[k].clone());
        prev = Some(k);
    }
    if has_sil {
        phones.push(SILENCE.to_string());
    }
    phones
}

/// Generates `n_utterances` for one speaker. Utterance content and noise
/// depend only on `(seed, speaker id, index)`, so identity distortion
/// reproduces typical generation exactly.
fn generate_speaker(
    language: &SyntheticLanguage,
    profile: &SyntheticSpeakerProfile,
    base_profile: &SyntheticSpeakerProfile,
    n_utterances: usize,
    distortion: Option<&AtypicalDistortion>,
    text: &TextConfig,
    seed: u64,
) -> Result<Vec<UtteranceRecord>> {
    let noise = Normal::new(0.0, text.noise_std.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    (0..n_utterances)
        .map(|j| {
            let id = utterance_id(&profile.speaker_id, j);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("utt/{id}")));
            let phones = sample_phones(language, text, &mut rng);
            let mut durations = Vec::with_capacity(phones.len());
            for sym in &phones {
                let canon = language.durations[language.phoneme_index(sym)?] as i64;
                let jit = rng.random_range(-1..=1);
                durations.push((canon + jit).max(1) as usize);
            }
            let typical_f0 = pitch_path(language, &phones, &durations, base_profile.base_f0)?;
            let (durs, f0, oracle) = match distortion {
                None => (durations, typical_f0, None),
                Some(d) => {
                    let mut jrng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("jitter/{id}")));
                    let stretched: Vec<usize> = durations
                        .iter()
                        .map(|&x| {
                            let mut v = (x as f64 * d.duration_stretch).round() as i64;
                            if d.jitter > 0 {
                                v += jrng.random_range(-(d.jitter as i64)..=d.jitter as i64);
                            }
                            v.max(1) as usize
                        })
                        .collect();
                    let f0 = pitch_path(language, &phones, &stretched, base_profile.base_f0 * (1.0 + d.f0_shift))?;
                    (
                        stretched,
                        f0,
                        Some(OracleProsody {
                            durations,
                            f0: typical_f0,
                        }),
                    )
                }
            };
            let mut mel = render_mel(profile, language, &phones, &durs, &f0)?;
            let mut nrng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("noise/{id}")));
            if text.noise_std > 0.0 {
                for v in mel.values.as_mut_slice() {
                    *v += noise.sample(&mut nrng);
                }
            }
            Ok(UtteranceRecord {
                utterance_id: id,
                speaker_id: profile.speaker_id.clone(),
                phones,
                durations: durs,
                f0,
                mel,
                oracle,
            })
        })
        .collect()
}

/// Typical speakers `spk00`, `spk01`, … with profiles drawn from `seed`.
pub fn generate_typical_corpus(
    n_speakers: usize,
    n_utterances: usize,
    inventory: &PhonemeInventory,
    text: &TextConfig,
    seed: u64,
) -> Result<Corpus> {
    if n_speakers == 0 {
        return Err(Error::invalid("typical corpus needs at least one speaker"));
    }
    let language = SyntheticLanguage::new(inventory.clone(), text.language_seed)?;
    let profiles: Vec<SyntheticSpeakerProfile> = (0..n_speakers)
        .map(|k| SyntheticSpeakerProfile::sample(&format!("spk{k:02}"), &language, seed))
        .collect();
    corpus_from_profiles(language, profiles, n_utterances, text, seed)
}

/// Renders utterances for explicitly given typical profiles.
pub fn corpus_from_profiles(
    language: SyntheticLanguage,
    profiles: Vec<SyntheticSpeakerProfile>,
    n_utterances: usize,
    text: &TextConfig,
    seed: u64,
) -> Result<Corpus> {
    validate_text(text, &language)?;
    let mut records = Vec::new();
    for p in &profiles {
        p.validate()?;
        records.extend(generate_speaker(&language, p, p, n_utterances, None, text, seed)?);
    }
    Ok(Corpus {
        inventory: language.inventory.clone(),
        speakers: profiles.iter().map(|p| p.speaker_id.clone()).collect(),
        records,
        language: Some(language),
        profiles,
    })
}

fn validate_text(text: &TextConfig, language: &SyntheticLanguage) -> Result<()> {
    if language.inventory.num_phonemes() == 0 {
        return Err(Error::invalid("empty phoneme inventory"));
    }
    if text.min_phonemes < 3 || text.min_phonemes > text.max_phonemes {
        return Err(Error::invalid(format!(
            "phoneme count range [{}, {}] is invalid",
            text.min_phonemes, text.max_phonemes
        )));
    }
    Ok(())
}

/// One atypical speaker rendered from `base_profile` with the given
/// distortion. Records carry the undistorted durations and F0 as oracle.
pub fn generate_atypical_corpus(
    base_profile: &SyntheticSpeakerProfile,
    distortion: &AtypicalDistortion,
    n_utterances: usize,
    inventory: &PhonemeInventory,
    text: &TextConfig,
    seed: u64,
) -> Result<Corpus> {
    if distortion.duration_stretch <= 0.0 {
        return Err(Error::invalid("duration stretch must be positive"));
    }
    if !(0.0..=1.0).contains(&distortion.blend) {
        return Err(Error::invalid("articulation blend must lie in [0, 1]"));
    }
    let language = SyntheticLanguage::new(inventory.clone(), text.language_seed)?;
    validate_text(text, &language)?;
    base_profile.validate()?;
    let mut profile = base_profile.blended(&language, distortion.blend);
    profile.duration_scale = distortion.duration_stretch;
    profile.f0_scale = 1.0 + distortion.f0_shift;
    profile.atypical = *distortion != AtypicalDistortion::identity();
    let records = generate_speaker(&language, &profile, base_profile, n_utterances, Some(distortion), text, seed)?;
    Ok(Corpus {
        inventory: inventory.clone(),
        speakers: vec![profile.speaker_id.clone()],
        records,
        language: Some(language),
        profiles: vec![profile],
    })
}

/// Sinusoidal rendering consistent with a record's F0: three harmonics on
/// voiced frames, low-level noise on unvoiced non-silence frames.
/// Length is `frames·160 + 240`, so re-analysis yields the same frame count.
pub fn render_waveform(record: &UtteranceRecord, seed: u64) -> Waveform {
    let hop = 160;
    let frames = record.frames();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("wave/{}", record.utterance_id)));
    let mut samples = vec![0.0; frames * hop + 240];
    let mut frame_phone = Vec::with_capacity(frames);
    for (p, &d) in record.phones.iter().zip(&record.durations) {
        frame_phone.extend(std::iter::repeat_n(p.as_str(), d));
    }
    let mut phase = 0.0f64;
    for (n, s) in samples.iter_mut().enumerate() {
        // Sample n is centred in frame (n - 200) / 160.
        let t = ((n as f64 - 200.0) / hop as f64).round().clamp(0.0, (frames - 1) as f64) as usize;
        let f0 = record.f0.log_f0[t].exp();
        phase += std::f64::consts::TAU * f0 / SAMPLE_RATE as f64;
        *s = if record.f0.voiced[t] {
            (1..=3).map(|k| 0.3 / k as f64 * (k as f64 * phase).sin()).sum()
        } else if frame_phone[t] != SILENCE {
            rng.random_range(-0.05..0.05)
        } else {
            0.0
        };
    }
    Waveform::new(samples, SAMPLE_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> Corpus {
        generate_typical_corpus(2, 3, &default_inventory(), &TextConfig::default(), seed).unwrap()
    }

    #[test]
    fn generation_is_deterministic_and_aligned() {
        let a = small(5);
        assert_eq!(a, small(5));
        assert_ne!(a, small(6));
        a.check_alignment().unwrap();
        for r in &a.records {
            assert!((5..=20).contains(&r.phones.len()));
        }
    }

    #[test]
    fn identity_distortion_reproduces_typical() {
        let typical = small(8);
        let atyp = generate_atypical_corpus(
            &typical.profiles[1],
            &AtypicalDistortion::identity(),
            3,
            &default_inventory(),
            &TextConfig::default(),
            8,
        )
        .unwrap();
        let typical_1: Vec<_> = typical.records_of("spk01").collect();
        for (a, t) in atyp.records.iter().zip(typical_1) {
            assert_eq!(a.mel, t.mel);
            assert_eq!(a.durations, t.durations);
            assert_eq!(a.f0, t.f0);
        }
    }

    #[test]
    fn stretch_doubles_durations_and_shift_scales_f0() {
        let typical = small(2);
        let d = AtypicalDistortion {
            duration_stretch: 2.0,
            f0_shift: 0.4,
            jitter: 0,
            blend: 0.0,
        };
        let atyp =
            generate_atypical_corpus(&typical.profiles[0], &d, 3, &default_inventory(), &TextConfig::default(), 2)
                .unwrap();
        atyp.check_alignment().unwrap();
        for r in &atyp.records {
            let o = r.oracle.as_ref().unwrap();
            for (a, t) in r.durations.iter().zip(&o.durations) {
                assert_eq!(*a, 2 * t);
            }
            let voiced: Vec<f64> = r.f0.f0_hz().into_iter().zip(&r.f0.voiced).filter(|p| *p.1).map(|p| p.0).collect();
            let oracle: Vec<f64> = o.f0.f0_hz().into_iter().zip(&o.f0.voiced).filter(|p| *p.1).map(|p| p.0).collect();
            let med = |mut v: Vec<f64>| {
                v.sort_by(f64::total_cmp);
                v[v.len() / 2]
            };
            assert!((med(voiced) / med(oracle) - 1.4).abs() < 0.02);
        }
    }

    #[test]
    fn tilt_difference_is_monotone_across_bands() {
        let lang = SyntheticLanguage::new(default_inventory(), 17).unwrap();
        let a = SyntheticSpeakerProfile::sample("x", &lang, 4);
        let mut b = a.clone();
        b.tilt_db_per_band = a.tilt_db_per_band - 0.1;
        let c = corpus_from_profiles(lang, vec![a, b], 2, &TextConfig::default(), 4).unwrap();
        let mean = |i: usize| -> Vec<f64> {
            let recs: Vec<_> = c.records.iter().skip(i * 2).take(2).collect();
            let frames: usize = recs.iter().map(|r| r.frames()).sum();
            (0..80)
                .map(|band| recs.iter().map(|r| (0..r.frames()).map(|t| r.mel.values.get(t, band)).sum::<f64>()).sum::<f64>() / frames as f64)
                .collect()
        };
        let (ma, mb) = (mean(0), mean(1));
        let diff: Vec<f64> = ma.iter().zip(&mb).map(|(x, y)| x - y).collect();
        for w in diff.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn waveform_pitch_matches_record() {
        let c = small(3);
        let r = &c.records[0];
        let w = render_waveform(r, 1);
        let est = crate::dsp::extract_f0(&w);
        assert_eq!(est.frames(), r.frames());
        let mut errs = Vec::new();
        for t in 0..r.frames() {
            // Frames well inside a voiced phoneme.
            let lo = t.saturating_sub(3);
            let hi = (t + 3).min(r.frames() - 1);
            if (lo..=hi).all(|k| r.f0.voiced[k] && (r.f0.log_f0[k] - r.f0.log_f0[t]).abs() < 1e-12) {
                errs.push((est.log_f0[t] - r.f0.log_f0[t]).abs());
            }
        }
        assert!(!errs.is_empty());
        assert!(errs.iter().all(|&e| e < 0.03), "{errs:?}");
    }
}
