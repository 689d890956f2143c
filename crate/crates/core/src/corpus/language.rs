//! Synthetic phonetics: per-phoneme spectral shapes, canonical durations and
//! pitch ratios, speaker profiles, and the mel renderer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::f0::F0Contour;
use crate::dsp::mel::{hz_to_mel, MelSpectrogram, F_MAX};
use crate::encoder::inventory::PhonemeInventory;
use crate::error::{Error, Result};
use crate::nn::Tensor2D;
use crate::util::derive_seed;

pub const MEL_BANDS: usize = 80;
pub const SILENCE: &str = "sil";

/// The default fourteen-phoneme inventory: silence, five vowels, three
/// voiced consonants and five unvoiced ones.
pub fn default_inventory() -> PhonemeInventory {
    let entries = [
        ("sil", false),
        ("a", true),
        ("e", true),
        ("i", true),
        ("o", true),
        ("u", true),
        ("m", true),
        ("n", true),
        ("l", true),
        ("s", false),
        ("f", false),
        ("k", false),
        ("t", false),
        ("p", false),
    ];
    PhonemeInventory::new(entries.iter().map(|(s, v)| (s.to_string(), *v)).collect())
        .expect("default inventory is valid")
}

/// One spectral peak in band units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

/// Speaker-independent phonetics shared by every synthetic speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLanguage {
    pub inventory: PhonemeInventory,
    /// Canonical duration in frames per phoneme (3–12).
    pub durations: Vec<usize>,
    /// Pitch of each phoneme relative to the speaker base F0.
    pub pitch_ratio: Vec<f64>,
    pub formants: Vec<Vec<Formant>>,
    /// Log-amplitude floor of each phoneme's shape.
    pub level: Vec<f64>,
}

impl SyntheticLanguage {
    pub fn new(inventory: PhonemeInventory, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "language"));
        let n = inventory.num_phonemes();
        let mut durations = Vec::with_capacity(n);
        let mut pitch_ratio = Vec::with_capacity(n);
        let mut formants = Vec::with_capacity(n);
        let mut level = Vec::with_capacity(n);
        // Spread peak positions so phoneme shapes stay well separated.
        let slots: Vec<f64> = (0..n).map(|i| 6.0 + 66.0 * i as f64 / n.max(2) as f64).collect();
        for (i, sym) in inventory.phonemes().iter().enumerate() {
            durations.push(rng.random_range(3..=12));
            pitch_ratio.push(rng.random_range(0.85..1.2));
            if sym == SILENCE {
                formants.push(Vec::new());
                level.push(-9.0);
                continue;
            }
            let voiced = inventory.is_voiced(sym);
            let first = slots[(i * 7) % n] + rng.random_range(-1.5..1.5);
            let second = (first + rng.random_range(14.0..30.0)).min(76.0);
            let mut f = vec![
                Formant {
                    center: first,
                    width: rng.random_range(2.5..4.0),
                    amplitude: rng.random_range(3.5..5.0),
                },
                Formant {
                    center: second,
                    width: rng.random_range(3.0..5.0),
                    amplitude: rng.random_range(2.0..3.5),
                },
            ];
            if !voiced {
                f.push(Formant {
                    center: rng.random_range(55.0..75.0),
                    width: rng.random_range(6.0..10.0),
                    amplitude: rng.random_range(1.5..2.5),
                });
            }
            formants.push(f);
            level.push(if voiced { -4.0 } else { -5.5 });
        }
        Ok(Self {
            inventory,
            durations,
            pitch_ratio,
            formants,
            level,
        })
    }

    pub fn phoneme_index(&self, symbol: &str) -> Result<usize> {
        self.inventory
            .phoneme_index(symbol)
            .ok_or_else(|| Error::invalid(format!("symbol {symbol:?} is not in the phoneme inventory")))
    }

    /// Partner used for articulation blending: the next non-silence phoneme
    /// of the same voicing class, cyclically.
    pub fn partner(&self, index: usize) -> usize {
        let inv = &self.inventory;
        let sym = &inv.phonemes()[index];
        if sym == SILENCE {
            return index;
        }
        let voiced = inv.is_voiced(sym);
        let class: Vec<usize> = (0..inv.num_phonemes())
            .filter(|&j| inv.phonemes()[j] != SILENCE && inv.is_voiced(&inv.phonemes()[j]) == voiced)
            .collect();
        let pos = class.iter().position(|&j| j == index).expect("index in its class");
        class[(pos + 1) % class.len()]
    }

    /// Articulation shape of one phoneme under a formant warp factor.
    pub fn shape(&self, index: usize, warp: f64) -> Vec<f64> {
        (0..MEL_BANDS)
            .map(|b| {
                let mut v = self.level[index];
                for f in &self.formants[index] {
                    let center = (f.center * warp).min(MEL_BANDS as f64 - 1.0);
                    let d = (b as f64 - center) / f.width;
                    v += f.amplitude * (-0.5 * d * d).exp();
                }
                v
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeakerProfile {
    pub speaker_id: String,
    /// Hz, within [80, 300].
    pub base_f0: f64,
    /// Formant-proxy template per phoneme (80 log-mel values each).
    pub templates: Vec<Vec<f64>>,
    pub tilt_db_per_band: f64,
    /// Smooth speaker-specific offset added to every frame.
    pub timbre: Vec<f64>,
    pub duration_scale: f64,
    pub f0_scale: f64,
    pub atypical: bool,
}

impl SyntheticSpeakerProfile {
    /// Draws a typical speaker: base F0 in [90, 250] Hz, formant warp in
    /// [0.9, 1.1], tilt in [-0.15, 0] dB/band and a three-term cosine timbre.
    pub fn sample(speaker_id: &str, language: &SyntheticLanguage, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("speaker/{speaker_id}")));
        let base_f0 = rng.random_range(90.0..250.0);
        let warp = rng.random_range(0.9..1.1);
        let tilt = rng.random_range(-0.15..0.0);
        let terms: Vec<(f64, f64)> = (1..=3)
            .map(|_| (rng.random_range(-0.3..0.3), rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let timbre = (0..MEL_BANDS)
            .map(|b| {
                terms
                    .iter()
                    .enumerate()
                    .map(|(j, (a, ph))| a * (std::f64::consts::PI * (j + 1) as f64 * b as f64 / 79.0 + ph).cos())
                    .sum()
            })
            .collect();
        let templates = (0..language.inventory.num_phonemes())
            .map(|i| language.shape(i, warp))
            .collect();
        Self {
            speaker_id: speaker_id.to_string(),
            base_f0,
            templates,
            tilt_db_per_band: tilt,
            timbre,
            duration_scale: 1.0,
            f0_scale: 1.0,
            atypical: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(80.0..=300.0).contains(&self.base_f0) {
            return Err(Error::invalid(format!("base F0 {} Hz outside [80, 300]", self.base_f0)));
        }
        if self.duration_scale <= 0.0 {
            return Err(Error::invalid("duration scale must be positive"));
        }
        if self.templates.iter().any(|t| t.len() != MEL_BANDS) || self.timbre.len() != MEL_BANDS {
            return Err(Error::invalid("speaker templates must have 80 bands"));
        }
        Ok(())
    }

    /// Moves each template toward its partner's by `weight` (0 = unchanged).
    pub fn blended(&self, language: &SyntheticLanguage, weight: f64) -> Self {
        let mut out = self.clone();
        if weight == 0.0 {
            return out;
        }
        out.templates = (0..self.templates.len())
            .map(|i| {
                let j = language.partner(i);
                self.templates[i]
                    .iter()
                    .zip(&self.templates[j])
                    .map(|(a, b)| (1.0 - weight) * a + weight * b)
                    .collect()
            })
            .collect();
        out
    }

    fn tilt_log(&self, band: usize) -> f64 {
        self.tilt_db_per_band * band as f64 * std::f64::consts::LN_10 / 20.0
    }
}

/// Fractional band position of a frequency on the 80-band mel axis.
pub fn band_of_hz(f: f64) -> f64 {
    let step = hz_to_mel(F_MAX) / (MEL_BANDS + 1) as f64;
    hz_to_mel(f) / step - 1.0
}

/// Harmonic ridge added to voiced frames: bumps at F0 and 2·F0.
fn pitch_ridge(f0: f64, band: usize) -> f64 {
    let mut v = 0.0;
    for (k, amp) in [(1.0, 1.5), (2.0, 0.8)] {
        let d = (band as f64 - band_of_hz(k * f0)) / 1.5;
        v += amp * (-0.5 * d * d).exp();
    }
    v
}

/// Noise-free mel of a phoneme path. `f0` supplies one log-F0 per frame;
/// voiced frames get the pitch ridge.
pub fn render_mel(
    profile: &SyntheticSpeakerProfile,
    language: &SyntheticLanguage,
    phones: &[String],
    durations: &[usize],
    f0: &F0Contour,
) -> Result<MelSpectrogram> {
    if phones.len() != durations.len() {
        return Err(Error::dims("render durations", phones.len(), durations.len()));
    }
    let frames: usize = durations.iter().sum();
    if f0.frames() != frames {
        return Err(Error::dims("render F0 frames", frames, f0.frames()));
    }
    let mut mel = Tensor2D::zeros(frames, MEL_BANDS);
    let mut t = 0;
    for (sym, &d) in phones.iter().zip(durations) {
        let idx = language.phoneme_index(sym)?;
        let template = &profile.templates[idx];
        for _ in 0..d {
            let voiced = f0.voiced[t];
            let hz = f0.log_f0[t].exp();
            for (b, v) in mel.row_mut(t).iter_mut().enumerate() {
                *v = template[b] + profile.tilt_log(b) + profile.timbre[b];
                if voiced {
                    *v += pitch_ridge(hz, b);
                }
            }
            t += 1;
        }
    }
    Ok(MelSpectrogram::new(mel))
}

/// Piecewise-constant pitch path: each voiced phoneme sits at
/// `base · ratio · (1 − 0.08·position)` with position the token's relative
/// place in the utterance; unvoiced frames are interpolated.
pub fn pitch_path(
    language: &SyntheticLanguage,
    phones: &[String],
    durations: &[usize],
    base_f0: f64,
) -> Result<F0Contour> {
    let n = phones.len();
    let mut measured = Vec::with_capacity(durations.iter().sum());
    for (i, (sym, &d)) in phones.iter().zip(durations).enumerate() {
        let idx = language.phoneme_index(sym)?;
        let hz = if language.inventory.is_voiced(sym) {
            let pos = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            Some((base_f0 * language.pitch_ratio[idx] * (1.0 - 0.08 * pos)).ln())
        } else {
            None
        };
        measured.extend(std::iter::repeat_n(hz, d));
    }
    Ok(F0Contour::from_measurements(&measured))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn language_is_seeded() {
        let a = SyntheticLanguage::new(default_inventory(), 3).unwrap();
        let b = SyntheticLanguage::new(default_inventory(), 3).unwrap();
        assert_eq!(a, b);
        assert!(a.durations.iter().all(|d| (3..=12).contains(d)));
    }

    #[test]
    fn partner_is_a_permutation_within_class() {
        let lang = SyntheticLanguage::new(default_inventory(), 1).unwrap();
        let n = lang.inventory.num_phonemes();
        let mut seen: Vec<usize> = (0..n).map(|i| lang.partner(i)).collect();
        for i in 0..n {
            let p = lang.partner(i);
            let inv = &lang.inventory;
            assert_eq!(inv.is_voiced(&inv.phonemes()[i]), inv.is_voiced(&inv.phonemes()[p]));
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), n);
    }

    #[test]
    fn sampled_profiles_are_valid() {
        let lang = SyntheticLanguage::new(default_inventory(), 1).unwrap();
        for k in 0..20 {
            SyntheticSpeakerProfile::sample(&format!("s{k}"), &lang, 9).validate().unwrap();
        }
    }
}
