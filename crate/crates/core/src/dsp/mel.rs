//! STFT magnitude and log-mel analysis: 25 ms Hann window, 10 ms hop,
//! 400-point FFT at 16 kHz.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::wav::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::nn::Tensor2D;

pub const WIN_LENGTH: usize = 400;
pub const HOP_LENGTH: usize = 160;
pub const N_FFT: usize = 400;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const MEL_FLOOR: f64 = 1e-10;
pub const F_MAX: f64 = 8000.0;

/// `ln(1e-10)`, the value of an empty mel cell.
pub fn log_floor() -> f64 {
    MEL_FLOOR.ln()
}

/// Log-amplitude mel spectrogram, frames × bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    pub values: Tensor2D,
}

impl MelSpectrogram {
    pub fn new(values: Tensor2D) -> Self {
        Self { values }
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn bands(&self) -> usize {
        self.values.cols()
    }
}

pub fn frame_count(num_samples: usize) -> usize {
    if num_samples < WIN_LENGTH {
        0
    } else {
        (num_samples - WIN_LENGTH) / HOP_LENGTH + 1
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Triangular mel filters spanning 0–8000 Hz with unit peak height.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    bands: usize,
    /// bands × N_BINS
    weights: Tensor2D,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(bands: usize) -> Self {
        let m_max = hz_to_mel(F_MAX);
        let points: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(m_max * i as f64 / (bands + 1) as f64))
            .collect();
        let mut weights = Tensor2D::zeros(bands, N_BINS);
        for b in 0..bands {
            let (lo, mid, hi) = (points[b], points[b + 1], points[b + 2]);
            for k in 0..N_BINS {
                let f = k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights.set(b, k, w);
            }
        }
        Self {
            bands,
            weights,
            centers_hz: points[1..=bands].to_vec(),
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn weights(&self) -> &Tensor2D {
        &self.weights
    }

    pub fn center_frequencies(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Log-mel of one magnitude spectrum.
    pub fn apply_log(&self, magnitude: &[f64], out: &mut [f64]) {
        for (b, o) in out.iter_mut().enumerate() {
            let e: f64 = self.weights.row(b).iter().zip(magnitude).map(|(w, m)| w * m).sum();
            *o = e.max(MEL_FLOOR).ln();
        }
    }
}

/// Frame-wise FFT with the analysis window applied.
pub struct Stft {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl Default for Stft {
    fn default() -> Self {
        Self::new()
    }
}

impl Stft {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        Self {
            window: hann_window(WIN_LENGTH),
            fft: planner.plan_fft_forward(N_FFT),
            ifft: planner.plan_fft_inverse(N_FFT),
        }
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Complex spectra (N_BINS per frame) of all full frames.
    pub fn analyze(&self, samples: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let frames = frame_count(samples.len());
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        (0..frames)
            .map(|i| {
                let start = i * HOP_LENGTH;
                for (n, b) in buf.iter_mut().enumerate() {
                    *b = Complex::new(samples[start + n] * self.window[n], 0.0);
                }
                self.fft.process(&mut buf);
                buf[..N_BINS].to_vec()
            })
            .collect()
    }

    /// Windowed overlap-add inverse normalised by the summed squared window.
    pub fn synthesize(&self, spectra: &[Vec<Complex<f64>>]) -> Vec<f64> {
        let frames = spectra.len();
        if frames == 0 {
            return Vec::new();
        }
        let len = (frames - 1) * HOP_LENGTH + WIN_LENGTH;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        for (i, spec) in spectra.iter().enumerate() {
            buf[..N_BINS].copy_from_slice(spec);
            for k in N_BINS..N_FFT {
                buf[k] = spec[N_FFT - k].conj();
            }
            self.ifft.process(&mut buf);
            let start = i * HOP_LENGTH;
            for n in 0..WIN_LENGTH {
                let w = self.window[n];
                out[start + n] += buf[n].re / N_FFT as f64 * w;
                norm[start + n] += w * w;
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-16 {
                *o /= n;
            } else {
                *o = 0.0;
            }
        }
        out
    }
}

pub fn magnitude(spec: &[Complex<f64>]) -> Vec<f64> {
    spec.iter().map(|c| c.norm()).collect()
}

/// Log-mel spectrogram with `bands` ∈ {40, 80}.
pub fn mel_spectrogram(w: &Waveform, bands: usize) -> Result<MelSpectrogram> {
    if bands != 40 && bands != 80 {
        return Err(Error::invalid(format!("mel band count {bands} not in {{40, 80}}")));
    }
    if w.sample_rate != SAMPLE_RATE {
        return Err(Error::invalid(format!("waveform at {} Hz, expected 16000", w.sample_rate)));
    }
    if w.samples.len() < WIN_LENGTH {
        return Err(Error::invalid(format!(
            "signal of {} samples shorter than one {WIN_LENGTH}-sample window",
            w.samples.len()
        )));
    }
    let fb = MelFilterbank::new(bands);
    Ok(mel_with(&Stft::new(), &fb, &w.samples))
}

pub(crate) fn mel_with(stft: &Stft, fb: &MelFilterbank, samples: &[f64]) -> MelSpectrogram {
    let spectra = stft.analyze(samples);
    let mut values = Tensor2D::zeros(spectra.len(), fb.bands());
    for (i, s) in spectra.iter().enumerate() {
        fb.apply_log(&magnitude(s), values.row_mut(i));
    }
    MelSpectrogram::new(values)
}

/// Folds an 80-band log-mel into 40 bands by log-sum-exp of adjacent pairs.
/// Used to derive speech-encoder inputs from stored 80-band features.
pub fn fold_to_40(mel80: &MelSpectrogram) -> Result<MelSpectrogram> {
    if mel80.bands() != 80 {
        return Err(Error::dims("fold_to_40 bands", 80, mel80.bands()));
    }
    let mut out = Tensor2D::zeros(mel80.frames(), 40);
    for t in 0..mel80.frames() {
        let src = mel80.values.row(t);
        for (b, o) in out.row_mut(t).iter_mut().enumerate() {
            let (a, c) = (src[2 * b], src[2 * b + 1]);
            let m = a.max(c);
            *o = m + (((a - m).exp() + (c - m).exp()) * 0.5).ln();
        }
    }
    Ok(MelSpectrogram::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, n: usize) -> Waveform {
        Waveform::new(
            (0..n)
                .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
                .collect(),
            16_000,
        )
    }

    #[test]
    fn one_second_gives_98_frames() {
        // floor((16000 - 400) / 160) + 1
        let m = mel_spectrogram(&Waveform::new(vec![0.0; 16_000], 16_000), 80).unwrap();
        assert_eq!(m.frames(), 98);
    }

    #[test]
    fn silence_is_log_floor() {
        let m = mel_spectrogram(&Waveform::new(vec![0.0; 1000], 16_000), 40).unwrap();
        assert!(m.values.as_slice().iter().all(|&v| v == log_floor()));
    }

    #[test]
    fn tone_peaks_at_nearest_center() {
        let fb = MelFilterbank::new(80);
        let nearest = fb
            .center_frequencies()
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        let m = mel_spectrogram(&tone(1000.0, 4000), 80).unwrap();
        for t in 0..m.frames() {
            let row = m.values.row(t);
            let argmax = (0..80).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, nearest);
        }
    }

    #[test]
    fn rejects_short_or_odd_band_count() {
        assert!(mel_spectrogram(&Waveform::new(vec![0.0; 399], 16_000), 80).is_err());
        assert!(mel_spectrogram(&Waveform::new(vec![0.0; 800], 16_000), 64).is_err());
    }

    #[test]
    fn hop_shift_covariance() {
        let w = tone(313.0, 3200);
        let mut shifted = vec![0.0; HOP_LENGTH];
        shifted.extend_from_slice(&w.samples);
        let a = mel_spectrogram(&w, 80).unwrap();
        let b = mel_spectrogram(&Waveform::new(shifted, 16_000), 80).unwrap();
        assert_eq!(b.frames(), a.frames() + 1);
        for t in 0..a.frames() {
            for (x, y) in a.values.row(t).iter().zip(b.values.row(t + 1)) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fold_preserves_constant_energy() {
        let m = MelSpectrogram::new(Tensor2D::filled(3, 80, -2.0));
        let f = fold_to_40(&m).unwrap();
        assert!(f.values.as_slice().iter().all(|v| (v + 2.0).abs() < 1e-12));
    }
}
