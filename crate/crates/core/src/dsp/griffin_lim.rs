//! Mel inversion by pseudo-inverse magnitude recovery plus Griffin-Lim phase
//! reconstruction.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;

use super::mel::{magnitude, MelFilterbank, MelSpectrogram, Stft, HOP_LENGTH, MEL_FLOOR, N_BINS, N_FFT};
use super::wav::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::nn::Tensor2D;

const NNLS_ITERATIONS: usize = 30;

/// Linear magnitude whose mel projection best matches the given mel
/// amplitudes: clamped pseudo-inverse followed by multiplicative
/// non-negative refinement.
pub fn mel_to_linear(fb: &MelFilterbank, mel: &MelSpectrogram) -> Tensor2D {
    let w = fb.weights();
    let wm = DMatrix::from_row_slice(w.rows(), w.cols(), w.as_slice());
    let pinv = wm
        .clone()
        .pseudo_inverse(1e-10)
        .expect("filterbank SVD converges");
    let wtw = wm.transpose() * &wm;
    let mut out = Tensor2D::zeros(mel.frames(), N_BINS);
    for t in 0..mel.frames() {
        let amp = nalgebra::DVector::from_iterator(
            mel.bands(),
            mel.values.row(t).iter().map(|v| v.exp()),
        );
        let mut s = (&pinv * &amp).map(|v| v.max(0.0));
        let wta = wm.transpose() * &amp;
        for _ in 0..NNLS_ITERATIONS {
            let denom = &wtw * &s;
            for k in 0..N_BINS {
                if s[k] > 0.0 {
                    s[k] *= wta[k] / (denom[k] + 1e-30);
                } else if wta[k] > 0.0 {
                    s[k] = MEL_FLOOR;
                }
            }
        }
        out.row_mut(t).copy_from_slice(s.as_slice());
    }
    out
}

fn mel_l1(fb: &MelFilterbank, spectra: &[Vec<Complex<f64>>], target: &MelSpectrogram) -> f64 {
    let mut row = vec![0.0; fb.bands()];
    let mut total = 0.0;
    for (t, spec) in spectra.iter().enumerate() {
        fb.apply_log(&magnitude(spec), &mut row);
        total += row
            .iter()
            .zip(target.values.row(t))
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    }
    total / (spectra.len() * fb.bands()).max(1) as f64
}

/// Initial phase from spectral peaks. Each bin takes the phase a stationary
/// sinusoid at its nearest peak's interpolated frequency would give under a
/// Hann window starting at the frame boundary: `ω·(t·hop + N/2) − π·k`.
fn peak_locked_phase(mag: &Tensor2D) -> Vec<Vec<Complex<f64>>> {
    (0..mag.rows())
        .map(|t| {
            let row = mag.row(t);
            let top = row.iter().cloned().fold(0.0, f64::max);
            let peaks: Vec<(usize, f64)> = (1..N_BINS - 1)
                .filter(|&k| row[k] > 1e-6 * top && row[k] >= row[k - 1] && row[k] > row[k + 1])
                .map(|k| {
                    let (a, b, c) = (
                        row[k - 1].max(1e-300).ln(),
                        row[k].max(1e-300).ln(),
                        row[k + 1].max(1e-300).ln(),
                    );
                    let d = a - 2.0 * b + c;
                    let delta = if d.abs() > 1e-12 { (0.5 * (a - c) / d).clamp(-0.5, 0.5) } else { 0.0 };
                    (k, k as f64 + delta)
                })
                .collect();
            let start = (t * HOP_LENGTH) as f64 + N_FFT as f64 / 2.0;
            (0..N_BINS)
                .map(|k| {
                    let Some(&(_, freq_bin)) = peaks
                        .iter()
                        .min_by_key(|(p, _)| p.abs_diff(k))
                    else {
                        return Complex::new(1.0, 0.0);
                    };
                    let omega = 2.0 * std::f64::consts::PI * freq_bin / N_FFT as f64;
                    Complex::from_polar(1.0, omega * start - std::f64::consts::PI * k as f64)
                })
                .collect()
        })
        .collect()
}

/// Inverts an 80-band log-mel to a waveform of `frames·160 + 240` samples.
///
/// Every iterate is re-analysed and the one with the lowest mel L1 against
/// the input is returned, so more iterations never give a worse result.
pub fn griffin_lim_invert(m: &MelSpectrogram, iterations: usize) -> Result<Waveform> {
    griffin_lim_with_error(m, iterations).map(|(w, _)| w)
}

/// As [`griffin_lim_invert`], also returning the round-trip mel L1 of the
/// chosen iterate.
pub fn griffin_lim_with_error(m: &MelSpectrogram, iterations: usize) -> Result<(Waveform, f64)> {
    if iterations == 0 {
        return Err(Error::invalid("griffin-lim needs at least one iteration"));
    }
    if m.bands() != 80 {
        return Err(Error::dims("griffin-lim mel bands", 80, m.bands()));
    }
    if m.frames() == 0 {
        return Err(Error::invalid("griffin-lim on an empty spectrogram"));
    }
    let fb = MelFilterbank::new(80);
    let stft = Stft::new();
    let mag = mel_to_linear(&fb, m);
    let mut phase = peak_locked_phase(&mag);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..iterations {
        let spectra: Vec<Vec<Complex<f64>>> = phase
            .iter()
            .enumerate()
            .map(|(t, p)| p.iter().zip(mag.row(t)).map(|(ph, &a)| ph * a).collect())
            .collect();
        let signal = stft.synthesize(&spectra);
        let reanalysed = stft.analyze(&signal);
        let err = mel_l1(&fb, &reanalysed, m);
        if best.as_ref().is_none_or(|(_, e)| err < *e) {
            best = Some((signal, err));
        }
        for (p, spec) in phase.iter_mut().zip(&reanalysed) {
            for (ph, c) in p.iter_mut().zip(spec) {
                let n = c.norm();
                *ph = if n > 1e-300 { c / n } else { Complex::new(1.0, 0.0) };
            }
        }
    }
    let (samples, err) = best.expect("at least one iteration");
    Ok((Waveform::new(samples, SAMPLE_RATE), err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::mel::{log_floor, mel_spectrogram};

    #[test]
    fn tone_roundtrip_is_close() {
        let s: Vec<f64> = (0..4800)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin())
            .collect();
        let m = mel_spectrogram(&Waveform::new(s, 16_000), 80).unwrap();
        let (w, err) = griffin_lim_with_error(&m, 60).unwrap();
        assert_eq!(w.len(), m.frames() * 160 + 240);
        let back = mel_spectrogram(&w, 80).unwrap();
        let l1 = back.values.mean_abs_diff(&m.values);
        assert!((l1 - err).abs() < 1e-9);
        assert!(l1 <= 0.5, "{l1}");
    }

    #[test]
    fn floor_mel_is_near_silent() {
        let m = MelSpectrogram::new(Tensor2D::filled(20, 80, log_floor()));
        let w = griffin_lim_invert(&m, 5).unwrap();
        assert!(w.rms() < 1e-3);
    }

    #[test]
    fn rejects_zero_iterations_and_wrong_bands() {
        let m = MelSpectrogram::new(Tensor2D::filled(4, 80, 0.0));
        assert!(griffin_lim_invert(&m, 0).is_err());
        let m40 = MelSpectrogram::new(Tensor2D::filled(4, 40, 0.0));
        assert!(griffin_lim_invert(&m40, 3).is_err());
    }
}
