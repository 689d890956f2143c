//! Autocorrelation pitch tracking on the 10 ms mel frame grid.

use serde::{Deserialize, Serialize};

use super::mel::{frame_count, HOP_LENGTH, WIN_LENGTH};
use super::wav::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const F0_MIN: f64 = 60.0;
pub const F0_MAX: f64 = 400.0;
pub const VOICING_THRESHOLD: f64 = 0.3;
pub const ENERGY_FLOOR: f64 = 1e-4;
/// Analysis window for pitch: 40 ms, long enough for two periods at 60 Hz.
pub const PITCH_WINDOW: usize = 640;

/// Log-F0 used when an utterance has no voiced frame at all.
pub fn default_log_f0() -> f64 {
    100f64.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Contour {
    pub log_f0: Vec<f64>,
    pub voiced: Vec<bool>,
}

impl F0Contour {
    /// Builds a contour from raw per-frame measurements, interpolating log-F0
    /// across unvoiced frames (held flat beyond the first and last voiced frame).
    pub fn from_measurements(measured: &[Option<f64>]) -> Self {
        let voiced: Vec<bool> = measured.iter().map(Option::is_some).collect();
        let anchors: Vec<(usize, f64)> = measured
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|v| (i, v)))
            .collect();
        let log_f0 = interpolate(measured.len(), &anchors);
        Self { log_f0, voiced }
    }

    pub fn frames(&self) -> usize {
        self.log_f0.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.voiced.len() != self.log_f0.len() {
            return Err(Error::dims("F0 voicing flags", self.log_f0.len(), self.voiced.len()));
        }
        if let Some(i) = self.log_f0.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite log-F0 at frame {i}")));
        }
        Ok(())
    }

    pub fn f0_hz(&self) -> Vec<f64> {
        self.log_f0.iter().map(|v| v.exp()).collect()
    }
}

fn interpolate(len: usize, anchors: &[(usize, f64)]) -> Vec<f64> {
    let Some(&(first_i, first_v)) = anchors.first() else {
        return vec![default_log_f0(); len];
    };
    let &(last_i, last_v) = anchors.last().expect("non-empty");
    let mut out = vec![0.0; len];
    out[..=first_i].fill(first_v);
    out[last_i..].fill(last_v);
    for w in anchors.windows(2) {
        let ((i0, v0), (i1, v1)) = (w[0], w[1]);
        for (k, o) in out[i0..=i1].iter_mut().enumerate() {
            *o = v0 + (v1 - v0) * k as f64 / (i1 - i0) as f64;
        }
    }
    out
}

/// Per-frame pitch over the same frame grid as [`super::mel_spectrogram`].
pub fn extract_f0(w: &Waveform) -> F0Contour {
    let frames = frame_count(w.samples.len());
    let measured: Vec<Option<f64>> = (0..frames)
        .map(|i| {
            let center = (i * HOP_LENGTH + WIN_LENGTH / 2) as isize;
            let start = center - (PITCH_WINDOW / 2) as isize;
            let window: Vec<f64> = (0..PITCH_WINDOW as isize)
                .map(|n| {
                    let k = start + n;
                    if k < 0 || k as usize >= w.samples.len() {
                        0.0
                    } else {
                        w.samples[k as usize]
                    }
                })
                .collect();
            estimate_frame(&window, w.sample_rate as f64).map(f64::ln)
        })
        .collect();
    F0Contour::from_measurements(&measured)
}

/// F0 of one analysis window in Hz or `None` when unvoiced.
fn estimate_frame(x: &[f64], rate: f64) -> Option<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms <= ENERGY_FLOOR {
        return None;
    }
    let min_lag = (rate / F0_MAX).floor() as usize;
    let max_lag = ((rate / F0_MIN).ceil() as usize).min(x.len() / 2);
    // One extra lag on each side for the local-maximum test and refinement.
    let lo = min_lag.saturating_sub(1).max(1);
    let hi = max_lag + 1;
    let r: Vec<f64> = (lo..=hi).map(|lag| normalized_autocorr(x, lag)).collect();
    let at = |lag: usize| r[lag - lo];
    let best = (min_lag..=max_lag).map(at).fold(f64::NEG_INFINITY, f64::max);
    if best < VOICING_THRESHOLD {
        return None;
    }
    let lag = (min_lag..=max_lag).find(|&l| {
        let v = at(l);
        v >= 0.9 * best && v >= at(l - 1) && v >= at(l + 1)
    })?;
    let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let f0 = rate / (lag as f64 + shift);
    Some(f0.clamp(F0_MIN, F0_MAX))
}

fn normalized_autocorr(x: &[f64], lag: usize) -> f64 {
    let n = x.len() - lag;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (x[i], x[i + lag]);
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    let denom = (xx * yy).sqrt();
    if denom <= 1e-20 {
        0.0
    } else {
        xy / denom
    }
}

/// Hz for a lag measured in 16 kHz samples.
pub fn lag_to_hz(lag: f64) -> f64 {
    SAMPLE_RATE as f64 / lag
}
