//! Δ and ΔΔ regression features.

use super::mel::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nn::Tensor2D;

pub const DELTA_WINDOW: usize = 2;
pub const MIN_DELTA_FRAMES: usize = 5;

/// `d_t = Σ_{n=1..2} n·(c_{t+n} − c_{t−n}) / (2·Σ n²)` with frame indices
/// clamped to the valid range.
pub fn regression_delta(x: &Tensor2D) -> Tensor2D {
    let t_len = x.rows();
    let denom: f64 = 2.0 * (1..=DELTA_WINDOW).map(|n| (n * n) as f64).sum::<f64>();
    let mut out = Tensor2D::zeros(t_len, x.cols());
    if t_len == 0 {
        return out;
    }
    for t in 0..t_len {
        let row = out.row_mut(t);
        for n in 1..=DELTA_WINDOW {
            let hi = x.row((t + n).min(t_len - 1));
            let lo = x.row(t.saturating_sub(n));
            for ((o, a), b) in row.iter_mut().zip(hi).zip(lo) {
                *o += n as f64 * (a - b);
            }
        }
        row.iter_mut().for_each(|v| *v /= denom);
    }
    out
}

/// `[mel | Δ | ΔΔ]`, frames × 3·bands.
pub fn delta_features(m: &MelSpectrogram) -> Result<Tensor2D> {
    if m.frames() < MIN_DELTA_FRAMES {
        return Err(Error::invalid(format!(
            "delta features need at least {MIN_DELTA_FRAMES} frames, got {}",
            m.frames()
        )));
    }
    let d = regression_delta(&m.values);
    let dd = regression_delta(&d);
    Tensor2D::hconcat(&[&m.values, &d, &dd])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec_from(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> MelSpectrogram {
        let mut t = Tensor2D::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                t.set(r, c, f(r, c));
            }
        }
        MelSpectrogram::new(t)
    }

    #[test]
    fn constant_input_has_zero_deltas() {
        let f = delta_features(&spec_from(8, 4, |_, c| c as f64 - 3.0)).unwrap();
        assert_eq!(f.cols(), 12);
        for t in 0..8 {
            assert!(f.row(t)[4..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ramp_has_constant_delta_and_zero_acceleration_inside() {
        let f = delta_features(&spec_from(12, 3, |t, c| 0.5 * t as f64 + c as f64)).unwrap();
        for t in 2..10 {
            for c in 0..3 {
                assert!((f.get(t, 3 + c) - 0.5).abs() < 1e-12);
            }
        }
        for t in 4..8 {
            for c in 0..3 {
                assert!(f.get(t, 6 + c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_brute_force_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = spec_from(10, 40, |_, _| rng.random_range(-5.0..5.0));
        let f = delta_features(&m).unwrap();
        let clamp = |t: isize| t.clamp(0, 9) as usize;
        let brute = |src: &dyn Fn(usize, usize) -> f64, t: usize, c: usize| {
            let t = t as isize;
            let num = (src(clamp(t + 1), c) - src(clamp(t - 1), c))
                + 2.0 * (src(clamp(t + 2), c) - src(clamp(t - 2), c));
            num / 10.0
        };
        let base = |t: usize, c: usize| m.values.get(t, c);
        for t in 0..10 {
            for c in 0..40 {
                assert!((f.get(t, 40 + c) - brute(&base, t, c)).abs() < 1e-12);
            }
        }
        let delta = |t: usize, c: usize| brute(&base, t, c);
        for t in 0..10 {
            for c in 0..40 {
                assert!((f.get(t, 80 + c) - brute(&delta, t, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_short_input() {
        assert!(delta_features(&spec_from(4, 2, |_, _| 0.0)).is_err());
    }
}
