//! Acoustic and prosodic distances against an oracle.

use crate::dsp::f0::F0Contour;
use crate::dsp::mel::MelSpectrogram;
use crate::error::{Error, Result};

/// Mean absolute difference of two equally shaped mels.
pub fn mel_l1(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    if a.values.shape() != b.values.shape() {
        return Err(Error::dims(
            "mel_l1 shapes",
            format!("{:?}", b.values.shape()),
            format!("{:?}", a.values.shape()),
        ));
    }
    Ok(a.values.mean_abs_diff(&b.values))
}

/// Mean absolute band difference of the time-averaged spectra. Frame counts
/// may differ.
pub fn spectral_template_distance(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<f64> {
    if a.bands() != b.bands() {
        return Err(Error::dims("spectral template bands", b.bands(), a.bands()));
    }
    if a.frames() == 0 || b.frames() == 0 {
        return Err(Error::invalid("spectral template of an empty mel"));
    }
    let (ma, mb) = (a.values.column_means(), b.values.column_means());
    Ok(ma.iter().zip(&mb).map(|(x, y)| (x - y).abs()).sum::<f64>() / ma.len() as f64)
}

/// Mean |predicted − oracle| frames per phoneme.
pub fn duration_deviation(predicted: &[usize], oracle: &[usize]) -> Result<f64> {
    if predicted.len() != oracle.len() {
        return Err(Error::invalid(format!(
            "cannot compare durations of {} and {} phonemes",
            predicted.len(),
            oracle.len()
        )));
    }
    if oracle.is_empty() {
        return Err(Error::invalid("duration comparison needs at least one phoneme"));
    }
    let total: usize = predicted.iter().zip(oracle).map(|(p, o)| p.abs_diff(*o)).sum();
    Ok(total as f64 / oracle.len() as f64)
}

/// Oracle frame index for each converted frame: frame `j` of phoneme `i`
/// maps to oracle frame `floor(j · o_i / d_i)` of the same phoneme.
pub fn duration_map(durations: &[usize], oracle: &[usize]) -> Result<Vec<usize>> {
    if durations.len() != oracle.len() {
        return Err(Error::invalid(format!(
            "cannot map {} phonemes onto {}",
            durations.len(),
            oracle.len()
        )));
    }
    let mut map = Vec::with_capacity(durations.iter().sum());
    let mut base = 0;
    for (&d, &o) in durations.iter().zip(oracle) {
        if d > 0 && o == 0 {
            return Err(Error::invalid("phoneme has frames but no oracle frames"));
        }
        for j in 0..d {
            map.push(base + j * o / d);
        }
        base += o;
    }
    Ok(map)
}

/// RMS log-F0 error over frames voiced in both contours, after mapping the
/// converted frames onto the oracle timeline.
pub fn f0_rmse(converted: &F0Contour, durations: &[usize], oracle: &F0Contour, oracle_durations: &[usize]) -> Result<f64> {
    let (sum, n) = f0_squared_error(converted, durations, oracle, oracle_durations)?;
    if n == 0 {
        return Err(Error::invalid("no frames are voiced in both contours"));
    }
    Ok((sum / n as f64).sqrt())
}

/// Sum of squared voiced log-F0 errors and the voiced frame count.
pub fn f0_squared_error(
    converted: &F0Contour,
    durations: &[usize],
    oracle: &F0Contour,
    oracle_durations: &[usize],
) -> Result<(f64, usize)> {
    let total: usize = durations.iter().sum();
    if converted.frames() != total {
        return Err(Error::dims("converted F0 frames", total, converted.frames()));
    }
    let otot: usize = oracle_durations.iter().sum();
    if oracle.frames() != otot {
        return Err(Error::dims("oracle F0 frames", otot, oracle.frames()));
    }
    let map = duration_map(durations, oracle_durations)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (t, &o) in map.iter().enumerate() {
        if converted.voiced[t] && oracle.voiced[o] {
            let d = converted.log_f0[t] - oracle.log_f0[o];
            sum += d * d;
            n += 1;
        }
    }
    Ok((sum, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor2D;

    fn contour(v: &[f64]) -> F0Contour {
        F0Contour {
            log_f0: v.to_vec(),
            voiced: vec![true; v.len()],
        }
    }

    #[test]
    fn identical_inputs_score_zero() {
        let m = MelSpectrogram::new(Tensor2D::filled(3, 4, -2.0));
        assert_eq!(mel_l1(&m, &m).unwrap(), 0.0);
        assert_eq!(duration_deviation(&[3, 4], &[3, 4]).unwrap(), 0.0);
        let f = contour(&[5.0, 5.1, 5.2, 5.3]);
        assert_eq!(f0_rmse(&f, &[2, 2], &f, &[2, 2]).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_and_stretch() {
        let a = MelSpectrogram::new(Tensor2D::filled(3, 4, -2.0));
        let b = MelSpectrogram::new(Tensor2D::filled(3, 4, -2.5));
        assert!((mel_l1(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert!(mel_l1(&a, &MelSpectrogram::new(Tensor2D::zeros(2, 4))).is_err());
        // Doubled durations deviate by the mean original duration.
        assert_eq!(duration_deviation(&[6, 10, 2], &[3, 5, 1]).unwrap(), 3.0);
        assert!(duration_deviation(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn duration_mapping_aligns_stretched_contours() {
        assert_eq!(duration_map(&[4, 2], &[2, 1]).unwrap(), vec![0, 0, 1, 1, 2, 2]);
        let oracle = contour(&[5.0, 5.1, 6.0]);
        let stretched = contour(&[5.0, 5.0, 5.1, 5.1, 6.0, 6.0]);
        assert_eq!(f0_rmse(&stretched, &[4, 2], &oracle, &[2, 1]).unwrap(), 0.0);
        let shifted = contour(&[5.5, 5.5, 5.6, 5.6, 6.5, 6.5]);
        assert!((f0_rmse(&shifted, &[4, 2], &oracle, &[2, 1]).unwrap() - 0.5).abs() < 1e-12);
    }
}
