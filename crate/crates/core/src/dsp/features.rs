//! Per-utterance feature container.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! magic        8 bytes  "ATYVFEAT"
//! header_len   u32      followed by UTF-8 JSON [`FeatureHeader`]
//! mel          frames·bands × f64, row-major
//! log_f0       frames × f64
//! voiced       frames × u8 (0 or 1)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::f0::F0Contour;
use super::mel::{MelSpectrogram, HOP_LENGTH, WIN_LENGTH};
use super::wav::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::nn::Tensor2D;
use crate::util::atomic_write;

pub const FEATURE_MAGIC: &[u8; 8] = b"ATYVFEAT";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureHeader {
    pub version: u32,
    pub utterance_id: String,
    pub frames: usize,
    pub bands: usize,
    pub sample_rate: u32,
    pub win_length: usize,
    pub hop_length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub utterance_id: String,
    pub mel: MelSpectrogram,
    pub f0: F0Contour,
}

impl UtteranceFeatures {
    pub fn new(utterance_id: impl Into<String>, mel: MelSpectrogram, f0: F0Contour) -> Result<Self> {
        if mel.frames() != f0.frames() {
            return Err(Error::dims("F0 frames vs mel frames", mel.frames(), f0.frames()));
        }
        f0.validate()?;
        Ok(Self {
            utterance_id: utterance_id.into(),
            mel,
            f0,
        })
    }

    pub fn frames(&self) -> usize {
        self.mel.frames()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = FeatureHeader {
            version: FEATURE_VERSION,
            utterance_id: self.utterance_id.clone(),
            frames: self.frames(),
            bands: self.mel.bands(),
            sample_rate: SAMPLE_RATE,
            win_length: WIN_LENGTH,
            hop_length: HOP_LENGTH,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + self.mel.values.len() * 8 + self.frames() * 9);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.mel.values.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.f0.log_f0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend(self.f0.voiced.iter().map(|&v| u8::from(v)));
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(origin, msg);
        if bytes.get(..8) != Some(FEATURE_MAGIC) {
            return Err(bad("not a feature container (bad magic)".into()));
        }
        let header_len = bytes
            .get(8..12)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .ok_or_else(|| bad("truncated header length".into()))?;
        let body = 12 + header_len;
        let header: FeatureHeader = serde_json::from_slice(
            bytes.get(12..body).ok_or_else(|| bad("truncated header".into()))?,
        )
        .map_err(|e| bad(format!("feature header: {e}")))?;
        if header.version != FEATURE_VERSION {
            return Err(bad(format!("unsupported feature version {}", header.version)));
        }
        let (frames, bands) = (header.frames, header.bands);
        let expected = body + frames * bands * 8 + frames * 8 + frames;
        if bytes.len() != expected {
            return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let f64s = |from: usize, n: usize| -> Vec<f64> {
            bytes[from..from + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect()
        };
        let mel = Tensor2D::from_vec(frames, bands, f64s(body, frames * bands))?;
        let f0_at = body + frames * bands * 8;
        let log_f0 = f64s(f0_at, frames);
        let voiced = bytes[f0_at + frames * 8..].iter().map(|&b| b != 0).collect();
        Self::new(header.utterance_id, MelSpectrogram::new(mel), F0Contour { log_f0, voiced })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(format!("feature file {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mel = Tensor2D::from_vec(3, 2, vec![0.1, -1e300, f64::MIN_POSITIVE, 2.0, -0.0, 7.5]).unwrap();
        let f0 = F0Contour {
            log_f0: vec![5.0, 5.1, 5.2],
            voiced: vec![true, false, true],
        };
        let u = UtteranceFeatures::new("s0_u1", MelSpectrogram::new(mel), f0).unwrap();
        let bytes = u.to_bytes();
        let back = UtteranceFeatures::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, u);
    }

    #[test]
    fn frame_mismatch_and_truncation_rejected() {
        let mel = MelSpectrogram::new(Tensor2D::zeros(2, 2));
        let f0 = F0Contour {
            log_f0: vec![1.0],
            voiced: vec![true],
        };
        assert!(UtteranceFeatures::new("x", mel.clone(), f0).is_err());
        let ok = UtteranceFeatures::new(
            "x",
            mel,
            F0Contour {
                log_f0: vec![1.0, 1.0],
                voiced: vec![true, true],
            },
        )
        .unwrap();
        let bytes = ok.to_bytes();
        assert!(UtteranceFeatures::from_bytes(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
    }
}
