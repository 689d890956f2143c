//! RIFF/WAVE ingestion (16-bit PCM mono) and writing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::util::atomic_write;

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Linear-interpolation resampling to `target` Hz.
    pub fn resampled(&self, target: u32) -> Waveform {
        if self.sample_rate == target || self.samples.is_empty() {
            return Waveform::new(self.samples.clone(), target);
        }
        let n = self.samples.len();
        let out_len = ((n as u64 * target as u64 + self.sample_rate as u64 / 2) / self.sample_rate as u64) as usize;
        let ratio = self.sample_rate as f64 / target as f64;
        let samples = (0..out_len)
            .map(|i| {
                let pos = i as f64 * ratio;
                let i0 = pos.floor() as usize;
                let frac = pos - i0 as f64;
                let a = self.samples[i0.min(n - 1)];
                let b = self.samples[(i0 + 1).min(n - 1)];
                a + (b - a) * frac
            })
            .collect();
        Waveform::new(samples, target)
    }
}

fn ingest_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Ingestion {
        offset: offset as u64,
        message: message.into(),
    }
}

fn read_u16(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| ingest_err(at, "unexpected end of file"))
}

fn read_u32(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| ingest_err(at, "unexpected end of file"))
}

/// Parses a 16-bit PCM mono WAV byte stream. Samples are scaled by 1/32768
/// and the result resampled to 16 kHz when needed.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.get(0..4) != Some(b"RIFF") {
        return Err(ingest_err(0, "missing RIFF tag"));
    }
    if bytes.get(8..12) != Some(b"WAVE") {
        return Err(ingest_err(8, "missing WAVE tag"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<(usize, usize)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4)? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(ingest_err(pos + 4, format!("fmt chunk too small ({size} bytes)")));
                }
                format = Some((
                    read_u16(bytes, body)?,
                    read_u16(bytes, body + 2)?,
                    read_u32(bytes, body + 4)?,
                    read_u16(bytes, body + 14)?,
                ));
            }
            b"data" => {
                let end = body.checked_add(size).filter(|&e| e <= bytes.len());
                let end = end.ok_or_else(|| {
                    ingest_err(pos + 4, format!("data chunk of {size} bytes exceeds file"))
                })?;
                data = Some((body, end));
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    let (tag, channels, rate, bits) =
        format.ok_or_else(|| ingest_err(12, "no fmt chunk before end of file"))?;
    if tag != 1 {
        return Err(ingest_err(20, format!("unsupported encoding tag {tag} (PCM is 1)")));
    }
    if channels != 1 {
        return Err(ingest_err(22, format!("unsupported channel count {channels} (mono only)")));
    }
    if bits != 16 {
        return Err(ingest_err(34, format!("unsupported bit depth {bits} (16 only)")));
    }
    if rate == 0 {
        return Err(ingest_err(24, "zero sample rate"));
    }
    let (start, end) = data.ok_or_else(|| ingest_err(bytes.len(), "no data chunk"))?;
    if (end - start) % 2 != 0 {
        return Err(ingest_err(end, "odd byte count in 16-bit data chunk"));
    }
    let samples = bytes[start..end]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok(Waveform::new(samples, rate).resampled(SAMPLE_RATE))
}

pub fn load_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let data_len = w.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &w.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    atomic_write(path, &encode_wav(w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm(samples: &[i16], rate: u32) -> Vec<u8> {
        let w = Waveform::new(samples.iter().map(|&s| s as f64 / 32768.0).collect(), rate);
        encode_wav(&w)
    }

    #[test]
    fn zero_file_loads_as_zeros() {
        let w = parse_wav(&pcm(&[0; 1600], 16_000)).unwrap();
        assert_eq!(w.len(), 1600);
        assert_eq!(w.sample_rate, 16_000);
        assert!(w.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_scale_sample() {
        let w = parse_wav(&pcm(&[32767], 16_000)).unwrap();
        assert!((w.samples[0] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn eight_khz_doubles_length() {
        let w = parse_wav(&pcm(&[100; 801], 8_000)).unwrap();
        assert_eq!(w.len(), 1602);
    }

    #[test]
    fn malformed_headers_report_offsets() {
        match parse_wav(b"RIFX0000WAVE") {
            Err(Error::Ingestion { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        let mut stereo = pcm(&[0; 4], 16_000);
        stereo[22] = 2;
        match parse_wav(&stereo) {
            Err(Error::Ingestion { offset: 22, .. }) => {}
            other => panic!("{other:?}"),
        }
        let mut truncated = pcm(&[0; 10], 16_000);
        truncated.truncate(50);
        assert!(matches!(parse_wav(&truncated), Err(Error::Ingestion { offset: 40, .. })));
    }
}
