//! Deep speaker embeddings: a GE2E-trained encoder and a learned table.

pub mod encoder;
pub mod ge2e;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{atomic_write, read_to_string};

pub use encoder::{
    cosine, speaker_features, train_speaker_encoder, SpeakerEncoder, SpeakerEncoderConfig, SpeakerTrainReport,
};
pub use ge2e::{ge2e_loss, Ge2eOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingSource {
    Encoder,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    pub values: Vec<f64>,
    pub source: EmbeddingSource,
}

impl SpeakerEmbedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Speaker id → table embedding, in insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub entries: Vec<(String, Vec<f64>)>,
}

impl EmbeddingTable {
    pub fn get(&self, speaker: &str) -> Option<&[f64]> {
        self.entries.iter().find(|(s, _)| s == speaker).map(|(_, v)| &v[..])
    }

    pub fn embedding(&self, speaker: &str) -> Option<SpeakerEmbedding> {
        self.get(speaker).map(|v| SpeakerEmbedding {
            values: v.to_vec(),
            source: EmbeddingSource::Table,
        })
    }

    pub fn speakers(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(s, _)| s.as_str())
    }

    /// Entry-wise mean of all embeddings.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (_, v) in &self.entries {
            for (a, x) in m.iter_mut().zip(v) {
                *a += x;
            }
        }
        let n = self.entries.len().max(1) as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }
}

/// Entries drawn uniformly from [-0.1, 0.1].
pub fn init_embedding_table(speaker_ids: &[String], dim: usize, seed: u64) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries: Vec<(String, Vec<f64>)> = Vec::with_capacity(speaker_ids.len());
    for id in speaker_ids {
        if entries.iter().any(|(s, _)| s == id) {
            return Err(Error::invalid(format!("duplicate speaker id {id}")));
        }
        entries.push((id.clone(), (0..dim).map(|_| rng.random_range(-0.1..=0.1)).collect()));
    }
    Ok(EmbeddingTable { dim, entries })
}

/// One `speaker-id<TAB>v1,v2,...` line per speaker.
pub fn format_embeddings<'a>(items: impl IntoIterator<Item = (&'a str, &'a [f64])>) -> String {
    items
        .into_iter()
        .map(|(id, v)| {
            let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            format!("{id}\t{}\n", vals.join(","))
        })
        .collect()
}

pub fn parse_embeddings(text: &str, origin: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::format(origin, format!("line {}: {m}", n + 1));
        let (id, vals) = line.split_once('\t').ok_or_else(|| bad("expected id<TAB>values"))?;
        let v = vals
            .split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| bad("non-numeric value")))
            .collect::<Result<Vec<f64>>>()?;
        if let Some((_, first)) = out.first() {
            if first.len() != v.len() {
                return Err(bad("embedding dimensions differ"));
            }
        }
        out.push((id.to_string(), v));
    }
    Ok(out)
}

pub fn save_embeddings(path: &Path, items: &[(String, Vec<f64>)]) -> Result<()> {
    let text = format_embeddings(items.iter().map(|(s, v)| (s.as_str(), &v[..])));
    atomic_write(path, text.as_bytes())
}

pub fn load_embeddings(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    parse_embeddings(&read_to_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_seeded_and_rejects_duplicates() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let t = init_embedding_table(&ids, 5, 4).unwrap();
        assert_eq!(t, init_embedding_table(&ids, 5, 4).unwrap());
        assert_eq!(t.dim, 5);
        assert_ne!(t.get("a"), t.get("b"));
        assert!(t.entries.iter().flat_map(|(_, v)| v).all(|x| x.abs() <= 0.1));
        assert!(init_embedding_table(&["a".into(), "a".into()], 5, 4).is_err());
        assert!(init_embedding_table(&ids, 0, 4).is_err());
    }

    #[test]
    fn export_roundtrip_is_exact() {
        let items = vec![("s1".to_string(), vec![0.1, -1e-17, 3.0]), ("s2".to_string(), vec![1.0, 2.0, 0.3])];
        let text = format_embeddings(items.iter().map(|(s, v)| (s.as_str(), &v[..])));
        assert_eq!(parse_embeddings(&text, Path::new("mem")).unwrap(), items);
        assert!(parse_embeddings("a\t1,2\nb\t1\n", Path::new("mem")).is_err());
    }
}
