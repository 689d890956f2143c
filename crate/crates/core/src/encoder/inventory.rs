//! Phoneme inventory and transcript files.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{atomic_write, read_to_string};

pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";
pub const SOS_TOKEN: usize = 0;
pub const EOS_TOKEN: usize = 1;

/// Ordered phoneme labels. Token ids: 0 = `<sos>`, 1 = `<eos>`, then the
/// phonemes in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(String, bool)>", into = "Vec<(String, bool)>")]
pub struct PhonemeInventory {
    phonemes: Vec<String>,
    voiced: Vec<bool>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<(String, bool)>> for PhonemeInventory {
    type Error = Error;

    fn try_from(entries: Vec<(String, bool)>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<PhonemeInventory> for Vec<(String, bool)> {
    fn from(inv: PhonemeInventory) -> Self {
        inv.phonemes.into_iter().zip(inv.voiced).collect()
    }
}

impl PhonemeInventory {
    /// At least two phonemes; labels unique, non-empty, free of whitespace
    /// and `:`, and distinct from the start/end tokens.
    pub fn new(entries: Vec<(String, bool)>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(Error::invalid(format!(
                "degenerate phoneme inventory with {} symbol(s)",
                entries.len()
            )));
        }
        let mut index = HashMap::new();
        for (i, (sym, _)) in entries.iter().enumerate() {
            if sym.is_empty() || sym.contains(char::is_whitespace) || sym.contains(':') {
                return Err(Error::invalid(format!("invalid phoneme label {sym:?}")));
            }
            if sym == SOS || sym == EOS {
                return Err(Error::invalid(format!("phoneme label {sym} is reserved")));
            }
            if index.insert(sym.clone(), i + 2).is_some() {
                return Err(Error::invalid(format!("duplicate phoneme label {sym}")));
            }
        }
        let (phonemes, voiced) = entries.into_iter().unzip();
        Ok(Self {
            phonemes,
            voiced,
            index,
        })
    }

    /// Number of output classes including `<sos>` and `<eos>`.
    pub fn size(&self) -> usize {
        self.phonemes.len() + 2
    }

    pub fn phonemes(&self) -> &[String] {
        &self.phonemes
    }

    pub fn num_phonemes(&self) -> usize {
        self.phonemes.len()
    }

    pub fn token(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, token: usize) -> &str {
        match token {
            SOS_TOKEN => SOS,
            EOS_TOKEN => EOS,
            t => &self.phonemes[t - 2],
        }
    }

    /// Phoneme position (0-based, excluding special tokens).
    pub fn phoneme_index(&self, symbol: &str) -> Option<usize> {
        self.token(symbol).map(|t| t - 2)
    }

    pub fn is_voiced_token(&self, token: usize) -> bool {
        token >= 2 && self.voiced[token - 2]
    }

    pub fn is_voiced(&self, symbol: &str) -> bool {
        self.token(symbol).is_some_and(|t| self.is_voiced_token(t))
    }

    pub fn encode(&self, symbols: &[String]) -> Result<Vec<usize>> {
        symbols
            .iter()
            .map(|s| {
                self.token(s)
                    .ok_or_else(|| Error::invalid(format!("symbol {s:?} is not in the phoneme inventory")))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.phonemes
            .iter()
            .zip(&self.voiced)
            .map(|(s, &v)| format!("{s}\t{}\n", if v { "v" } else { "u" }))
            .collect()
    }

    /// One symbol per line, optionally followed by a tab and `v`/`u`.
    /// Symbols without a voicing column count as voiced.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let sym = parts.next().unwrap_or_default().to_string();
            let voiced = match parts.next() {
                None | Some("v") => true,
                Some("u") => false,
                Some(other) => {
                    return Err(Error::format(
                        origin,
                        format!("line {}: voicing must be v or u, got {other:?}", n + 1),
                    ))
                }
            };
            entries.push((sym, voiced));
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_text().as_bytes())
    }
}

pub type Transcript = Vec<String>;

/// `utterance-id<TAB>space-separated symbols` per line, in file order.
pub fn parse_transcripts(text: &str, origin: &Path) -> Result<Vec<(String, Transcript)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, phones) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(origin, format!("line {}: expected id<TAB>symbols", n + 1)))?;
        out.push((
            id.to_string(),
            phones.split_whitespace().map(str::to_string).collect(),
        ));
    }
    Ok(out)
}

pub fn format_transcripts<'a>(items: impl IntoIterator<Item = (&'a str, &'a [String])>) -> String {
    items
        .into_iter()
        .map(|(id, phones)| format!("{id}\t{}\n", phones.join(" ")))
        .collect()
}

pub fn load_transcripts(path: &Path) -> Result<Vec<(String, Transcript)>> {
    parse_transcripts(&read_to_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv(n: usize) -> Result<PhonemeInventory> {
        PhonemeInventory::new((0..n).map(|i| (format!("p{i}"), i % 2 == 0)).collect())
    }

    #[test]
    fn tokens_follow_special_symbols() {
        let i = inv(3).unwrap();
        assert_eq!(i.size(), 5);
        assert_eq!(i.token("p0"), Some(2));
        assert_eq!(i.symbol(4), "p2");
        assert_eq!(i.symbol(EOS_TOKEN), EOS);
        assert!(i.is_voiced("p2") && !i.is_voiced("p1"));
    }

    #[test]
    fn degenerate_and_duplicate_inventories_rejected() {
        assert!(inv(1).is_err());
        assert!(PhonemeInventory::new(vec![("a".into(), true), ("a".into(), false)]).is_err());
        assert!(PhonemeInventory::new(vec![("a".into(), true), (SOS.into(), false)]).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let i = inv(4).unwrap();
        let back = PhonemeInventory::parse(&i.to_text(), Path::new("mem")).unwrap();
        assert_eq!(back, i);
        let t = format_transcripts([("u1", &["p0".to_string(), "p1".to_string()][..])]);
        assert_eq!(
            parse_transcripts(&t, Path::new("mem")).unwrap(),
            vec![("u1".to_string(), vec!["p0".to_string(), "p1".to_string()])]
        );
    }

    #[test]
    fn unknown_symbol_rejected() {
        assert!(inv(2).unwrap().encode(&["zz".to_string()]).is_err());
    }
}
