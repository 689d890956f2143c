//! Alignment files: `utterance-id<TAB>phoneme:frames phoneme:frames ...`,
//! frames at the 10 ms hop.

use std::path::Path;

use crate::error::{Error, Result};
use crate::util::read_to_string;

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub utterance_id: String,
    pub phones: Vec<String>,
    pub durations: Vec<usize>,
}

impl Alignment {
    pub fn total_frames(&self) -> usize {
        self.durations.iter().sum()
    }
}

pub fn format_alignments<'a>(items: impl IntoIterator<Item = &'a Alignment>) -> String {
    let mut out = String::new();
    for a in items {
        out.push_str(&a.utterance_id);
        out.push('\t');
        let pairs: Vec<String> = a
            .phones
            .iter()
            .zip(&a.durations)
            .map(|(p, d)| format!("{p}:{d}"))
            .collect();
        out.push_str(&pairs.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_alignments(text: &str, origin: &Path) -> Result<Vec<Alignment>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::format(origin, format!("line {}: {m}", n + 1));
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected id<TAB>phoneme:frames ...".into()))?;
        let mut phones = Vec::new();
        let mut durations = Vec::new();
        for pair in rest.split_whitespace() {
            let (p, d) = pair
                .rsplit_once(':')
                .ok_or_else(|| bad(format!("malformed pair {pair:?}")))?;
            let d: usize = d.parse().map_err(|_| bad(format!("bad frame count in {pair:?}")))?;
            phones.push(p.to_string());
            durations.push(d);
        }
        out.push(Alignment {
            utterance_id: id.to_string(),
            phones,
            durations,
        });
    }
    Ok(out)
}

pub fn load_alignments(path: &Path) -> Result<Vec<Alignment>> {
    parse_alignments(&read_to_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let a = Alignment {
            utterance_id: "u1".into(),
            phones: vec!["sil".into(), "a".into()],
            durations: vec![3, 12],
        };
        let text = format_alignments([&a]);
        assert_eq!(text, "u1\tsil:3 a:12\n");
        assert_eq!(parse_alignments(&text, Path::new("mem")).unwrap(), vec![a]);
        assert!(parse_alignments("u1\ta:x\n", Path::new("mem")).is_err());
    }
}
