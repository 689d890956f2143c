//! Levenshtein distance with an S/I/D decomposition and error rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

/// Unit-cost edit distance. The decomposition follows one optimal path,
/// preferring substitution (or match), then deletion, then insertion when
/// tracing back from the end.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<EditCounts> {
    if reference.is_empty() {
        return Err(Error::invalid("edit distance needs a non-empty reference"));
    }
    Ok(edit_counts(reference, hypothesis))
}

fn edit_counts<T: PartialEq>(r: &[T], h: &[T]) -> EditCounts {
    let (n, m) = (r.len(), h.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(r[i - 1] != h[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut c = EditCounts {
        distance: d[n * w + m],
        ..EditCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let diff = usize::from(r[i - 1] != h[j - 1]);
            if d[(i - 1) * w + j - 1] + diff == here {
                c.substitutions += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

/// 100 × Σ distance / Σ reference length.
pub fn error_rate<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("error rate needs at least one pair"));
    }
    let mut dist = 0usize;
    let mut len = 0usize;
    for (r, h) in pairs {
        dist += edit_distance(r, h)?.distance;
        len += r.len();
    }
    Ok(100.0 * dist as f64 / len as f64)
}

/// Lowercases, drops punctuation and collapses whitespace.
pub fn normalize_text(s: &str) -> String {
    let kept: String = s
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else if c.is_whitespace() { ' ' } else { '\u{0}' })
        .filter(|&c| c != '\u{0}')
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Character error rate over normalized text (single spaces count as characters).
pub fn cer(pairs: &[(String, String)]) -> Result<f64> {
    let units: Vec<(Vec<char>, Vec<char>)> = pairs
        .iter()
        .map(|(r, h)| (normalize_text(r).chars().collect(), normalize_text(h).chars().collect()))
        .collect();
    error_rate(&units)
}

/// Word error rate over normalized text.
pub fn wer(pairs: &[(String, String)]) -> Result<f64> {
    let units: Vec<(Vec<String>, Vec<String>)> = pairs
        .iter()
        .map(|(r, h)| {
            let split = |s: &str| normalize_text(s).split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect();
            (split(r), split(h))
        })
        .collect();
    error_rate(&units)
}

/// Phoneme error rate over symbol sequences (no normalization).
pub fn per(pairs: &[(Vec<String>, Vec<String>)]) -> Result<f64> {
    error_rate(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn basic_cases() {
        assert_eq!(edit_distance(&ch("abc"), &ch("abc")).unwrap().distance, 0);
        let c = edit_distance(&ch("abc"), &ch("abd")).unwrap();
        assert_eq!((c.distance, c.substitutions), (1, 1));
        let c = edit_distance(&ch("abc"), &ch("")).unwrap();
        assert_eq!((c.distance, c.deletions), (3, 3));
        let c = edit_distance(&ch("a"), &ch("xay")).unwrap();
        assert_eq!((c.distance, c.insertions), (2, 2));
        assert!(edit_distance::<char>(&[], &ch("a")).is_err());
    }

    #[test]
    fn tie_break_prefers_substitution_then_deletion() {
        // "ab" → "ba": two substitutions rather than a deletion and insertion.
        let c = edit_distance(&ch("ab"), &ch("ba")).unwrap();
        assert_eq!((c.substitutions, c.deletions, c.insertions), (2, 0, 0));
        // "ab" → "b": the trailing match wins, then the leading `a` is deleted.
        let c = edit_distance(&ch("ab"), &ch("b")).unwrap();
        assert_eq!((c.substitutions, c.deletions, c.insertions), (0, 1, 0));
    }

    #[test]
    fn rates_and_normalization() {
        assert_eq!(normalize_text("Hello,  World! It's"), "hello world its");
        let pairs = vec![("The cat.".to_string(), "the cat".to_string())];
        assert_eq!(cer(&pairs).unwrap(), 0.0);
        assert_eq!(wer(&pairs).unwrap(), 0.0);
        let pairs = vec![("a b c d".to_string(), String::new())];
        assert_eq!(wer(&pairs).unwrap(), 100.0);
        assert!(cer(&[]).is_err());
        let p = vec![(vec!["a".to_string(), "b".to_string()], vec!["a".to_string()])];
        assert_eq!(per(&p).unwrap(), 50.0);
    }
}
