//! Fast invariant suites shared by the `selftest` command and the
//! acceptance tests.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conversion::ConditionedInput;
use crate::corpus::{default_inventory, generate_atypical_corpus, generate_typical_corpus, AtypicalDistortion, TextConfig};
use crate::dsp::f0::F0Contour;
use crate::error::Result;
use crate::eval::{cer, edit_distance, wer};
use crate::nn::gradcheck::{check_attention, check_layer, numeric_gradient, relative_error};
use crate::nn::{init_layer, Activation, LayerSpec, LocationAttention, ParamStore, Tensor2D};
use crate::prosody::expand_embeddings;
use crate::speaker::ge2e_loss;
use crate::util::derive_seed;

pub const LAYER_TOLERANCE: f64 = 1e-3;
pub const GE2E_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2D {
    Tensor2D::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("sizes agree")
}

/// Finite-difference checks of every layer kind, location attention and
/// GE2E on `instances` random small problems each.
pub fn gradient_suite(instances: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let kinds = ["fully-connected", "conv1d", "bgru", "blstm", "lstm"];
    for (k, name) in kinds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, name));
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let input = rng.random_range(1..4);
            let width = rng.random_range(1..4);
            let steps = rng.random_range(1..6);
            let layers = rng.random_range(1..3);
            let kernel = [1, 3, 5][rng.random_range(0..3)];
            let spec = match k {
                0 => LayerSpec::fully_connected("l", input, width, Activation::Tanh),
                1 => LayerSpec::conv1d("l", input, width, kernel, Activation::Relu),
                2 => LayerSpec::bgru("l", input, width, layers),
                3 => LayerSpec::blstm("l", input, width, layers),
                _ => LayerSpec::lstm("l", input, width, layers),
            };
            let mut p = ParamStore::new(rng.random());
            init_layer(&spec, &mut p)?;
            let x = random_tensor(steps, input, &mut rng);
            worst = worst.max(check_layer(&spec, &p, &x, 1e-5, rng.random())?.max_rel_error);
        }
        out.push(CheckOutcome::new(
            &format!("gradient/{name}"),
            worst <= LAYER_TOLERANCE,
            format!("{instances} instances, max relative error {worst:.2e}"),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "attention"));
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (len, mdim, qdim, adim) = (
            rng.random_range(1..6),
            rng.random_range(1..4),
            rng.random_range(1..4),
            rng.random_range(1..4),
        );
        let spec = LayerSpec::location_attention("att", mdim, qdim, adim, [1, 3, 5][rng.random_range(0..3)]);
        let mut p = ParamStore::new(rng.random());
        LocationAttention::new(spec.clone())?.init(&mut p);
        let m = random_tensor(len, mdim, &mut rng);
        let steps = rng.random_range(1..4);
        let q = random_tensor(steps, qdim, &mut rng);
        worst = worst.max(check_attention(&spec, &p, &m, &q, 1e-5, rng.random())?.max_rel_error);
    }
    out.push(CheckOutcome::new(
        "gradient/location-attention",
        worst <= LAYER_TOLERANCE,
        format!("{instances} instances, max relative error {worst:.2e}"),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "ge2e"));
    let mut worst: f64 = 0.0;
    let mut bias_ok = true;
    for _ in 0..instances {
        let (n, m, d) = (rng.random_range(2..5), rng.random_range(2..5), rng.random_range(2..6));
        let mut e = random_tensor(n * m, d, &mut rng);
        for r in 0..n * m {
            let norm = e.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
            e.row_mut(r).iter_mut().for_each(|v| *v /= norm);
        }
        let (w, b) = (rng.random_range(1.0..10.0), rng.random_range(-5.0..0.0));
        let g = ge2e_loss(&e, n, m, w, b)?;
        let num = numeric_gradient(e.as_slice(), 1e-6, |v| {
            let t = Tensor2D::from_vec(n * m, d, v.to_vec()).expect("same shape");
            ge2e_loss(&t, n, m, w, b).expect("valid batch").loss
        });
        for (a, nv) in g.d_embeddings.as_slice().iter().zip(&num) {
            worst = worst.max(relative_error(*a, *nv));
        }
        let nwb = numeric_gradient(&[w, b], 1e-6, |p| ge2e_loss(&e, n, m, p[0], p[1]).expect("valid batch").loss);
        worst = worst.max(relative_error(g.dw, nwb[0]));
        // The bias gradient vanishes identically, so compare it absolutely.
        bias_ok &= g.db.abs() < 1e-9 && nwb[1].abs() < 1e-6;
    }
    out.push(CheckOutcome::new(
        "gradient/ge2e",
        worst <= GE2E_TOLERANCE && bias_ok,
        format!("{instances} instances, max relative error {worst:.2e}, bias gradient zero: {bias_ok}"),
    ));
    Ok(out)
}

/// Random expansion and conditioning constructions plus generated-corpus
/// frame agreement.
pub fn alignment_suite(constructions: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "alignment"));
    let mut expand_ok = 0usize;
    let mut cond_ok = 0usize;
    for _ in 0..constructions {
        let tokens = rng.random_range(1..20);
        let dim = rng.random_range(1..8);
        let emb = random_tensor(tokens, dim, &mut rng);
        let durations: Vec<usize> = (0..tokens).map(|_| rng.random_range(0..12)).collect();
        let total: usize = durations.iter().sum();
        let x = expand_embeddings(&emb, &durations)?;
        let mut rows_match = x.rows() == total && x.cols() == dim;
        let mut t = 0;
        for (i, &d) in durations.iter().enumerate() {
            for _ in 0..d {
                rows_match &= x.row(t) == emb.row(i);
                t += 1;
            }
        }
        expand_ok += usize::from(rows_match);

        let f0 = F0Contour {
            log_f0: (0..total).map(|_| rng.random_range(4.0..6.0)).collect(),
            voiced: (0..total).map(|_| rng.random_bool(0.6)).collect(),
        };
        let dse: Vec<f64> = (0..rng.random_range(1..16)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = ConditionedInput::new(&x, &f0, &dse)?;
        let mut ok = c.frames() == total && c.values.cols() == dim + 2 + dse.len();
        for t in 0..total {
            let row = c.values.row(t);
            ok &= row[..dim] == *x.row(t)
                && row[dim] == f0.log_f0[t]
                && row[dim + 1] == f64::from(u8::from(f0.voiced[t]))
                && row[dim + 2..] == dse[..];
        }
        let short = F0Contour {
            log_f0: vec![5.0; total + 1],
            voiced: vec![true; total + 1],
        };
        ok &= ConditionedInput::new(&x, &short, &dse).is_err();
        cond_ok += usize::from(ok);
    }
    let mut out = vec![
        CheckOutcome::new(
            "alignment/expand-embeddings",
            expand_ok == constructions,
            format!("{expand_ok}/{constructions} constructions"),
        ),
        CheckOutcome::new(
            "alignment/conditioned-input",
            cond_ok == constructions,
            format!("{cond_ok}/{constructions} constructions"),
        ),
    ];
    let inv = default_inventory();
    let text = TextConfig::default();
    let typical = generate_typical_corpus(3, 4, &inv, &text, seed)?;
    let d = AtypicalDistortion {
        duration_stretch: 2.0,
        f0_shift: 0.4,
        jitter: 1,
        blend: 0.5,
    };
    let atypical = generate_atypical_corpus(&typical.profiles[0], &d, 4, &inv, &text, seed)?;
    let records = typical.records.len() + atypical.records.len();
    let aligned = typical.check_alignment().is_ok() && atypical.check_alignment().is_ok();
    out.push(CheckOutcome::new(
        "alignment/corpus-records",
        aligned,
        format!("{records} generated records"),
    ));
    Ok(out)
}

/// All strings over `0..alphabet` of length at most `max_len`, shortest first.
fn all_strings(max_len: usize, alphabet: u8) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut start = 0;
    for _ in 0..max_len {
        let end = out.len();
        for i in start..end {
            for c in 0..alphabet {
                let mut s = out[i].clone();
                s.push(c);
                out.push(s);
            }
        }
        start = end;
    }
    out
}

/// Exhaustive edit-script search: breadth-first distances from every string
/// through single substitutions, insertions and deletions. Intermediate
/// strings never need to be longer than both endpoints.
fn bfs_distances(strings: &[Vec<u8>], max_len: usize, alphabet: u8) -> Vec<Vec<u8>> {
    let index = |s: &[u8]| -> usize {
        // Strings are ordered by length, then lexicographically in base `alphabet`.
        let mut offset = 0usize;
        let mut width = 1usize;
        for _ in 0..s.len() {
            offset += width;
            width *= alphabet as usize;
        }
        offset + s.iter().fold(0usize, |acc, &c| acc * alphabet as usize + c as usize)
    };
    let neighbours: Vec<Vec<usize>> = strings
        .iter()
        .map(|s| {
            let mut nb = Vec::new();
            for i in 0..s.len() {
                for c in 0..alphabet {
                    if c != s[i] {
                        let mut t = s.clone();
                        t[i] = c;
                        nb.push(index(&t));
                    }
                }
                let mut t = s.clone();
                t.remove(i);
                nb.push(index(&t));
            }
            if s.len() < max_len {
                for i in 0..=s.len() {
                    for c in 0..alphabet {
                        let mut t = s.clone();
                        t.insert(i, c);
                        nb.push(index(&t));
                    }
                }
            }
            nb
        })
        .collect();
    (0..strings.len())
        .map(|src| {
            let mut dist = vec![u8::MAX; strings.len()];
            dist[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &v in &neighbours[u] {
                    if dist[v] == u8::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            dist
        })
        .collect()
}

fn random_sentence(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 8] = ["the", "Cat", "sat,", "on", "a", "mat.", "quick", "fox!"];
    let n = rng.random_range(1..7);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Oracle comparison on every pair of strings up to `max_len`, symmetry,
/// the triangle inequality, and the CER/WER concatenation identity.
pub fn edit_distance_suite(max_len: usize, alphabet: u8, seed: u64) -> Result<Vec<CheckOutcome>> {
    let strings = all_strings(max_len, alphabet);
    let oracle = bfs_distances(&strings, max_len, alphabet);
    let mut pairs = 0usize;
    let mut mismatches = 0usize;
    let mut split_errors = 0usize;
    for (i, a) in strings.iter().enumerate().skip(1) {
        for (j, b) in strings.iter().enumerate() {
            let c = edit_distance(a, b)?;
            pairs += 1;
            mismatches += usize::from(c.distance != oracle[i][j] as usize);
            let consistent = c.substitutions + c.insertions + c.deletions == c.distance
                && a.len() + c.insertions == b.len() + c.deletions;
            split_errors += usize::from(!consistent);
        }
    }
    let mut out = vec![
        CheckOutcome::new(
            "edit-distance/exhaustive-oracle",
            mismatches == 0 && split_errors == 0,
            format!("{pairs} pairs up to length {max_len} over {alphabet} symbols, {mismatches} mismatches, {split_errors} inconsistent S/I/D splits"),
        ),
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "edit"));
    let mut metric_ok = true;
    for _ in 0..500 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            (0..rng.random_range(1..10)).map(|_| rng.random_range(0..4)).collect()
        };
        let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let d = |x: &[u8], y: &[u8]| edit_distance(x, y).map(|e| e.distance);
        metric_ok &= d(&a, &b)? == d(&b, &a)?;
        metric_ok &= d(&a, &c)? <= d(&a, &b)? + d(&b, &c)?;
    }
    out.push(CheckOutcome::new(
        "edit-distance/metric",
        metric_ok,
        "500 random triples: symmetry and triangle inequality".into(),
    ));

    let mut concat_ok = true;
    for _ in 0..200 {
        let corpus = |rng: &mut ChaCha8Rng| -> Vec<(String, String)> {
            (0..rng.random_range(1..5)).map(|_| (random_sentence(rng), random_sentence(rng))).collect()
        };
        let (x, y) = (corpus(&mut rng), corpus(&mut rng));
        let joined: Vec<(String, String)> = x.iter().chain(&y).cloned().collect();
        let char_len = |c: &[(String, String)]| -> f64 {
            c.iter().map(|(r, _)| crate::eval::normalize_text(r).chars().count()).sum::<usize>() as f64
        };
        let word_len = |c: &[(String, String)]| -> f64 {
            c.iter().map(|(r, _)| crate::eval::normalize_text(r).split(' ').count()).sum::<usize>() as f64
        };
        let (cx, cy) = (char_len(&x), char_len(&y));
        let expect_c = (cer(&x)? * cx + cer(&y)? * cy) / (cx + cy);
        let (wx, wy) = (word_len(&x), word_len(&y));
        let expect_w = (wer(&x)? * wx + wer(&y)? * wy) / (wx + wy);
        concat_ok &= (cer(&joined)? - expect_c).abs() < 1e-9 && (wer(&joined)? - expect_w).abs() < 1e-9;
    }
    out.push(CheckOutcome::new(
        "edit-distance/concatenation",
        concat_ok,
        "200 corpus pairs: CER and WER of the union are length-weighted means".into(),
    ));
    Ok(out)
}

/// The `selftest` command: every suite at a size that runs in seconds.
pub fn run_selftest(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = gradient_suite(20, seed)?;
    out.extend(alignment_suite(1000, seed)?);
    out.extend(edit_distance_suite(5, 3, seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_strings_are_indexed_in_order() {
        let s = all_strings(3, 2);
        assert_eq!(s.len(), 1 + 2 + 4 + 8);
        assert_eq!(s[3], vec![0, 0]);
        let d = bfs_distances(&s, 3, 2);
        assert_eq!(d[0][14], 3);
        assert_eq!(d[1][2], 1);
    }

    #[test]
    fn small_selftest_passes() {
        let mut all = gradient_suite(2, 1).unwrap();
        all.extend(alignment_suite(20, 1).unwrap());
        all.extend(edit_distance_suite(4, 2, 1).unwrap());
        for c in &all {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
