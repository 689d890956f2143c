//! Softmax GE2E loss over an N×M batch (rows speaker-major).

use crate::error::{Error, Result};
use crate::nn::tensor::{axpy, dot};
use crate::nn::Tensor2D;

#[derive(Debug, Clone, PartialEq)]
pub struct Ge2eOutput {
    pub loss: f64,
    pub d_embeddings: Tensor2D,
    pub dw: f64,
    pub db: f64,
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Row `j·m + i` is utterance `i` of speaker `j`. Similarities are
/// `w·cos(e_ji, c_k) + b`; the own-speaker centroid excludes `e_ji`. The loss
/// is summed over all rows.
pub fn ge2e_loss(embeddings: &Tensor2D, n: usize, m: usize, w: f64, b: f64) -> Result<Ge2eOutput> {
    if n < 2 || m < 2 {
        return Err(Error::invalid(format!("GE2E needs at least 2 speakers × 2 utterances, got {n}×{m}")));
    }
    if embeddings.rows() != n * m {
        return Err(Error::dims("GE2E batch rows", n * m, embeddings.rows()));
    }
    let d = embeddings.cols();
    let mut sums = Tensor2D::zeros(n, d);
    for j in 0..n {
        for i in 0..m {
            axpy(1.0, embeddings.row(j * m + i), sums.row_mut(j));
        }
    }
    let mut full = sums.clone();
    full.scale(1.0 / m as f64);

    let mut d_emb = Tensor2D::zeros(n * m, d);
    // Gradients w.r.t. full centroids and w.r.t. each row's exclusive centroid.
    let mut d_full = Tensor2D::zeros(n, d);
    let mut loss = 0.0;
    let mut dw = 0.0;
    let mut db = 0.0;
    let mut excl = vec![0.0; d];
    for j in 0..n {
        for i in 0..m {
            let r = j * m + i;
            let e = embeddings.row(r);
            for ((x, s), v) in excl.iter_mut().zip(sums.row(j)).zip(e) {
                *x = (s - v) / (m - 1) as f64;
            }
            let ne = norm(e);
            let mut cos = vec![0.0; n];
            for (k, cv) in cos.iter_mut().enumerate() {
                let c = if k == j { &excl[..] } else { full.row(k) };
                *cv = dot(e, c) / (ne * norm(c)).max(1e-12);
            }
            let s: Vec<f64> = cos.iter().map(|c| w * c + b).collect();
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - mx).exp()).sum();
            loss += mx + z.ln() - s[j];
            for k in 0..n {
                let ds = (s[k] - mx).exp() / z - if k == j { 1.0 } else { 0.0 };
                dw += ds * cos[k];
                db += ds;
                let g = ds * w;
                let c: Vec<f64> = if k == j { excl.clone() } else { full.row(k).to_vec() };
                let nc = norm(&c).max(1e-12);
                let denom = (ne * nc).max(1e-12);
                // d cos / d e and d cos / d c.
                let de = d_emb.row_mut(r);
                for t in 0..d {
                    de[t] += g * (c[t] / denom - cos[k] * e[t] / (ne * ne));
                }
                let dc: Vec<f64> = (0..d).map(|t| g * (e[t] / denom - cos[k] * c[t] / (nc * nc))).collect();
                if k == j {
                    let share = 1.0 / (m - 1) as f64;
                    for i2 in (0..m).filter(|&i2| i2 != i) {
                        axpy(share, &dc, d_emb.row_mut(j * m + i2));
                    }
                } else {
                    axpy(1.0, &dc, d_full.row_mut(k));
                }
            }
        }
    }
    for k in 0..n {
        for i in 0..m {
            axpy(1.0 / m as f64, d_full.row(k), d_emb.row_mut(k * m + i));
        }
    }
    Ok(Ge2eOutput {
        loss,
        d_embeddings: d_emb,
        dw,
        db,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{numeric_gradient, relative_error};

    fn unit_rows(rows: usize, d: usize, seed: u64) -> Tensor2D {
        let mut s = seed;
        let mut t = Tensor2D::zeros(rows, d);
        for r in 0..rows {
            for v in t.row_mut(r) {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5;
            }
            let n = norm(t.row(r));
            t.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
        t
    }

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (norm(a) * norm(b))
    }

    #[test]
    fn two_by_two_matches_direct_evaluation() {
        let e = unit_rows(4, 3, 7);
        let (w, b) = (3.0, -1.0);
        let rows: Vec<&[f64]> = (0..4).map(|r| e.row(r)).collect();
        let mean = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect() };
        let c = [mean(rows[0], rows[1]), mean(rows[2], rows[3])];
        let mut expect = 0.0;
        for j in 0..2 {
            for i in 0..2 {
                let e_ji = rows[2 * j + i];
                let own = rows[2 * j + (1 - i)];
                let other = &c[1 - j];
                let s_own = w * cos(e_ji, own) + b;
                let s_other = w * cos(e_ji, other) + b;
                expect += -s_own + (s_own.exp() + s_other.exp()).ln();
            }
        }
        let got = ge2e_loss(&e, 2, 2, w, b).unwrap().loss;
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let e = unit_rows(9, 4, seed);
            let (w, b) = (2.5, -0.7);
            let out = ge2e_loss(&e, 3, 3, w, b).unwrap();
            let num = numeric_gradient(e.as_slice(), 1e-6, |v| {
                ge2e_loss(&Tensor2D::from_vec(9, 4, v.to_vec()).unwrap(), 3, 3, w, b).unwrap().loss
            });
            for (a, n) in out.d_embeddings.as_slice().iter().zip(&num) {
                assert!(relative_error(*a, *n) < 1e-4, "{a} vs {n}");
            }
            let nw = numeric_gradient(&[w, b], 1e-6, |p| ge2e_loss(&e, 3, 3, p[0], p[1]).unwrap().loss);
            assert!(relative_error(out.dw, nw[0]) < 1e-4);
            // Softmax rows sum to one, so the bias gradient vanishes.
            assert!(out.db.abs() < 1e-12 && nw[1].abs() < 1e-6);
        }
    }

    #[test]
    fn clustered_batch_has_vanishing_loss() {
        let mut e = Tensor2D::zeros(6, 3);
        for j in 0..3 {
            for i in 0..2 {
                e.set(j * 2 + i, j, 1.0);
            }
        }
        assert!(ge2e_loss(&e, 3, 2, 100.0, -5.0).unwrap().loss < 1e-12);
        assert!(ge2e_loss(&e, 1, 6, 1.0, 0.0).is_err());
        assert!(ge2e_loss(&e, 6, 1, 1.0, 0.0).is_err());
    }
}
