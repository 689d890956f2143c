//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::LocationAttention;
use super::layers::{backward, forward};
use super::params::ParamStore;
use super::spec::LayerSpec;
use super::tensor::Tensor2D;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: String::new(),
            checked: 0,
        }
    }

    fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst = what();
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps vanishing gradients from
/// dominating the report.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `f` at `x` along every coordinate.
pub fn numeric_gradient(x: &[f64], eps: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Checks `backward` of one layer against finite differences of the scalar
/// `sum(forward(x) ∘ R)` for a seeded random projection `R`. Covers every
/// parameter entry and every input entry.
pub fn check_layer(
    spec: &LayerSpec,
    params: &ParamStore,
    input: &Tensor2D,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let out = forward(spec, params, input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj = Tensor2D::from_vec(
        out.rows(),
        out.cols(),
        (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let objective = |p: &ParamStore, x: &Tensor2D| -> f64 {
        let y = forward(spec, p, x).expect("shapes validated above");
        y.as_slice().iter().zip(proj.as_slice()).map(|(a, b)| a * b).sum()
    };

    let mut analytic = params.clone();
    analytic.zero_grad();
    let dx = backward(spec, &mut analytic, input, &proj)?;

    let mut report = GradCheckReport::new();
    let numeric_dx = numeric_gradient(input.as_slice(), eps, |v| {
        let x = Tensor2D::from_vec(input.rows(), input.cols(), v.to_vec()).expect("same shape");
        objective(params, &x)
    });
    for (i, (&a, &n)) in dx.as_slice().iter().zip(&numeric_dx).enumerate() {
        report.record(|| format!("input[{i}]"), a, n);
    }

    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let base = params.value(&name)?.clone();
        let mut probe = params.clone();
        let numeric = numeric_gradient(base.as_slice(), eps, |v| {
            probe
                .value_mut(&name)
                .expect("exists")
                .as_mut_slice()
                .copy_from_slice(v);
            objective(&probe, input)
        });
        for (i, (&a, &n)) in analytic.grad(&name)?.as_slice().iter().zip(&numeric).enumerate() {
            report.record(|| format!("{name}[{i}]"), a, n);
        }
    }
    Ok(report)
}

/// Runs location-aware attention for one step per row of `queries`, chaining
/// alignments from the initial one-hot, and checks memory, query and parameter
/// gradients of `Σ_t (context_t·R_t + align_t·Q_t)`.
pub fn check_attention(
    spec: &LayerSpec,
    params: &ParamStore,
    memory: &Tensor2D,
    queries: &Tensor2D,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let att = LocationAttention::new(spec.clone())?;
    if queries.cols() != spec.aux_dim {
        return Err(Error::dims("attention queries", spec.aux_dim, queries.cols()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = queries.rows();
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
    let r_ctx: Vec<Vec<f64>> = (0..steps).map(|_| draw(memory.cols())).collect();
    let r_align: Vec<Vec<f64>> = (0..steps).map(|_| draw(memory.rows())).collect();

    let objective = |p: &ParamStore, m: &Tensor2D, q: &Tensor2D| -> f64 {
        let mem = att.prepare(p, m).expect("shapes validated");
        let mut prev = att.initial_alignment(&mem);
        let mut total = 0.0;
        for t in 0..steps {
            let st = att.step(p, &mem, q.row(t), &prev).expect("shapes validated");
            total += st.context.iter().zip(&r_ctx[t]).map(|(a, b)| a * b).sum::<f64>();
            total += st.align.iter().zip(&r_align[t]).map(|(a, b)| a * b).sum::<f64>();
            prev = st.align;
        }
        total
    };

    let mut analytic = params.clone();
    analytic.zero_grad();
    let mem = att.prepare(&analytic, memory)?;
    let mut prev = att.initial_alignment(&mem);
    let mut caches = Vec::with_capacity(steps);
    for t in 0..steps {
        let st = att.step(&analytic, &mem, queries.row(t), &prev)?;
        prev = st.align.clone();
        caches.push(st.cache);
    }
    let mut grads = att.grads(&mem);
    let mut dq_all = Tensor2D::zeros(steps, queries.cols());
    let mut d_align = vec![0.0; memory.rows()];
    for t in (0..steps).rev() {
        let mut da = r_align[t].clone();
        for (a, b) in da.iter_mut().zip(&d_align) {
            *a += b;
        }
        let (dq, dprev) = att.step_backward(&analytic, &mem, &caches[t], &r_ctx[t], &da, &mut grads)?;
        dq_all.row_mut(t).copy_from_slice(&dq);
        d_align = dprev;
    }
    let dmem = att.finish_backward(&mut analytic, &mem, grads)?;

    let mut report = GradCheckReport::new();
    let num_mem = numeric_gradient(memory.as_slice(), eps, |v| {
        let m = Tensor2D::from_vec(memory.rows(), memory.cols(), v.to_vec()).expect("same shape");
        objective(params, &m, queries)
    });
    for (i, (&a, &n)) in dmem.as_slice().iter().zip(&num_mem).enumerate() {
        report.record(|| format!("memory[{i}]"), a, n);
    }
    let num_q = numeric_gradient(queries.as_slice(), eps, |v| {
        let q = Tensor2D::from_vec(queries.rows(), queries.cols(), v.to_vec()).expect("same shape");
        objective(params, memory, &q)
    });
    for (i, (&a, &n)) in dq_all.as_slice().iter().zip(&num_q).enumerate() {
        report.record(|| format!("query[{i}]"), a, n);
    }
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let base = params.value(&name)?.clone();
        let mut probe = params.clone();
        let numeric = numeric_gradient(base.as_slice(), eps, |v| {
            probe.value_mut(&name).expect("exists").as_mut_slice().copy_from_slice(v);
            objective(&probe, memory, queries)
        });
        for (i, (&a, &n)) in analytic.grad(&name)?.as_slice().iter().zip(&numeric).enumerate() {
            report.record(|| format!("{name}[{i}]"), a, n);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::init_layer;
    use crate::nn::spec::Activation;

    #[test]
    fn fully_connected_matches_finite_differences() {
        let spec = LayerSpec::fully_connected("fc", 4, 3, Activation::Tanh);
        let mut p = ParamStore::new(11);
        init_layer(&spec, &mut p).unwrap();
        let x = Tensor2D::from_vec(2, 4, (0..8).map(|i| (i as f64 * 0.9).sin()).collect()).unwrap();
        let r = check_layer(&spec, &p, &x, 1e-4, 1).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn attention_matches_finite_differences() {
        let spec = LayerSpec::location_attention("att", 3, 2, 4, 3);
        let mut p = ParamStore::new(13);
        LocationAttention::new(spec.clone()).unwrap().init(&mut p);
        let m = Tensor2D::from_vec(5, 3, (0..15).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let q = Tensor2D::from_vec(3, 2, (0..6).map(|i| (i as f64 * 1.3).cos()).collect()).unwrap();
        let r = check_attention(&spec, &p, &m, &q, 1e-5, 3).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn stacked_bgru_matches_finite_differences() {
        let spec = LayerSpec::bgru("g", 3, 4, 2);
        let mut p = ParamStore::new(12);
        init_layer(&spec, &mut p).unwrap();
        let x = Tensor2D::from_vec(5, 3, (0..15).map(|i| (i as f64 * 0.61).cos()).collect()).unwrap();
        let r = check_layer(&spec, &p, &x, 1e-4, 2).unwrap();
        assert!(r.max_rel_error < 1e-3, "{r:?}");
    }
}
