//! Additive location-aware attention.
//!
//! Energies are `e_t = v · tanh(W_m m_t + W_q q + U_f f_t + b)` where `f_t` is
//! the previous alignment convolved with a single learned filter. Attention
//! is step-driven by the decoder, so it has its own step API instead of the
//! sequence-in/sequence-out layer entry points.

use super::params::ParamStore;
use super::spec::{LayerKind, LayerSpec};
use super::tensor::{axpy, dot, gemv, gemv_t_acc, outer_acc, Tensor2D};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LocationAttention {
    spec: LayerSpec,
    wm: String,
    wq: String,
    b: String,
    filter: String,
    uf: String,
    v: String,
}

/// Memory prepared for a decode: the encoder states and their projection.
#[derive(Debug, Clone)]
pub struct AttentionMemory {
    pub memory: Tensor2D,
    projected: Tensor2D,
}

impl AttentionMemory {
    pub fn len(&self) -> usize {
        self.memory.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.memory.rows() == 0
    }
}

#[derive(Debug, Clone)]
pub struct AttentionStepCache {
    query: Vec<f64>,
    prev_align: Vec<f64>,
    loc: Vec<f64>,
    /// tanh activations, T × A.
    act: Tensor2D,
    align: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AttentionStep {
    pub context: Vec<f64>,
    pub align: Vec<f64>,
    pub cache: AttentionStepCache,
}

/// Gradient accumulators for one decode.
#[derive(Debug, Clone)]
pub struct AttentionGrads {
    dwq: Tensor2D,
    db: Tensor2D,
    dfilter: Tensor2D,
    duf: Tensor2D,
    dv: Tensor2D,
    dprojected: Tensor2D,
    pub dmemory: Tensor2D,
}

impl LocationAttention {
    pub fn new(spec: LayerSpec) -> Result<Self> {
        spec.validate()?;
        if spec.kind != LayerKind::LocationAttention {
            return Err(Error::invalid(format!("layer `{}` is not location attention", spec.name)));
        }
        let n = spec.name.clone();
        Ok(Self {
            wm: format!("{n}/Wm"),
            wq: format!("{n}/Wq"),
            b: format!("{n}/b"),
            filter: format!("{n}/F"),
            uf: format!("{n}/Uf"),
            v: format!("{n}/v"),
            spec,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn init(&self, store: &mut ParamStore) {
        let a = self.spec.output_dim;
        store.init_uniform(&self.wm, a, self.spec.input_dim, self.spec.input_dim);
        store.init_uniform(&self.wq, a, self.spec.aux_dim, self.spec.aux_dim);
        store.init_uniform(&self.b, 1, a, self.spec.aux_dim);
        store.init_uniform(&self.filter, 1, self.spec.kernel_size, self.spec.kernel_size);
        store.init_uniform(&self.uf, a, 1, 1);
        store.init_uniform(&self.v, 1, a, a);
    }

    pub fn prepare(&self, store: &ParamStore, memory: &Tensor2D) -> Result<AttentionMemory> {
        if memory.cols() != self.spec.input_dim {
            return Err(Error::dims(
                format!("attention `{}` memory", self.spec.name),
                self.spec.input_dim,
                memory.cols(),
            ));
        }
        if memory.rows() == 0 {
            return Err(Error::invalid("attention over empty memory"));
        }
        let projected = memory.matmul_t(store.value(&self.wm)?);
        Ok(AttentionMemory {
            memory: memory.clone(),
            projected,
        })
    }

    /// Alignment used before the first decode step: all mass on frame 0.
    pub fn initial_alignment(&self, mem: &AttentionMemory) -> Vec<f64> {
        let mut a = vec![0.0; mem.len()];
        a[0] = 1.0;
        a
    }

    fn location_features(&self, filter: &[f64], prev: &[f64]) -> Vec<f64> {
        let t_len = prev.len();
        let half = filter.len() / 2;
        let mut f = vec![0.0; t_len];
        for (t, ft) in f.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, w) in filter.iter().enumerate() {
                let s = t as isize + k as isize - half as isize;
                if s >= 0 && (s as usize) < t_len {
                    acc += w * prev[s as usize];
                }
            }
            *ft = acc;
        }
        f
    }

    pub fn step(
        &self,
        store: &ParamStore,
        mem: &AttentionMemory,
        query: &[f64],
        prev_align: &[f64],
    ) -> Result<AttentionStep> {
        if query.len() != self.spec.aux_dim {
            return Err(Error::dims("attention query", self.spec.aux_dim, query.len()));
        }
        if prev_align.len() != mem.len() {
            return Err(Error::dims("attention previous alignment", mem.len(), prev_align.len()));
        }
        let a = self.spec.output_dim;
        let t_len = mem.len();
        let wq = store.value(&self.wq)?;
        let b = store.value(&self.b)?.row(0);
        let filter = store.value(&self.filter)?.row(0);
        let uf = store.value(&self.uf)?;
        let v = store.value(&self.v)?.row(0);

        let mut qa = vec![0.0; a];
        gemv(wq, query, &mut qa);
        for (x, bb) in qa.iter_mut().zip(b) {
            *x += bb;
        }
        let loc = self.location_features(filter, prev_align);
        let mut act = Tensor2D::zeros(t_len, a);
        let mut energies = vec![0.0; t_len];
        for t in 0..t_len {
            let pm = mem.projected.row(t);
            let row = act.row_mut(t);
            for j in 0..a {
                row[j] = (pm[j] + qa[j] + uf.get(j, 0) * loc[t]).tanh();
            }
            energies[t] = dot(row, v);
        }
        let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut align: Vec<f64> = energies.iter().map(|e| (e - max).exp()).collect();
        let z: f64 = align.iter().sum();
        align.iter_mut().for_each(|x| *x /= z);

        let mut context = vec![0.0; mem.memory.cols()];
        for (t, &w) in align.iter().enumerate() {
            axpy(w, mem.memory.row(t), &mut context);
        }
        Ok(AttentionStep {
            context,
            align: align.clone(),
            cache: AttentionStepCache {
                query: query.to_vec(),
                prev_align: prev_align.to_vec(),
                loc,
                act,
                align,
            },
        })
    }

    pub fn grads(&self, mem: &AttentionMemory) -> AttentionGrads {
        let a = self.spec.output_dim;
        AttentionGrads {
            dwq: Tensor2D::zeros(a, self.spec.aux_dim),
            db: Tensor2D::zeros(1, a),
            dfilter: Tensor2D::zeros(1, self.spec.kernel_size),
            duf: Tensor2D::zeros(a, 1),
            dv: Tensor2D::zeros(1, a),
            dprojected: Tensor2D::zeros(mem.len(), a),
            dmemory: Tensor2D::zeros(mem.len(), mem.memory.cols()),
        }
    }

    /// Backward through one step. `d_align` is the gradient arriving on the
    /// step's alignment from later steps (through the location features).
    /// Returns `(d_query, d_prev_align)`.
    pub fn step_backward(
        &self,
        store: &ParamStore,
        mem: &AttentionMemory,
        cache: &AttentionStepCache,
        d_context: &[f64],
        d_align: &[f64],
        grads: &mut AttentionGrads,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let a = self.spec.output_dim;
        let t_len = mem.len();
        let wq = store.value(&self.wq)?;
        let filter = store.value(&self.filter)?.row(0);
        let uf = store.value(&self.uf)?;
        let v = store.value(&self.v)?.row(0);

        let mut dal = d_align.to_vec();
        for t in 0..t_len {
            dal[t] += dot(d_context, mem.memory.row(t));
            axpy(cache.align[t], d_context, grads.dmemory.row_mut(t));
        }
        let mean: f64 = cache.align.iter().zip(&dal).map(|(p, g)| p * g).sum();
        let de: Vec<f64> = cache
            .align
            .iter()
            .zip(&dal)
            .map(|(p, g)| p * (g - mean))
            .collect();

        let mut dqa = vec![0.0; a];
        let mut dloc = vec![0.0; t_len];
        for t in 0..t_len {
            let s = cache.act.row(t);
            axpy(de[t], s, grads.dv.row_mut(0));
            let dp = grads.dprojected.row_mut(t);
            let mut dl = 0.0;
            for j in 0..a {
                let g = de[t] * v[j] * (1.0 - s[j] * s[j]);
                dp[j] += g;
                dqa[j] += g;
                dl += uf.get(j, 0) * g;
                let cur = grads.duf.get(j, 0);
                grads.duf.set(j, 0, cur + g * cache.loc[t]);
            }
            dloc[t] = dl;
        }
        for (acc, g) in grads.db.row_mut(0).iter_mut().zip(&dqa) {
            *acc += g;
        }
        outer_acc(&mut grads.dwq, &dqa, &cache.query);
        let mut dq = vec![0.0; self.spec.aux_dim];
        gemv_t_acc(wq, &dqa, &mut dq);

        let half = filter.len() / 2;
        let mut dprev = vec![0.0; t_len];
        for (t, &dl) in dloc.iter().enumerate() {
            if dl == 0.0 {
                continue;
            }
            for (k, w) in filter.iter().enumerate() {
                let s = t as isize + k as isize - half as isize;
                if s >= 0 && (s as usize) < t_len {
                    let s = s as usize;
                    let cur = grads.dfilter.get(0, k);
                    grads.dfilter.set(0, k, cur + dl * cache.prev_align[s]);
                    dprev[s] += dl * w;
                }
            }
        }
        Ok((dq, dprev))
    }

    /// Flushes parameter gradients and returns dL/d(memory).
    pub fn finish_backward(
        &self,
        store: &mut ParamStore,
        mem: &AttentionMemory,
        grads: AttentionGrads,
    ) -> Result<Tensor2D> {
        let mut dmem = grads.dmemory;
        dmem.add_assign(&grads.dprojected.matmul(store.value(&self.wm)?));
        let mut dwm = Tensor2D::zeros(self.spec.output_dim, self.spec.input_dim);
        dwm.add_outer_products(&grads.dprojected, &mem.memory);
        store.accumulate(&self.wm, &dwm)?;
        store.accumulate(&self.wq, &grads.dwq)?;
        store.accumulate(&self.b, &grads.db)?;
        store.accumulate(&self.filter, &grads.dfilter)?;
        store.accumulate(&self.uf, &grads.duf)?;
        store.accumulate(&self.v, &grads.dv)?;
        Ok(dmem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_is_a_distribution() {
        let spec = LayerSpec::location_attention("att", 4, 3, 5, 3);
        let att = LocationAttention::new(spec).unwrap();
        let mut store = ParamStore::new(1);
        att.init(&mut store);
        let mem = Tensor2D::from_vec(6, 4, (0..24).map(|i| (i as f64 * 0.37).cos()).collect()).unwrap();
        let m = att.prepare(&store, &mem).unwrap();
        let prev = att.initial_alignment(&m);
        let step = att.step(&store, &m, &[0.1, -0.2, 0.3], &prev).unwrap();
        let s: f64 = step.align.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(step.align.iter().all(|&p| p >= 0.0));
        assert_eq!(step.context.len(), 4);
    }
}
