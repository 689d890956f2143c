//! GRU and LSTM cells, direction runners and (bi)directional stacks.
//!
//! Gate layouts follow the usual conventions: LSTM rows are `[i, f, g, o]`,
//! GRU rows are `[r, z, n]` with the reset gate applied to the recurrent
//! candidate term (`n = tanh(W_n x + b_n + r * (U_n h + c_n))`).

use super::params::ParamStore;
use super::spec::{LayerKind, LayerSpec};
use super::tensor::{gemv, gemv_t_acc, outer_acc, Tensor2D};
use crate::error::{Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

/// Parameter names of one recurrent cell.
#[derive(Debug, Clone)]
pub struct CellParams {
    pub kind: CellKind,
    pub input_dim: usize,
    pub units: usize,
    pub w: String,
    pub u: String,
    pub b: String,
    /// Recurrent bias; GRU only.
    pub c: String,
}

impl CellParams {
    pub fn new(prefix: &str, kind: CellKind, input_dim: usize, units: usize) -> Self {
        Self {
            kind,
            input_dim,
            units,
            w: format!("{prefix}/W"),
            u: format!("{prefix}/U"),
            b: format!("{prefix}/b"),
            c: format!("{prefix}/c"),
        }
    }

    pub fn init(&self, store: &mut ParamStore) {
        let g = self.kind.gates() * self.units;
        let fan = self.input_dim + self.units;
        store.init_uniform(&self.w, g, self.input_dim, fan);
        store.init_uniform(&self.u, g, self.units, fan);
        store.init_uniform(&self.b, 1, g, fan);
        if self.kind == CellKind::Gru {
            store.init_uniform(&self.c, 1, g, fan);
        }
    }
}

/// Borrowed view of a cell's weights for a forward pass.
pub struct CellWeights<'a> {
    kind: CellKind,
    units: usize,
    w: &'a Tensor2D,
    u: &'a Tensor2D,
    b: &'a Tensor2D,
    c: Option<&'a Tensor2D>,
}

impl<'a> CellWeights<'a> {
    pub fn load(p: &CellParams, store: &'a ParamStore) -> Result<Self> {
        Ok(Self {
            kind: p.kind,
            units: p.units,
            w: store.value(&p.w)?,
            u: store.value(&p.u)?,
            b: store.value(&p.b)?,
            c: if p.kind == CellKind::Gru {
                Some(store.value(&p.c)?)
            } else {
                None
            },
        })
    }
}

/// Gradient accumulators for one cell, flushed into the store once per pass.
#[derive(Debug, Clone)]
pub struct CellGrads {
    dw: Tensor2D,
    du: Tensor2D,
    db: Tensor2D,
    dc: Tensor2D,
}

impl CellGrads {
    pub fn new(p: &CellParams) -> Self {
        let g = p.kind.gates() * p.units;
        Self {
            dw: Tensor2D::zeros(g, p.input_dim),
            du: Tensor2D::zeros(g, p.units),
            db: Tensor2D::zeros(1, g),
            dc: Tensor2D::zeros(1, if p.kind == CellKind::Gru { g } else { 0 }),
        }
    }

    pub fn flush(self, p: &CellParams, store: &mut ParamStore) -> Result<()> {
        store.accumulate(&p.w, &self.dw)?;
        store.accumulate(&p.u, &self.du)?;
        store.accumulate(&p.b, &self.db)?;
        if p.kind == CellKind::Gru {
            store.accumulate(&p.c, &self.dc)?;
        }
        Ok(())
    }
}

/// Saved activations of one cell step.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gates (GRU: r, z, n; LSTM: i, f, g, o).
    gates: Vec<f64>,
    /// GRU: `U_n h + c_n`; LSTM: `tanh(c)`.
    aux: Vec<f64>,
}

/// Recurrent state: `h` and (LSTM only) the cell state `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(units: usize) -> Self {
        Self {
            h: vec![0.0; units],
            c: vec![0.0; units],
        }
    }
}

impl CellWeights<'_> {
    /// One step given the precomputed input projection `wx = W x + b`.
    fn step_projected(&self, x: &[f64], wx: &[f64], prev: &CellState) -> (CellState, StepCache) {
        let h = self.units;
        let mut uh = vec![0.0; self.kind.gates() * h];
        gemv(self.u, &prev.h, &mut uh);
        match self.kind {
            CellKind::Lstm => {
                let mut gates = vec![0.0; 4 * h];
                for j in 0..h {
                    gates[j] = sigmoid(wx[j] + uh[j]);
                    gates[h + j] = sigmoid(wx[h + j] + uh[h + j]);
                    gates[2 * h + j] = (wx[2 * h + j] + uh[2 * h + j]).tanh();
                    gates[3 * h + j] = sigmoid(wx[3 * h + j] + uh[3 * h + j]);
                }
                let mut c = vec![0.0; h];
                let mut tc = vec![0.0; h];
                let mut hn = vec![0.0; h];
                for j in 0..h {
                    c[j] = gates[h + j] * prev.c[j] + gates[j] * gates[2 * h + j];
                    tc[j] = c[j].tanh();
                    hn[j] = gates[3 * h + j] * tc[j];
                }
                let cache = StepCache {
                    x: x.to_vec(),
                    h_prev: prev.h.clone(),
                    c_prev: prev.c.clone(),
                    gates,
                    aux: tc,
                };
                (CellState { h: hn, c }, cache)
            }
            CellKind::Gru => {
                let cb = self.c.expect("gru recurrent bias").row(0);
                for (v, b) in uh.iter_mut().zip(cb) {
                    *v += b;
                }
                let mut gates = vec![0.0; 3 * h];
                let mut hn = vec![0.0; h];
                for j in 0..h {
                    let r = sigmoid(wx[j] + uh[j]);
                    let z = sigmoid(wx[h + j] + uh[h + j]);
                    let n = (wx[2 * h + j] + r * uh[2 * h + j]).tanh();
                    gates[j] = r;
                    gates[h + j] = z;
                    gates[2 * h + j] = n;
                    hn[j] = (1.0 - z) * n + z * prev.h[j];
                }
                let aux = uh[2 * h..].to_vec();
                let cache = StepCache {
                    x: x.to_vec(),
                    h_prev: prev.h.clone(),
                    c_prev: Vec::new(),
                    gates,
                    aux,
                };
                (
                    CellState {
                        h: hn,
                        c: vec![0.0; h],
                    },
                    cache,
                )
            }
        }
    }

    /// Single step on a raw input vector.
    pub fn step(&self, x: &[f64], prev: &CellState) -> (CellState, StepCache) {
        let mut wx = vec![0.0; self.kind.gates() * self.units];
        gemv(self.w, x, &mut wx);
        for (v, b) in wx.iter_mut().zip(self.b.row(0)) {
            *v += b;
        }
        self.step_projected(x, &wx, prev)
    }
}

/// Backward through one step. Returns gradients w.r.t. the pre-activation
/// input projection (the `W x + b` term) and the previous state; recurrent
/// parameter gradients are accumulated into `grads`.
fn step_backward_projected(
    u: &Tensor2D,
    kind: CellKind,
    units: usize,
    cache: &StepCache,
    dh: &[f64],
    dc_in: &[f64],
    grads: &mut CellGrads,
) -> (Vec<f64>, CellState) {
    let h = units;
    match kind {
        CellKind::Lstm => {
            let g = &cache.gates;
            let tc = &cache.aux;
            let mut dz = vec![0.0; 4 * h];
            let mut dc_prev = vec![0.0; h];
            for j in 0..h {
                let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let d_o = dh[j] * tc[j];
                let dc = dc_in[j] + dh[j] * o * (1.0 - tc[j] * tc[j]);
                let df = dc * cache.c_prev[j];
                let di = dc * gg;
                let dg = dc * i;
                dc_prev[j] = dc * f;
                dz[j] = di * i * (1.0 - i);
                dz[h + j] = df * f * (1.0 - f);
                dz[2 * h + j] = dg * (1.0 - gg * gg);
                dz[3 * h + j] = d_o * o * (1.0 - o);
            }
            outer_acc(&mut grads.du, &dz, &cache.h_prev);
            let mut dh_prev = vec![0.0; h];
            gemv_t_acc(u, &dz, &mut dh_prev);
            (
                dz,
                CellState {
                    h: dh_prev,
                    c: dc_prev,
                },
            )
        }
        CellKind::Gru => {
            let g = &cache.gates;
            let un = &cache.aux;
            let mut da = vec![0.0; 3 * h];
            let mut du = vec![0.0; 3 * h];
            let mut dh_prev = vec![0.0; h];
            for j in 0..h {
                let (r, z, n) = (g[j], g[h + j], g[2 * h + j]);
                let dn = dh[j] * (1.0 - z);
                let dzg = dh[j] * (cache.h_prev[j] - n);
                dh_prev[j] = dh[j] * z;
                let dn_pre = dn * (1.0 - n * n);
                let dr = dn_pre * un[j];
                let dr_pre = dr * r * (1.0 - r);
                let dz_pre = dzg * z * (1.0 - z);
                da[j] = dr_pre;
                da[h + j] = dz_pre;
                da[2 * h + j] = dn_pre;
                du[j] = dr_pre;
                du[h + j] = dz_pre;
                du[2 * h + j] = dn_pre * r;
            }
            outer_acc(&mut grads.du, &du, &cache.h_prev);
            for (acc, v) in grads.dc.row_mut(0).iter_mut().zip(&du) {
                *acc += v;
            }
            gemv_t_acc(u, &du, &mut dh_prev);
            (
                da,
                CellState {
                    h: dh_prev,
                    c: vec![0.0; h],
                },
            )
        }
    }
}

impl CellWeights<'_> {
    /// Backward through [`CellWeights::step`]: returns `(dx, d_prev_state)`.
    pub fn step_backward(
        &self,
        cache: &StepCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut CellGrads,
    ) -> (Vec<f64>, CellState) {
        let (dz, dprev) = step_backward_projected(self.u, self.kind, self.units, cache, dh, dc, grads);
        outer_acc(&mut grads.dw, &dz, &cache.x);
        for (acc, v) in grads.db.row_mut(0).iter_mut().zip(&dz) {
            *acc += v;
        }
        let mut dx = vec![0.0; cache.x.len()];
        gemv_t_acc(self.w, &dz, &mut dx);
        (dx, dprev)
    }
}

/// Activations of one direction over a sequence.
#[derive(Debug, Clone)]
pub struct DirectionCache {
    input: Tensor2D,
    steps: Vec<StepCache>,
    reverse: bool,
}

/// Runs a cell over all rows of `input` (backwards in time if `reverse`).
/// Returns one hidden vector per input row, in input order.
pub fn run_direction(
    p: &CellParams,
    store: &ParamStore,
    input: &Tensor2D,
    reverse: bool,
) -> Result<(Tensor2D, DirectionCache)> {
    let cw = CellWeights::load(p, store)?;
    let t_len = input.rows();
    let mut wx = input.matmul_t(cw.w);
    for r in 0..t_len {
        for (v, b) in wx.row_mut(r).iter_mut().zip(cw.b.row(0)) {
            *v += b;
        }
    }
    let mut out = Tensor2D::zeros(t_len, p.units);
    let mut state = CellState::zeros(p.units);
    let mut steps = Vec::with_capacity(t_len);
    for k in 0..t_len {
        let t = if reverse { t_len - 1 - k } else { k };
        let (next, cache) = cw.step_projected(input.row(t), wx.row(t), &state);
        out.row_mut(t).copy_from_slice(&next.h);
        steps.push(cache);
        state = next;
    }
    Ok((
        out,
        DirectionCache {
            input: input.clone(),
            steps,
            reverse,
        },
    ))
}

/// Backward through [`run_direction`]. `out_grad` holds dL/dh_t per row;
/// `final_grad` optionally adds a gradient on the last processed state.
pub fn run_direction_backward(
    p: &CellParams,
    store: &mut ParamStore,
    cache: &DirectionCache,
    out_grad: &Tensor2D,
) -> Result<Tensor2D> {
    let t_len = cache.input.rows();
    let mut grads = CellGrads::new(p);
    let mut dz_all = Tensor2D::zeros(t_len, p.kind.gates() * p.units);
    {
        let u = store.value(&p.u)?;
        let mut carry = CellState::zeros(p.units);
        for k in (0..t_len).rev() {
            let t = if cache.reverse { t_len - 1 - k } else { k };
            let mut dh = out_grad.row(t).to_vec();
            for (a, b) in dh.iter_mut().zip(&carry.h) {
                *a += b;
            }
            let (dz, dprev) =
                step_backward_projected(u, p.kind, p.units, &cache.steps[k], &dh, &carry.c, &mut grads);
            dz_all.row_mut(t).copy_from_slice(&dz);
            carry = dprev;
        }
    }
    grads.dw.add_outer_products(&dz_all, &cache.input);
    for r in 0..t_len {
        for (acc, v) in grads.db.row_mut(0).iter_mut().zip(dz_all.row(r)) {
            *acc += v;
        }
    }
    let dinput = dz_all.matmul(store.value(&p.w)?);
    grads.flush(p, store)?;
    Ok(dinput)
}

/// Layer-level cache for a recurrent stack.
#[derive(Debug, Clone)]
pub struct StackCache {
    layers: Vec<Vec<DirectionCache>>,
}

impl StackCache {
    /// Sequence length the cache was built for.
    pub fn rows(&self) -> usize {
        self.layers
            .first()
            .and_then(|l| l.first())
            .map_or(0, |d| d.input.rows())
    }
}

fn stack_cells(spec: &LayerSpec) -> Vec<Vec<CellParams>> {
    let units = spec.units();
    let (kind, dirs) = match spec.kind {
        LayerKind::GruBidirectional => (CellKind::Gru, 2),
        LayerKind::LstmBidirectional => (CellKind::Lstm, 2),
        LayerKind::Lstm => (CellKind::Lstm, 1),
        _ => unreachable!("not a recurrent kind"),
    };
    (0..spec.layers)
        .map(|l| {
            let in_dim = if l == 0 {
                spec.input_dim
            } else {
                units * dirs
            };
            if dirs == 2 {
                vec![
                    CellParams::new(&format!("{}/l{l}/fw", spec.name), kind, in_dim, units),
                    CellParams::new(&format!("{}/l{l}/bw", spec.name), kind, in_dim, units),
                ]
            } else {
                vec![CellParams::new(&format!("{}/l{l}", spec.name), kind, in_dim, units)]
            }
        })
        .collect()
}

pub(crate) fn init_stack(spec: &LayerSpec, store: &mut ParamStore) {
    for layer in stack_cells(spec) {
        for cell in layer {
            cell.init(store);
        }
    }
}

pub(crate) fn stack_forward(
    spec: &LayerSpec,
    store: &ParamStore,
    input: &Tensor2D,
) -> Result<(Tensor2D, StackCache)> {
    if input.cols() != spec.input_dim {
        return Err(Error::dims(format!("layer `{}` input", spec.name), spec.input_dim, input.cols()));
    }
    let mut x = input.clone();
    let mut caches = Vec::with_capacity(spec.layers);
    for layer in stack_cells(spec) {
        if layer.len() == 2 {
            let (fw, cf) = run_direction(&layer[0], store, &x, false)?;
            let (bw, cb) = run_direction(&layer[1], store, &x, true)?;
            x = Tensor2D::hconcat(&[&fw, &bw])?;
            caches.push(vec![cf, cb]);
        } else {
            let (h, c) = run_direction(&layer[0], store, &x, false)?;
            x = h;
            caches.push(vec![c]);
        }
    }
    Ok((x, StackCache { layers: caches }))
}

pub(crate) fn stack_backward(
    spec: &LayerSpec,
    store: &mut ParamStore,
    cache: &StackCache,
    output_grad: &Tensor2D,
) -> Result<Tensor2D> {
    let cells = stack_cells(spec);
    let units = spec.units();
    let mut g = output_grad.clone();
    for (layer, lc) in cells.iter().zip(&cache.layers).rev() {
        if layer.len() == 2 {
            let gf = g.slice_cols(0, units);
            let gb = g.slice_cols(units, 2 * units);
            let mut dx = run_direction_backward(&layer[0], store, &lc[0], &gf)?;
            dx.add_assign(&run_direction_backward(&layer[1], store, &lc[1], &gb)?);
            g = dx;
        } else {
            g = run_direction_backward(&layer[0], store, &lc[0], &g)?;
        }
    }
    Ok(g)
}
