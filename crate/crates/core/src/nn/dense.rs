//! Fully-connected and "same"-padded 1-D convolution layers.

use super::params::ParamStore;
use super::spec::{Activation, LayerSpec};
use super::tensor::Tensor2D;
use crate::error::{Error, Result};

pub(crate) fn weight_name(spec: &LayerSpec) -> String {
    format!("{}/W", spec.name)
}

pub(crate) fn bias_name(spec: &LayerSpec) -> String {
    format!("{}/b", spec.name)
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    /// Layer input (for conv: the im2col expansion).
    input: Tensor2D,
    output: Tensor2D,
    activation: Activation,
}

pub(crate) fn init_fc(spec: &LayerSpec, store: &mut ParamStore) {
    store.init_uniform(&weight_name(spec), spec.output_dim, spec.input_dim, spec.input_dim);
    store.init_uniform(&bias_name(spec), 1, spec.output_dim, spec.input_dim);
}

pub(crate) fn init_conv(spec: &LayerSpec, store: &mut ParamStore) {
    let fan_in = spec.input_dim * spec.kernel_size;
    store.init_uniform(&weight_name(spec), spec.output_dim, fan_in, fan_in);
    store.init_uniform(&bias_name(spec), 1, spec.output_dim, fan_in);
}

fn affine(input: &Tensor2D, w: &Tensor2D, b: &Tensor2D, act: Activation) -> Tensor2D {
    let mut out = input.matmul_t(w);
    let bias = b.row(0);
    for r in 0..out.rows() {
        for (v, bv) in out.row_mut(r).iter_mut().zip(bias) {
            *v = act.apply(*v + bv);
        }
    }
    out
}

pub(crate) fn fc_forward(
    spec: &LayerSpec,
    store: &ParamStore,
    input: &Tensor2D,
) -> Result<(Tensor2D, DenseCache)> {
    if input.cols() != spec.input_dim {
        return Err(Error::dims(format!("layer `{}` input", spec.name), spec.input_dim, input.cols()));
    }
    let w = store.value(&weight_name(spec))?;
    let b = store.value(&bias_name(spec))?;
    let out = affine(input, w, b, spec.activation);
    Ok((
        out.clone(),
        DenseCache {
            input: input.clone(),
            output: out,
            activation: spec.activation,
        },
    ))
}

/// Backward through the affine map. Returns the gradient w.r.t. the cached
/// (possibly im2col-expanded) input.
fn affine_backward(
    spec: &LayerSpec,
    store: &mut ParamStore,
    cache: &DenseCache,
    output_grad: &Tensor2D,
) -> Result<Tensor2D> {
    if output_grad.shape() != cache.output.shape() {
        return Err(Error::dims(
            format!("layer `{}` output gradient", spec.name),
            format!("{:?}", cache.output.shape()),
            format!("{:?}", output_grad.shape()),
        ));
    }
    let mut dpre = output_grad.clone();
    if cache.activation != Activation::Identity {
        for (g, &y) in dpre.as_mut_slice().iter_mut().zip(cache.output.as_slice()) {
            *g *= cache.activation.derivative_from_output(y);
        }
    }
    let wname = weight_name(spec);
    let bname = bias_name(spec);
    let w = store.value(&wname)?;
    let dinput = dpre.matmul(w);

    let mut dw = Tensor2D::zeros(w.rows(), w.cols());
    dw.add_outer_products(&dpre, &cache.input);
    let mut db = Tensor2D::zeros(1, w.rows());
    for r in 0..dpre.rows() {
        for (acc, g) in db.row_mut(0).iter_mut().zip(dpre.row(r)) {
            *acc += g;
        }
    }
    store.accumulate(&wname, &dw)?;
    store.accumulate(&bname, &db)?;
    Ok(dinput)
}

pub(crate) fn fc_backward(
    spec: &LayerSpec,
    store: &mut ParamStore,
    cache: &DenseCache,
    output_grad: &Tensor2D,
) -> Result<Tensor2D> {
    affine_backward(spec, store, cache, output_grad)
}

/// im2col for "same" padding: row t holds frames t-k/2 ..= t+k/2 (zeros
/// outside the sequence), frame-major.
fn im2col(input: &Tensor2D, kernel: usize) -> Tensor2D {
    let (t_len, c) = input.shape();
    let half = kernel / 2;
    let mut col = Tensor2D::zeros(t_len, kernel * c);
    for t in 0..t_len {
        let dst = col.row_mut(t);
        for k in 0..kernel {
            let src = t as isize + k as isize - half as isize;
            if src >= 0 && (src as usize) < t_len {
                dst[k * c..(k + 1) * c].copy_from_slice(input.row(src as usize));
            }
        }
    }
    col
}

fn col2im(dcol: &Tensor2D, kernel: usize, channels: usize) -> Tensor2D {
    let t_len = dcol.rows();
    let half = kernel / 2;
    let mut out = Tensor2D::zeros(t_len, channels);
    for t in 0..t_len {
        let src = dcol.row(t);
        for k in 0..kernel {
            let dst = t as isize + k as isize - half as isize;
            if dst >= 0 && (dst as usize) < t_len {
                let row = out.row_mut(dst as usize);
                for (o, g) in row.iter_mut().zip(&src[k * channels..(k + 1) * channels]) {
                    *o += g;
                }
            }
        }
    }
    out
}

pub(crate) fn conv_forward(
    spec: &LayerSpec,
    store: &ParamStore,
    input: &Tensor2D,
) -> Result<(Tensor2D, DenseCache)> {
    if input.cols() != spec.input_dim {
        return Err(Error::dims(format!("layer `{}` input", spec.name), spec.input_dim, input.cols()));
    }
    let col = im2col(input, spec.kernel_size);
    let w = store.value(&weight_name(spec))?;
    let b = store.value(&bias_name(spec))?;
    let out = affine(&col, w, b, spec.activation);
    Ok((
        out.clone(),
        DenseCache {
            input: col,
            output: out,
            activation: spec.activation,
        },
    ))
}

pub(crate) fn conv_backward(
    spec: &LayerSpec,
    store: &mut ParamStore,
    cache: &DenseCache,
    output_grad: &Tensor2D,
) -> Result<Tensor2D> {
    let dcol = affine_backward(spec, store, cache, output_grad)?;
    Ok(col2im(&dcol, spec.kernel_size, spec.input_dim))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let x = Tensor2D::from_vec(4, 2, (0..8).map(|v| v as f64 * 0.3 - 1.0).collect()).unwrap();
        let y = Tensor2D::from_vec(4, 6, (0..24).map(|v| (v as f64).sin()).collect()).unwrap();
        let lhs: f64 = im2col(&x, 3)
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .as_slice()
            .iter()
            .zip(col2im(&y, 3, 2).as_slice())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
