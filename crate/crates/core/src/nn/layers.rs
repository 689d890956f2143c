//! Sequence-in/sequence-out layer entry points.

use super::attention::LocationAttention;
use super::dense::{self, DenseCache};
use super::params::ParamStore;
use super::recurrent::{self, StackCache};
use super::spec::{LayerKind, LayerSpec};
use super::tensor::Tensor2D;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum LayerCache {
    Dense(DenseCache),
    Stack(StackCache),
}

/// Registers the parameters of `spec` with fresh seeded initial values.
pub fn init_layer(spec: &LayerSpec, params: &mut ParamStore) -> Result<()> {
    spec.validate()?;
    match spec.kind {
        LayerKind::FullyConnected => dense::init_fc(spec, params),
        LayerKind::Conv1d => dense::init_conv(spec, params),
        LayerKind::GruBidirectional | LayerKind::LstmBidirectional | LayerKind::Lstm => {
            recurrent::init_stack(spec, params)
        }
        LayerKind::LocationAttention => LocationAttention::new(spec.clone())?.init(params),
    }
    Ok(())
}

fn attention_unsupported(spec: &LayerSpec) -> Error {
    Error::invalid(format!(
        "layer `{}` is location attention; drive it through LocationAttention::step",
        spec.name
    ))
}

pub fn forward_cached(
    spec: &LayerSpec,
    params: &ParamStore,
    input: &Tensor2D,
) -> Result<(Tensor2D, LayerCache)> {
    match spec.kind {
        LayerKind::FullyConnected => {
            dense::fc_forward(spec, params, input).map(|(y, c)| (y, LayerCache::Dense(c)))
        }
        LayerKind::Conv1d => {
            dense::conv_forward(spec, params, input).map(|(y, c)| (y, LayerCache::Dense(c)))
        }
        LayerKind::GruBidirectional | LayerKind::LstmBidirectional | LayerKind::Lstm => {
            recurrent::stack_forward(spec, params, input).map(|(y, c)| (y, LayerCache::Stack(c)))
        }
        LayerKind::LocationAttention => Err(attention_unsupported(spec)),
    }
}

pub fn backward_cached(
    spec: &LayerSpec,
    params: &mut ParamStore,
    cache: &LayerCache,
    output_grad: &Tensor2D,
) -> Result<Tensor2D> {
    match (spec.kind, cache) {
        (LayerKind::FullyConnected, LayerCache::Dense(c)) => {
            dense::fc_backward(spec, params, c, output_grad)
        }
        (LayerKind::Conv1d, LayerCache::Dense(c)) => {
            dense::conv_backward(spec, params, c, output_grad)
        }
        (
            LayerKind::GruBidirectional | LayerKind::LstmBidirectional | LayerKind::Lstm,
            LayerCache::Stack(c),
        ) => {
            let expect = (c.rows(), spec.output_dim);
            if output_grad.shape() != expect {
                return Err(Error::dims(
                    format!("layer `{}` output gradient", spec.name),
                    format!("{expect:?}"),
                    format!("{:?}", output_grad.shape()),
                ));
            }
            recurrent::stack_backward(spec, params, c, output_grad)
        }
        (LayerKind::LocationAttention, _) => Err(attention_unsupported(spec)),
        _ => Err(Error::invalid(format!(
            "layer `{}`: cache does not belong to this layer kind",
            spec.name
        ))),
    }
}

/// Applies the layer. Output has one row per input row.
pub fn forward(spec: &LayerSpec, params: &ParamStore, input: &Tensor2D) -> Result<Tensor2D> {
    forward_cached(spec, params, input).map(|(y, _)| y)
}

/// Returns dL/d(input) and accumulates parameter gradients into `params`.
/// Activations are recomputed from `input`.
pub fn backward(
    spec: &LayerSpec,
    params: &mut ParamStore,
    input: &Tensor2D,
    output_grad: &Tensor2D,
) -> Result<Tensor2D> {
    let (out, cache) = forward_cached(spec, params, input)?;
    if out.shape() != output_grad.shape() {
        return Err(Error::dims(
            format!("layer `{}` output gradient", spec.name),
            format!("{:?}", out.shape()),
            format!("{:?}", output_grad.shape()),
        ));
    }
    backward_cached(spec, params, &cache, output_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::Activation;

    #[test]
    fn zero_fc_gives_zero_output() {
        let spec = LayerSpec::fully_connected("fc", 3, 2, Activation::Identity);
        let mut p = ParamStore::new(0);
        p.insert("fc/W", Tensor2D::zeros(2, 3));
        p.insert("fc/b", Tensor2D::zeros(1, 2));
        let x = Tensor2D::from_vec(4, 3, (0..12).map(|v| v as f64).collect()).unwrap();
        let y = forward(&spec, &p, &x).unwrap();
        assert_eq!(y, Tensor2D::zeros(4, 2));
    }

    #[test]
    fn identity_fc_passes_input_through() {
        let spec = LayerSpec::fully_connected("fc", 3, 3, Activation::Identity);
        let mut p = ParamStore::new(0);
        p.insert("fc/W", Tensor2D::identity(3));
        p.insert("fc/b", Tensor2D::zeros(1, 3));
        let x = Tensor2D::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.25, -0.125]).unwrap();
        assert_eq!(forward(&spec, &p, &x).unwrap(), x);
    }

    #[test]
    fn delta_kernel_conv_is_identity() {
        let c = 2;
        let spec = LayerSpec::conv1d("cv", c, c, 3, Activation::Identity);
        let mut w = Tensor2D::zeros(c, 3 * c);
        for o in 0..c {
            w.set(o, c + o, 1.0);
        }
        let mut p = ParamStore::new(0);
        p.insert("cv/W", w);
        p.insert("cv/b", Tensor2D::zeros(1, c));
        let x = Tensor2D::from_vec(5, c, (0..10).map(|v| (v as f64).sin()).collect()).unwrap();
        assert_eq!(forward(&spec, &p, &x).unwrap(), x);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = LayerSpec::fully_connected("fc", 3, 2, Activation::Identity);
        let mut p = ParamStore::new(0);
        init_layer(&spec, &mut p).unwrap();
        let x = Tensor2D::zeros(2, 4);
        assert!(matches!(forward(&spec, &p, &x), Err(Error::DimensionMismatch { .. })));
        let bad_grad = Tensor2D::zeros(2, 3);
        let x = Tensor2D::zeros(2, 3);
        assert!(backward(&spec, &mut p, &x, &bad_grad).is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        for spec in [
            LayerSpec::fully_connected("a", 3, 4, Activation::Tanh),
            LayerSpec::conv1d("b", 3, 4, 5, Activation::Relu),
            LayerSpec::bgru("c", 3, 2, 2),
            LayerSpec::blstm("d", 3, 2, 1),
            LayerSpec::lstm("e", 3, 4, 2),
        ] {
            let mut p = ParamStore::new(5);
            init_layer(&spec, &mut p).unwrap();
            let x = Tensor2D::from_vec(6, 3, (0..18).map(|v| (v as f64 * 0.7).cos()).collect())
                .unwrap();
            let dx = backward(&spec, &mut p, &x, &Tensor2D::zeros(6, spec.output_dim)).unwrap();
            assert!(dx.as_slice().iter().all(|&v| v == 0.0), "{}", spec.name);
            assert_eq!(p.grad_norm(), 0.0, "{}", spec.name);
        }
    }

    #[test]
    fn recurrent_output_shapes() {
        let spec = LayerSpec::blstm("l", 3, 5, 2);
        let mut p = ParamStore::new(2);
        init_layer(&spec, &mut p).unwrap();
        let y = forward(&spec, &p, &Tensor2D::zeros(7, 3)).unwrap();
        assert_eq!(y.shape(), (7, 10));
    }
}
