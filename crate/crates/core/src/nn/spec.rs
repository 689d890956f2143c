use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    FullyConnected,
    Conv1d,
    GruBidirectional,
    LstmBidirectional,
    /// Unidirectional LSTM stack (speaker encoder).
    Lstm,
    LocationAttention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output value.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Architecture of one layer. `name` is the parameter-name prefix inside a
/// [`ParamStore`](super::ParamStore).
///
/// For bidirectional recurrent kinds `output_dim` is twice the per-direction
/// unit count. For location attention `input_dim` is the memory width,
/// `aux_dim` the query width, `output_dim` the attention width and
/// `kernel_size` the location-filter length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default)]
    pub kernel_size: usize,
    #[serde(default = "one")]
    pub layers: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub aux_dim: usize,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn fully_connected(name: &str, input_dim: usize, output_dim: usize, act: Activation) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::FullyConnected,
            input_dim,
            output_dim,
            kernel_size: 0,
            layers: 1,
            activation: act,
            aux_dim: 0,
        }
    }

    pub fn conv1d(
        name: &str,
        input_dim: usize,
        output_dim: usize,
        kernel_size: usize,
        act: Activation,
    ) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Conv1d,
            input_dim,
            output_dim,
            kernel_size,
            layers: 1,
            activation: act,
            aux_dim: 0,
        }
    }

    pub fn bgru(name: &str, input_dim: usize, units: usize, layers: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::GruBidirectional,
            input_dim,
            output_dim: 2 * units,
            kernel_size: 0,
            layers,
            activation: Activation::Identity,
            aux_dim: 0,
        }
    }

    pub fn blstm(name: &str, input_dim: usize, units: usize, layers: usize) -> Self {
        Self {
            kind: LayerKind::LstmBidirectional,
            ..Self::bgru(name, input_dim, units, layers)
        }
    }

    pub fn lstm(name: &str, input_dim: usize, units: usize, layers: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Lstm,
            input_dim,
            output_dim: units,
            kernel_size: 0,
            layers,
            activation: Activation::Identity,
            aux_dim: 0,
        }
    }

    pub fn location_attention(
        name: &str,
        memory_dim: usize,
        query_dim: usize,
        attention_dim: usize,
        kernel_size: usize,
    ) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::LocationAttention,
            input_dim: memory_dim,
            output_dim: attention_dim,
            kernel_size,
            layers: 1,
            activation: Activation::Identity,
            aux_dim: query_dim,
        }
    }

    /// Units per direction for recurrent kinds.
    pub fn units(&self) -> usize {
        match self.kind {
            LayerKind::GruBidirectional | LayerKind::LstmBidirectional => self.output_dim / 2,
            _ => self.output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::invalid(format!(
                "layer `{}`: dimensions must be positive ({} -> {})",
                self.name, self.input_dim, self.output_dim
            )));
        }
        match self.kind {
            LayerKind::Conv1d | LayerKind::LocationAttention => {
                if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
                    return Err(Error::invalid(format!(
                        "layer `{}`: kernel size {} must be odd",
                        self.name, self.kernel_size
                    )));
                }
                if self.kind == LayerKind::LocationAttention && self.aux_dim == 0 {
                    return Err(Error::invalid(format!(
                        "layer `{}`: attention query dimension must be positive",
                        self.name
                    )));
                }
            }
            LayerKind::GruBidirectional | LayerKind::LstmBidirectional => {
                if self.output_dim % 2 != 0 {
                    return Err(Error::invalid(format!(
                        "layer `{}`: bidirectional output {} is not even",
                        self.name, self.output_dim
                    )));
                }
                if self.layers == 0 {
                    return Err(Error::invalid(format!("layer `{}`: zero layers", self.name)));
                }
            }
            LayerKind::Lstm => {
                if self.layers == 0 {
                    return Err(Error::invalid(format!("layer `{}`: zero layers", self.name)));
                }
            }
            LayerKind::FullyConnected => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_kernel_rejected() {
        assert!(LayerSpec::conv1d("c", 3, 3, 4, Activation::Relu).validate().is_err());
        assert!(LayerSpec::conv1d("c", 3, 3, 5, Activation::Relu).validate().is_ok());
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(LayerSpec::fully_connected("f", 0, 3, Activation::Identity)
            .validate()
            .is_err());
    }

    #[test]
    fn bidirectional_output_doubles_units() {
        let s = LayerSpec::bgru("g", 3, 8, 2);
        assert_eq!(s.output_dim, 16);
        assert_eq!(s.units(), 8);
    }
}
