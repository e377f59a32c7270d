//! Layer-graph network kernel: feed-forward chains of conv / pool / fc
//! layers with exact parameter accounting, training via backprop + Adam,
//! weight-transplant surgery and a binary checkpoint container.

mod adam;
mod checkpoint;
mod graph;
mod network;
mod profile;
mod surgery;
mod two_stream;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{
    load_network, load_network_bytes, save_network, save_network_bytes, CheckpointMeta,
    FORMAT_VERSION,
};
pub use graph::{cross_entropy, ForwardPass, Gradients, LayerGraph, Params};
pub use network::{
    NetInput, Network, NetworkAdamState, NetworkGradients, NetworkPass,
};
pub(crate) use network::section_seed;
pub use profile::{
    param_count, ArchDescriptor, FusionMode, FusionPoint, NetPlan, Profile, ProfileName,
};
pub use surgery::{seed_prefix, transplant, warm_start, TransplantOp};

use crate::error::{Error, Result};

/// One layer of a feed-forward chain. Only `Conv3x3` and `Fc` carry
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3x3 convolution, stride 1, zero padding 1 (spatial size preserved).
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
        trainable: bool,
    },
    /// 2x2 max pooling, stride 2.
    MaxPool2x2,
    Relu,
    /// Collapses a `[c, h, w]` map into a flat feature vector.
    Flatten,
    /// Fully connected layer.
    Fc {
        in_dim: usize,
        out_dim: usize,
        trainable: bool,
    },
    Softmax,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv3x3 {
            in_channels,
            out_channels,
            trainable: true,
        }
    }

    pub fn fc(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Fc {
            in_dim,
            out_dim,
            trainable: true,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv3x3 { .. } | LayerSpec::Fc { .. })
    }

    pub fn is_trainable(&self) -> bool {
        match self {
            LayerSpec::Conv3x3 { trainable, .. } | LayerSpec::Fc { trainable, .. } => *trainable,
            _ => false,
        }
    }

    pub fn set_trainable(&mut self, value: bool) {
        match self {
            LayerSpec::Conv3x3 { trainable, .. } | LayerSpec::Fc { trainable, .. } => {
                *trainable = value
            }
            _ => {}
        }
    }

    /// Exact number of parameters (weights + biases) held by this layer.
    pub fn param_count(&self) -> u64 {
        match *self {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
                ..
            } => (out_channels * in_channels * 9 + out_channels) as u64,
            LayerSpec::Fc { in_dim, out_dim, .. } => (out_dim * in_dim + out_dim) as u64,
            _ => 0,
        }
    }

    /// True when both specs have the same kind and dimensions, regardless of
    /// trainable flags.
    pub fn same_shape(&self, other: &LayerSpec) -> bool {
        use LayerSpec::*;
        match (*self, *other) {
            (
                Conv3x3 {
                    in_channels: a,
                    out_channels: b,
                    ..
                },
                Conv3x3 {
                    in_channels: c,
                    out_channels: d,
                    ..
                },
            ) => a == c && b == d,
            (Fc { in_dim: a, out_dim: b, .. }, Fc { in_dim: c, out_dim: d, .. }) => {
                a == c && b == d
            }
            (MaxPool2x2, MaxPool2x2) | (Relu, Relu) | (Flatten, Flatten) | (Softmax, Softmax) => {
                true
            }
            _ => false,
        }
    }

    /// Output shape of this layer for the given input shape.
    pub fn out_shape(&self, input: &LayerShape) -> Result<LayerShape> {
        use LayerShape::*;
        match (self, input) {
            (
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                    ..
                },
                Map { c, h, w },
            ) => {
                if c != in_channels {
                    return Err(Error::shape(format!(
                        "conv expects {} input channels, got {}",
                        in_channels, c
                    )));
                }
                Ok(Map {
                    c: *out_channels,
                    h: *h,
                    w: *w,
                })
            }
            (LayerSpec::MaxPool2x2, Map { c, h, w }) => Ok(Map {
                c: *c,
                h: h / 2,
                w: w / 2,
            }),
            (LayerSpec::Relu, s) => Ok(s.clone()),
            (LayerSpec::Flatten, Map { c, h, w }) => Ok(Flat(c * h * w)),
            (LayerSpec::Fc { in_dim, out_dim, .. }, Flat(d)) => {
                if d != in_dim {
                    return Err(Error::shape(format!(
                        "fc expects input dim {}, got {}",
                        in_dim, d
                    )));
                }
                Ok(Flat(*out_dim))
            }
            (LayerSpec::Softmax, Flat(d)) => Ok(Flat(*d)),
            (spec, shape) => Err(Error::shape(format!(
                "layer {:?} cannot follow shape {:?}",
                spec, shape
            ))),
        }
    }
}

/// Shape of the activation flowing between layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerShape {
    /// Spatial feature map, channel-first.
    Map { c: usize, h: usize, w: usize },
    /// Flat feature vector.
    Flat(usize),
}

impl LayerShape {
    pub fn map(c: usize, h: usize, w: usize) -> Self {
        LayerShape::Map { c, h, w }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            LayerShape::Map { c, h, w } => vec![c, h, w],
            LayerShape::Flat(d) => vec![d],
        }
    }

    pub fn num_elements(&self) -> usize {
        match *self {
            LayerShape::Map { c, h, w } => c * h * w,
            LayerShape::Flat(d) => d,
        }
    }
}

/// Folds a layer chain over an input shape, validating adjacency.
pub fn chain_output_shape(input: &LayerShape, layers: &[LayerSpec]) -> Result<LayerShape> {
    let mut shape = input.clone();
    for layer in layers {
        shape = layer.out_shape(&shape)?;
    }
    Ok(shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_chain_tiny_conv_stack() {
        let layers = vec![
            LayerSpec::conv(3, 8),
            LayerSpec::Relu,
            LayerSpec::MaxPool2x2,
            LayerSpec::Flatten,
            LayerSpec::fc(8 * 32 * 32, 10),
            LayerSpec::Softmax,
        ];
        let out = chain_output_shape(&LayerShape::map(3, 64, 64), &layers).unwrap();
        assert_eq!(out, LayerShape::Flat(10));
    }

    #[test]
    fn incompatible_chain_is_rejected() {
        let layers = vec![LayerSpec::conv(4, 8)];
        assert!(chain_output_shape(&LayerShape::map(3, 8, 8), &layers).is_err());
        assert!(chain_output_shape(&LayerShape::Flat(16), &layers).is_err());
    }

    #[test]
    fn layer_param_counts() {
        assert_eq!(LayerSpec::conv(3, 64).param_count(), 64 * 3 * 9 + 64);
        assert_eq!(LayerSpec::fc(2048, 64).param_count(), 2048 * 64 + 64);
        assert_eq!(LayerSpec::Relu.param_count(), 0);
    }
}
