//! Uniform façade over single-stream and two-stream networks, so training
//! and prediction code can ignore the wiring.

use super::adam::{adam_step, AdamHyper, AdamState};
use super::graph::{ForwardPass, Gradients, LayerGraph};
use super::profile::{FusionMode, NetPlan, Profile};
use super::two_stream::{TwoStreamGradients, TwoStreamGraph, TwoStreamPass};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Input to a network: a single image, or a colour/flow pair for
/// two-stream variants.
#[derive(Debug, Clone)]
pub enum NetInput<T> {
    Single(Tensor<T>),
    Pair { rgb: Tensor<T>, flow: Tensor<T> },
}

#[derive(Debug, Clone)]
pub enum Network<T> {
    Single(LayerGraph<T>),
    TwoStream(TwoStreamGraph<T>),
}

#[derive(Debug, Clone)]
pub enum NetworkPass<T> {
    Single(ForwardPass<T>),
    TwoStream(TwoStreamPass<T>),
}

impl<T: Scalar> NetworkPass<T> {
    pub fn output(&self) -> &Tensor<T> {
        match self {
            NetworkPass::Single(p) => p.output(),
            NetworkPass::TwoStream(p) => p.output(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum NetworkGradients<T> {
    Single(Gradients<T>),
    TwoStream(TwoStreamGradients<T>),
}

#[derive(Debug, Clone)]
pub enum NetworkAdamState<T> {
    Single(AdamState<T>),
    TwoStream {
        color: AdamState<T>,
        motion: AdamState<T>,
        head: AdamState<T>,
    },
}

/// Derives decorrelated per-section seeds from one network seed.
pub(crate) fn section_seed(seed: u64, section: u64) -> u64 {
    // splitmix64 step on seed + section.
    let mut z = seed
        .wrapping_add(section.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl<T: Scalar> Network<T> {
    /// Instantiates a plan with seeded random weights. For two-stream
    /// plans the motion trunk starts bit-identical to the colour trunk.
    pub fn build(plan: &NetPlan, seed: u64) -> Result<Network<T>> {
        match plan {
            NetPlan::Single { input, layers } => Ok(Network::Single(LayerGraph::new(
                input.clone(),
                layers.clone(),
                section_seed(seed, 0),
            )?)),
            NetPlan::TwoStream {
                trunk_input,
                color,
                motion,
                fusion,
                head_input,
                head,
            } => {
                // Build the trunk once with the motion trainable flags,
                // clone it into the colour slot with its frozen flags.
                let motion_graph = LayerGraph::new(
                    trunk_input.clone(),
                    motion.clone(),
                    section_seed(seed, 0),
                )?;
                let mut color_graph =
                    LayerGraph::zeroed(trunk_input.clone(), color.clone())?;
                for idx in motion_graph.param_layer_indices() {
                    *color_graph.params_at_mut(idx).unwrap() =
                        motion_graph.params_at(idx).unwrap().clone();
                }
                let head_graph =
                    LayerGraph::new(head_input.clone(), head.clone(), section_seed(seed, 2))?;
                Ok(Network::TwoStream(TwoStreamGraph::from_parts(
                    color_graph,
                    motion_graph,
                    *fusion,
                    head_graph,
                )?))
            }
        }
    }

    /// Builds the network for a profile and fusion mode.
    pub fn for_fusion(profile: &Profile, mode: FusionMode, seed: u64) -> Result<Network<T>> {
        Network::build(&NetPlan::for_fusion(profile, mode), seed)
    }

    pub fn is_two_stream(&self) -> bool {
        matches!(self, Network::TwoStream(_))
    }

    pub fn as_single(&self) -> Option<&LayerGraph<T>> {
        match self {
            Network::Single(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_single_mut(&mut self) -> Option<&mut LayerGraph<T>> {
        match self {
            Network::Single(g) => Some(g),
            _ => None,
        }
    }

    pub fn as_two_stream(&self) -> Option<&TwoStreamGraph<T>> {
        match self {
            Network::TwoStream(ts) => Some(ts),
            _ => None,
        }
    }

    pub fn as_two_stream_mut(&mut self) -> Option<&mut TwoStreamGraph<T>> {
        match self {
            Network::TwoStream(ts) => Some(ts),
            _ => None,
        }
    }

    pub fn param_count(&self, learnable_only: bool) -> u64 {
        match self {
            Network::Single(g) => g.param_count(learnable_only),
            Network::TwoStream(ts) => ts.param_count(learnable_only),
        }
    }

    pub fn convert<U: Scalar>(&self) -> Network<U> {
        match self {
            Network::Single(g) => Network::Single(g.convert()),
            Network::TwoStream(ts) => Network::TwoStream(ts.convert()),
        }
    }

    pub fn forward(&self, input: &NetInput<T>) -> Result<Tensor<T>> {
        match (self, input) {
            (Network::Single(g), NetInput::Single(x)) => g.forward(x),
            (Network::TwoStream(ts), NetInput::Pair { rgb, flow }) => ts.forward(rgb, flow),
            (Network::Single(_), NetInput::Pair { .. }) => {
                Err(Error::invalid("single-stream network fed an image pair"))
            }
            (Network::TwoStream(_), NetInput::Single(_)) => {
                Err(Error::invalid("two-stream network fed a single image"))
            }
        }
    }

    pub fn forward_cached(&self, input: &NetInput<T>) -> Result<NetworkPass<T>> {
        match (self, input) {
            (Network::Single(g), NetInput::Single(x)) => {
                Ok(NetworkPass::Single(g.forward_cached(x)?))
            }
            (Network::TwoStream(ts), NetInput::Pair { rgb, flow }) => {
                Ok(NetworkPass::TwoStream(ts.forward_cached(rgb, flow)?))
            }
            _ => Err(Error::invalid("network/input arity mismatch")),
        }
    }

    pub fn backward(&self, pass: &NetworkPass<T>, target: usize) -> Result<NetworkGradients<T>> {
        match (self, pass) {
            (Network::Single(g), NetworkPass::Single(p)) => {
                Ok(NetworkGradients::Single(g.backward(p, target)?))
            }
            (Network::TwoStream(ts), NetworkPass::TwoStream(p)) => {
                Ok(NetworkGradients::TwoStream(ts.backward(p, target)?))
            }
            _ => Err(Error::invalid("network/pass arity mismatch")),
        }
    }

    pub fn adam_state(&self) -> NetworkAdamState<T> {
        match self {
            Network::Single(g) => NetworkAdamState::Single(AdamState::new(g)),
            Network::TwoStream(ts) => NetworkAdamState::TwoStream {
                color: AdamState::new(ts.color()),
                motion: AdamState::new(ts.motion()),
                head: AdamState::new(ts.head()),
            },
        }
    }

    pub fn adam_step(
        &mut self,
        grads: &NetworkGradients<T>,
        state: &mut NetworkAdamState<T>,
        lr: T,
        hyper: &AdamHyper<T>,
    ) {
        match (self, grads, state) {
            (
                Network::Single(g),
                NetworkGradients::Single(gr),
                NetworkAdamState::Single(st),
            ) => adam_step(g, gr, st, lr, hyper),
            (
                Network::TwoStream(ts),
                NetworkGradients::TwoStream(gr),
                NetworkAdamState::TwoStream {
                    color,
                    motion,
                    head,
                },
            ) => {
                adam_step(ts.color_mut(), &gr.color, color, lr, hyper);
                adam_step(ts.motion_mut(), &gr.motion, motion, lr, hyper);
                adam_step(ts.head_mut(), &gr.head, head, lr, hyper);
            }
            _ => panic!("network/gradient/state arity mismatch"),
        }
    }

    /// Accumulates `other` into `acc` (both must come from this network).
    pub fn accumulate_grads(acc: &mut NetworkGradients<T>, other: &NetworkGradients<T>) {
        match (acc, other) {
            (NetworkGradients::Single(a), NetworkGradients::Single(b)) => a.accumulate(b),
            (NetworkGradients::TwoStream(a), NetworkGradients::TwoStream(b)) => {
                a.color.accumulate(&b.color);
                a.motion.accumulate(&b.motion);
                a.head.accumulate(&b.head);
            }
            _ => panic!("gradient arity mismatch"),
        }
    }

    pub fn scale_grads(grads: &mut NetworkGradients<T>, s: T) {
        match grads {
            NetworkGradients::Single(g) => g.scale(s),
            NetworkGradients::TwoStream(g) => {
                g.color.scale(s);
                g.motion.scale(s);
                g.head.scale(s);
            }
        }
    }
}
