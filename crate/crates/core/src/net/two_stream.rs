//! Two trunks (colour and motion) whose outputs are concatenated and fed
//! into a shared classifier head.

use super::graph::{ForwardPass, Gradients, LayerGraph};
use super::profile::FusionPoint;
use super::LayerShape;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TwoStreamGraph<T> {
    color: LayerGraph<T>,
    motion: LayerGraph<T>,
    fusion: FusionPoint,
    head: LayerGraph<T>,
}

#[derive(Debug, Clone)]
pub struct TwoStreamPass<T> {
    pub color: ForwardPass<T>,
    pub motion: ForwardPass<T>,
    pub head: ForwardPass<T>,
}

impl<T: Scalar> TwoStreamPass<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.head.output()
    }
}

#[derive(Debug, Clone)]
pub struct TwoStreamGradients<T> {
    pub color: Gradients<T>,
    pub motion: Gradients<T>,
    pub head: Gradients<T>,
}

impl<T: Scalar> TwoStreamGraph<T> {
    /// Builds a two-stream network from a colour trunk and a head. The
    /// motion trunk starts as a bit-identical copy of the colour trunk.
    pub fn new(color: LayerGraph<T>, fusion: FusionPoint, head: LayerGraph<T>) -> Result<Self> {
        let motion = color.clone();
        TwoStreamGraph::from_parts(color, motion, fusion, head)
    }

    /// Reassembles a two-stream network from separately stored sections
    /// (the trunks may have diverged through training).
    pub fn from_parts(
        color: LayerGraph<T>,
        motion: LayerGraph<T>,
        fusion: FusionPoint,
        head: LayerGraph<T>,
    ) -> Result<Self> {
        if color.input_shape() != motion.input_shape() {
            return Err(Error::shape("trunk input shapes differ"));
        }
        let cout = color.output_shape();
        if cout != motion.output_shape() {
            return Err(Error::shape("trunk output shapes differ"));
        }
        let expected_head_in = doubled(&cout);
        if *head.input_shape() != expected_head_in {
            return Err(Error::shape(format!(
                "head expects {:?}, concatenated trunks give {:?}",
                head.input_shape().dims(),
                expected_head_in.dims()
            )));
        }
        Ok(TwoStreamGraph {
            color,
            motion,
            fusion,
            head,
        })
    }

    pub fn color(&self) -> &LayerGraph<T> {
        &self.color
    }

    pub fn motion(&self) -> &LayerGraph<T> {
        &self.motion
    }

    pub fn head(&self) -> &LayerGraph<T> {
        &self.head
    }

    pub fn color_mut(&mut self) -> &mut LayerGraph<T> {
        &mut self.color
    }

    pub fn motion_mut(&mut self) -> &mut LayerGraph<T> {
        &mut self.motion
    }

    pub fn head_mut(&mut self) -> &mut LayerGraph<T> {
        &mut self.head
    }

    pub fn fusion(&self) -> FusionPoint {
        self.fusion
    }

    pub fn input_shape(&self) -> &LayerShape {
        self.color.input_shape()
    }

    pub fn param_count(&self, learnable_only: bool) -> u64 {
        self.color.param_count(learnable_only)
            + self.motion.param_count(learnable_only)
            + self.head.param_count(learnable_only)
    }

    pub fn convert<U: Scalar>(&self) -> TwoStreamGraph<U> {
        TwoStreamGraph {
            color: self.color.convert(),
            motion: self.motion.convert(),
            fusion: self.fusion,
            head: self.head.convert(),
        }
    }

    pub fn forward(&self, rgb: &Tensor<T>, flow: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.color.forward(rgb)?;
        let m = self.motion.forward(flow)?;
        self.head.forward(&concat(&c, &m))
    }

    pub fn forward_cached(&self, rgb: &Tensor<T>, flow: &Tensor<T>) -> Result<TwoStreamPass<T>> {
        let color = self.color.forward_cached(rgb)?;
        let motion = self.motion.forward_cached(flow)?;
        let fused = concat(color.output(), motion.output());
        let head = self.head.forward_cached(&fused)?;
        Ok(TwoStreamPass {
            color,
            motion,
            head,
        })
    }

    /// Cross-entropy backward through head and both trunks. Trunks whose
    /// layers are all frozen are skipped entirely.
    pub fn backward(&self, pass: &TwoStreamPass<T>, target: usize) -> Result<TwoStreamGradients<T>> {
        let (head_grads, fused_delta) = self.head.backward_with_input(&pass.head, target)?;
        let (color_delta, motion_delta) = split(&fused_delta, pass.color.output());
        let color = if self.color.param_count(true) > 0 {
            self.color.backward_from_output(&pass.color, &color_delta)?.0
        } else {
            Gradients {
                by_layer: vec![None; self.color.layers().len()],
            }
        };
        let motion = if self.motion.param_count(true) > 0 {
            self.motion.backward_from_output(&pass.motion, &motion_delta)?.0
        } else {
            Gradients {
                by_layer: vec![None; self.motion.layers().len()],
            }
        };
        Ok(TwoStreamGradients {
            color,
            motion,
            head: head_grads,
        })
    }
}

fn doubled(shape: &LayerShape) -> LayerShape {
    match *shape {
        LayerShape::Map { c, h, w } => LayerShape::map(2 * c, h, w),
        LayerShape::Flat(d) => LayerShape::Flat(2 * d),
    }
}

/// Concatenates two equal-shape activations along the leading dimension.
fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let mut shape = a.shape().to_vec();
    shape[0] *= 2;
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(shape, data).expect("concat shapes agree")
}

/// Splits a concatenated delta back into per-trunk halves shaped like
/// `half_like`.
fn split<T: Scalar>(fused: &Tensor<T>, half_like: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let n = half_like.len();
    debug_assert_eq!(fused.len(), 2 * n);
    let shape = half_like.shape().to_vec();
    let a = Tensor::from_vec(shape.clone(), fused.data()[..n].to_vec()).expect("front half");
    let b = Tensor::from_vec(shape, fused.data()[n..].to_vec()).expect("back half");
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{cross_entropy, LayerSpec, NetPlan, Profile};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_two_stream(seed: u64) -> TwoStreamGraph<f64> {
        let profile = Profile {
            input_side: 8,
            conv_blocks: vec![vec![2]],
            hidden_fcs: vec![5],
            k_outputs: 3,
            ..Profile::tiny(3)
        };
        let NetPlan::TwoStream {
            trunk_input,
            motion,
            fusion,
            head_input,
            head,
            ..
        } = NetPlan::for_arch(&profile, crate::net::ArchDescriptor::PiConv)
        else {
            panic!("expected two-stream plan");
        };
        // Use the (trainable) motion spec for the colour trunk too so the
        // gradient comparison below exercises both trunks.
        let color = LayerGraph::new(trunk_input, motion, seed).unwrap();
        let head = LayerGraph::new(head_input, head, seed ^ 0xabcd).unwrap();
        TwoStreamGraph::new(color, fusion, head).unwrap()
    }

    fn random_map(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn motion_trunk_starts_identical_to_color() {
        let ts = tiny_two_stream(4);
        for idx in ts.color().param_layer_indices() {
            assert_eq!(
                ts.color().params_at(idx).unwrap().w,
                ts.motion().params_at(idx).unwrap().w
            );
        }
    }

    #[test]
    fn mismatched_head_is_rejected() {
        let color: LayerGraph<f64> = LayerGraph::new(
            LayerShape::map(3, 8, 8),
            vec![LayerSpec::conv(3, 2), LayerSpec::Relu, LayerSpec::MaxPool2x2],
            1,
        )
        .unwrap();
        let bad_head = LayerGraph::new(
            LayerShape::Flat(99),
            vec![LayerSpec::fc(99, 2), LayerSpec::Softmax],
            2,
        )
        .unwrap();
        assert!(TwoStreamGraph::new(color, FusionPoint::AfterConv, bad_head).is_err());
    }

    /// The two-stream backward must agree with finite differences through
    /// the concat join, for parameters in both trunks and the head.
    #[test]
    fn two_stream_gradients_match_finite_differences() {
        let mut ts = tiny_two_stream(6);
        let rgb = random_map(vec![3, 8, 8], 31);
        let flow = random_map(vec![3, 8, 8], 32);
        let target = 2usize;
        let pass = ts.forward_cached(&rgb, &flow).unwrap();
        let grads = ts.backward(&pass, target).unwrap();

        let eps = 1e-6;
        // One conv weight in each trunk and one fc weight in the head.
        let probes: Vec<(usize, usize, usize)> = vec![(0, 0, 3), (1, 0, 7), (2, 1, 5)];
        for (section, layer_slot, k) in probes {
            let layer = {
                let g = match section {
                    0 => ts.color(),
                    1 => ts.motion(),
                    _ => ts.head(),
                };
                g.param_layer_indices()[layer_slot]
            };
            let read_write = |ts: &mut TwoStreamGraph<f64>, v: Option<f64>| -> f64 {
                let g = match section {
                    0 => ts.color_mut(),
                    1 => ts.motion_mut(),
                    _ => ts.head_mut(),
                };
                let p = g.params_at_mut(layer).unwrap();
                let old = p.w[k];
                if let Some(v) = v {
                    p.w[k] = v;
                }
                old
            };
            let orig = read_write(&mut ts, None);
            read_write(&mut ts, Some(orig + eps));
            let lp = cross_entropy(&ts.forward(&rgb, &flow).unwrap(), target);
            read_write(&mut ts, Some(orig - eps));
            let lm = cross_entropy(&ts.forward(&rgb, &flow).unwrap(), target);
            read_write(&mut ts, Some(orig));
            let fd = (lp - lm) / (2.0 * eps);
            let section_grads = match section {
                0 => &grads.color,
                1 => &grads.motion,
                _ => &grads.head,
            };
            let an = section_grads.by_layer[layer].as_ref().unwrap().w[k];
            assert!(
                (fd - an).abs() < 1e-6 * (1.0 + fd.abs()),
                "section {} layer {} k {}: fd {} vs {}",
                section,
                layer,
                k,
                fd,
                an
            );
        }
    }

    #[test]
    fn frozen_color_trunk_gets_no_gradients() {
        let profile = Profile {
            input_side: 8,
            conv_blocks: vec![vec![2]],
            hidden_fcs: vec![5],
            k_outputs: 3,
            ..Profile::tiny(3)
        };
        let NetPlan::TwoStream {
            trunk_input,
            color,
            motion,
            fusion,
            head_input,
            head,
        } = NetPlan::for_arch(&profile, crate::net::ArchDescriptor::PiConv)
        else {
            panic!("expected two-stream plan");
        };
        let color = LayerGraph::<f64>::new(trunk_input.clone(), color, 3).unwrap();
        let motion = LayerGraph::new(trunk_input, motion, 3).unwrap();
        let head = LayerGraph::new(head_input, head, 4).unwrap();
        let ts = TwoStreamGraph::from_parts(color, motion, fusion, head).unwrap();
        let rgb = random_map(vec![3, 8, 8], 41);
        let flow = random_map(vec![3, 8, 8], 42);
        let pass = ts.forward_cached(&rgb, &flow).unwrap();
        let grads = ts.backward(&pass, 0).unwrap();
        assert!(grads.color.by_layer.iter().all(|s| s.is_none()));
        assert!(grads.motion.by_layer.iter().any(|s| s.is_some()));
        assert!(grads.head.by_layer.iter().any(|s| s.is_some()));
    }
}
