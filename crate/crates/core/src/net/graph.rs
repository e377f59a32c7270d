//! A parameterised layer chain with forward evaluation and reverse-mode
//! gradients. All shape checks happen at construction or entry; inner
//! loops use unchecked arithmetic on contiguous buffers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{chain_output_shape, LayerShape, LayerSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weights and biases of one parameterised layer. Conv weights are laid
/// out `[out][in][ky][kx]`, fully connected weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Params<T> {
    fn zeros(spec: &LayerSpec) -> Params<T> {
        let (wn, bn) = param_dims(spec);
        Params {
            w: vec![T::zero(); wn],
            b: vec![T::zero(); bn],
        }
    }

    pub fn convert<U: Scalar>(&self) -> Params<U> {
        Params {
            w: self.w.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
            b: self.b.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }
}

/// (weight count, bias count) for a parameterised layer; (0, 0) otherwise.
fn param_dims(spec: &LayerSpec) -> (usize, usize) {
    match *spec {
        LayerSpec::Conv3x3 {
            in_channels,
            out_channels,
            ..
        } => (out_channels * in_channels * 9, out_channels),
        LayerSpec::Fc { in_dim, out_dim, .. } => (out_dim * in_dim, out_dim),
        _ => (0, 0),
    }
}

/// All intermediate activations of one forward evaluation, kept for the
/// backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    pub input: Tensor<T>,
    /// One entry per layer, in order; the last entry is the network output.
    pub outputs: Vec<Tensor<T>>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.outputs.last().expect("pass over non-empty chain")
    }
}

/// Per-layer parameter gradients; `None` for layers without parameters and
/// for frozen layers.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub by_layer: Vec<Option<Params<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(graph: &LayerGraph<T>) -> Gradients<T> {
        let by_layer = graph
            .layers
            .iter()
            .map(|l| {
                if l.is_trainable() {
                    Some(Params::zeros(l))
                } else {
                    None
                }
            })
            .collect();
        Gradients { by_layer }
    }

    /// Adds `other` into `self`; shapes must match slot for slot.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        assert_eq!(self.by_layer.len(), other.by_layer.len());
        for (a, b) in self.by_layer.iter_mut().zip(&other.by_layer) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    assert_eq!(a.w.len(), b.w.len());
                    for (x, y) in a.w.iter_mut().zip(&b.w) {
                        *x += *y;
                    }
                    for (x, y) in a.b.iter_mut().zip(&b.b) {
                        *x += *y;
                    }
                }
                (None, None) => {}
                _ => panic!("gradient layouts disagree"),
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for slot in self.by_layer.iter_mut().flatten() {
            for v in slot.w.iter_mut() {
                *v *= s;
            }
            for v in slot.b.iter_mut() {
                *v *= s;
            }
        }
    }

    /// Largest absolute gradient entry, useful for saturation checks.
    pub fn max_abs(&self) -> T {
        let mut m = T::zero();
        for slot in self.by_layer.iter().flatten() {
            for v in slot.w.iter().chain(&slot.b) {
                if v.abs() > m {
                    m = v.abs();
                }
            }
        }
        m
    }
}

/// Seed of the backward pass: either a cross-entropy target class or an
/// explicit gradient with respect to the chain output.
enum DeltaSeed<'a, T> {
    CeTarget(usize),
    OutDelta(&'a Tensor<T>),
}

/// A feed-forward chain with instantiated parameters.
#[derive(Debug, Clone)]
pub struct LayerGraph<T> {
    input: LayerShape,
    layers: Vec<LayerSpec>,
    params: Vec<Option<Params<T>>>,
}

impl<T: Scalar> LayerGraph<T> {
    /// Builds the chain and initialises weights from `seed`: normal(0, 0.01)
    /// weights, zero biases. The same seed always yields the same weights.
    pub fn new(input: LayerShape, layers: Vec<LayerSpec>, seed: u64) -> Result<LayerGraph<T>> {
        let mut graph = LayerGraph::zeroed(input, layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.01).expect("valid stddev");
        for slot in graph.params.iter_mut().flatten() {
            for v in slot.w.iter_mut() {
                *v = T::from_f64_lossy(normal.sample(&mut rng));
            }
        }
        Ok(graph)
    }

    /// Builds the chain with all parameters zero (weights are expected to
    /// be transplanted or loaded afterwards).
    pub fn zeroed(input: LayerShape, layers: Vec<LayerSpec>) -> Result<LayerGraph<T>> {
        chain_output_shape(&input, &layers)?;
        if let Some(pos) = layers.iter().position(|l| matches!(l, LayerSpec::Softmax)) {
            if pos + 1 != layers.len() {
                return Err(Error::invalid("softmax must be the final layer"));
            }
        }
        let params = layers
            .iter()
            .map(|l| if l.has_params() { Some(Params::zeros(l)) } else { None })
            .collect();
        Ok(LayerGraph { input, layers, params })
    }

    pub fn input_shape(&self) -> &LayerShape {
        &self.input
    }

    pub fn output_shape(&self) -> LayerShape {
        chain_output_shape(&self.input, &self.layers).expect("validated at construction")
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params_at(&self, layer: usize) -> Option<&Params<T>> {
        self.params[layer].as_ref()
    }

    pub fn params_at_mut(&mut self, layer: usize) -> Option<&mut Params<T>> {
        self.params[layer].as_mut()
    }

    /// Indices of layers that carry parameters, in order.
    pub fn param_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.has_params())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn set_all_trainable(&mut self, value: bool) {
        for layer in &mut self.layers {
            layer.set_trainable(value);
        }
    }

    pub fn param_count(&self, learnable_only: bool) -> u64 {
        self.layers
            .iter()
            .filter(|l| !learnable_only || l.is_trainable())
            .map(|l| l.param_count())
            .sum()
    }

    pub fn convert<U: Scalar>(&self) -> LayerGraph<U> {
        LayerGraph {
            input: self.input.clone(),
            layers: self.layers.clone(),
            params: self
                .params
                .iter()
                .map(|p| p.as_ref().map(|p| p.convert()))
                .collect(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.input.dims().as_slice() {
            return Err(Error::shape(format!(
                "network expects input {:?}, got {:?}",
                self.input.dims(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Memory-light forward: only the final output is returned.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            cur = self.apply(i, layer, &cur);
        }
        Ok(cur)
    }

    /// Forward pass retaining every intermediate activation.
    pub fn forward_cached(&self, x: &Tensor<T>) -> Result<ForwardPass<T>> {
        self.check_input(x)?;
        let mut outputs = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let prev = outputs.last().unwrap_or(x);
            outputs.push(self.apply(i, layer, prev));
        }
        Ok(ForwardPass {
            input: x.clone(),
            outputs,
        })
    }

    fn apply(&self, idx: usize, layer: &LayerSpec, x: &Tensor<T>) -> Tensor<T> {
        match layer {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
                ..
            } => {
                let p = self.params[idx].as_ref().expect("conv has params");
                conv3x3_forward(x, &p.w, &p.b, *in_channels, *out_channels)
            }
            LayerSpec::MaxPool2x2 => maxpool_forward(x),
            LayerSpec::Relu => x.map(|v| if v > T::zero() { v } else { T::zero() }),
            LayerSpec::Flatten => {
                let n = x.len();
                x.clone().reshaped([n]).expect("flatten preserves count")
            }
            LayerSpec::Fc { in_dim, out_dim, .. } => {
                let p = self.params[idx].as_ref().expect("fc has params");
                fc_forward(x, &p.w, &p.b, *in_dim, *out_dim)
            }
            LayerSpec::Softmax => softmax(x),
        }
    }

    /// Gradients of the cross-entropy loss at `target` with respect to all
    /// trainable parameters. The chain must end in a softmax.
    pub fn backward(&self, pass: &ForwardPass<T>, target: usize) -> Result<Gradients<T>> {
        self.backprop(pass, DeltaSeed::CeTarget(target), false)
            .map(|(g, _)| g)
    }

    /// As [`backward`], additionally returning the loss gradient with
    /// respect to the chain input.
    pub fn backward_with_input(
        &self,
        pass: &ForwardPass<T>,
        target: usize,
    ) -> Result<(Gradients<T>, Tensor<T>)> {
        self.backprop(pass, DeltaSeed::CeTarget(target), true)
            .map(|(g, d)| (g, d.expect("input delta requested")))
    }

    /// Backward pass seeded with an explicit gradient of the loss with
    /// respect to the chain output; returns parameter gradients and the
    /// gradient with respect to the input.
    pub fn backward_from_output(
        &self,
        pass: &ForwardPass<T>,
        out_delta: &Tensor<T>,
    ) -> Result<(Gradients<T>, Tensor<T>)> {
        self.backprop(pass, DeltaSeed::OutDelta(out_delta), true)
            .map(|(g, d)| (g, d.expect("input delta requested")))
    }

    fn backprop(
        &self,
        pass: &ForwardPass<T>,
        seed: DeltaSeed<'_, T>,
        need_input_delta: bool,
    ) -> Result<(Gradients<T>, Option<Tensor<T>>)> {
        assert_eq!(pass.outputs.len(), self.layers.len(), "pass/chain mismatch");
        let mut grads = Gradients {
            by_layer: vec![None; self.layers.len()],
        };
        let last = self.layers.len() - 1;
        // Index below which no gradient is needed unless the caller wants
        // the input delta.
        let lowest_trainable = self
            .layers
            .iter()
            .position(|l| l.is_trainable())
            .unwrap_or(self.layers.len());

        let (mut delta, mut next) = match seed {
            DeltaSeed::CeTarget(target) => {
                if !matches!(self.layers[last], LayerSpec::Softmax) {
                    return Err(Error::invalid(
                        "cross-entropy backward requires a softmax output layer",
                    ));
                }
                let probs = pass.output();
                if target >= probs.len() {
                    return Err(Error::invalid(format!(
                        "target class {} out of range for {} outputs",
                        target,
                        probs.len()
                    )));
                }
                // d(loss)/d(softmax input) = p - onehot(target)
                let mut d = probs.clone();
                d.data_mut()[target] -= T::one();
                (d, last.wrapping_sub(1))
            }
            DeltaSeed::OutDelta(d) => {
                if d.shape() != pass.output().shape() {
                    return Err(Error::shape(format!(
                        "output delta shape {:?} does not match output {:?}",
                        d.shape(),
                        pass.output().shape()
                    )));
                }
                (d.clone(), last)
            }
        };

        loop {
            let i = next;
            if i == usize::MAX {
                break;
            }
            if !need_input_delta && i < lowest_trainable {
                return Ok((grads, None));
            }
            let layer_in = if i == 0 { &pass.input } else { &pass.outputs[i - 1] };
            let layer_out = &pass.outputs[i];
            let spec = &self.layers[i];
            delta = match spec {
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                    trainable,
                } => {
                    let p = self.params[i].as_ref().expect("conv has params");
                    let want_dx = need_input_delta || i > lowest_trainable;
                    let (dp, dx) = conv3x3_backward(
                        layer_in,
                        &p.w,
                        &delta,
                        *in_channels,
                        *out_channels,
                        *trainable,
                        want_dx,
                    );
                    if *trainable {
                        grads.by_layer[i] = Some(dp);
                    }
                    dx.unwrap_or_else(|| Tensor::zeros(layer_in.shape().to_vec()))
                }
                LayerSpec::Fc {
                    in_dim,
                    out_dim,
                    trainable,
                } => {
                    let p = self.params[i].as_ref().expect("fc has params");
                    let (dp, dx) =
                        fc_backward(layer_in, &p.w, &delta, *in_dim, *out_dim, *trainable);
                    if *trainable {
                        grads.by_layer[i] = Some(dp);
                    }
                    dx
                }
                LayerSpec::Relu => {
                    let mut d = delta;
                    for (dv, ov) in d.data_mut().iter_mut().zip(layer_out.data()) {
                        if !(*ov > T::zero()) {
                            *dv = T::zero();
                        }
                    }
                    d
                }
                LayerSpec::MaxPool2x2 => maxpool_backward(layer_in, &delta),
                LayerSpec::Flatten => delta
                    .reshaped(layer_in.shape().to_vec())
                    .expect("flatten preserves count"),
                LayerSpec::Softmax => {
                    // Reached only when seeded with an output delta.
                    softmax_backward(layer_out, &delta)
                }
            };
            next = i.wrapping_sub(1);
        }
        Ok((grads, Some(delta)))
    }
}

/// Cross-entropy loss of a probability vector at `target`.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, target: usize) -> T {
    let floor = T::from_f64_lossy(1e-12);
    let p = probs.data()[target];
    -(if p > floor { p } else { floor }).ln()
}

fn conv3x3_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &[T],
    b: &[T],
    in_c: usize,
    out_c: usize,
) -> Tensor<T> {
    let (h, wd) = (x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(vec![out_c, h, wd]);
    let xd = x.data();
    let od = out.data_mut();
    for o in 0..out_c {
        let o_base = o * h * wd;
        let bias = b[o];
        for v in od[o_base..o_base + h * wd].iter_mut() {
            *v = bias;
        }
        for i in 0..in_c {
            let i_base = i * h * wd;
            for ky in 0..3usize {
                // Output rows y with a valid input row y + ky - 1.
                let y0 = 1usize.saturating_sub(ky);
                let y1 = (h + 1 - ky).min(h);
                for kx in 0..3usize {
                    let wv = w[((o * in_c + i) * 3 + ky) * 3 + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    let x0 = 1usize.saturating_sub(kx);
                    let x1 = (wd + 1 - kx).min(wd);
                    for y in y0..y1 {
                        let iy = y + ky - 1;
                        let orow = o_base + y * wd;
                        let irow = i_base + iy * wd;
                        for xi in x0..x1 {
                            od[orow + xi] += wv * xd[irow + xi + kx - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &[T],
    dout: &Tensor<T>,
    in_c: usize,
    out_c: usize,
    want_dparams: bool,
    want_dx: bool,
) -> (Params<T>, Option<Tensor<T>>) {
    let (h, wd) = (x.shape()[1], x.shape()[2]);
    let mut dp = Params {
        w: vec![T::zero(); if want_dparams { w.len() } else { 0 }],
        b: vec![T::zero(); if want_dparams { out_c } else { 0 }],
    };
    let mut dx = if want_dx {
        Some(Tensor::zeros(vec![in_c, h, wd]))
    } else {
        None
    };
    let xd = x.data();
    let dd = dout.data();
    for o in 0..out_c {
        let o_base = o * h * wd;
        if want_dparams {
            let mut s = T::zero();
            for v in &dd[o_base..o_base + h * wd] {
                s += *v;
            }
            dp.b[o] = s;
        }
        for i in 0..in_c {
            let i_base = i * h * wd;
            for ky in 0..3usize {
                let y0 = 1usize.saturating_sub(ky);
                let y1 = (h + 1 - ky).min(h);
                for kx in 0..3usize {
                    let x0 = 1usize.saturating_sub(kx);
                    let x1 = (wd + 1 - kx).min(wd);
                    let widx = ((o * in_c + i) * 3 + ky) * 3 + kx;
                    if want_dparams {
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            let iy = y + ky - 1;
                            let orow = o_base + y * wd;
                            let irow = i_base + iy * wd;
                            for xi in x0..x1 {
                                acc += xd[irow + xi + kx - 1] * dd[orow + xi];
                            }
                        }
                        dp.w[widx] = acc;
                    }
                    if let Some(dx) = dx.as_mut() {
                        let wv = w[widx];
                        if wv == T::zero() {
                            continue;
                        }
                        let dxd = dx.data_mut();
                        for y in y0..y1 {
                            let iy = y + ky - 1;
                            let orow = o_base + y * wd;
                            let irow = i_base + iy * wd;
                            for xi in x0..x1 {
                                dxd[irow + xi + kx - 1] += wv * dd[orow + xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dp, dx)
}

fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![c, oh, ow]);
    let xd = x.data();
    let od = out.data_mut();
    for ci in 0..c {
        for y in 0..oh {
            for xi in 0..ow {
                let base = ci * h * w + 2 * y * w + 2 * xi;
                let m = xd[base]
                    .max(xd[base + 1])
                    .max(xd[base + w])
                    .max(xd[base + w + 1]);
                od[ci * oh * ow + y * ow + xi] = m;
            }
        }
    }
    out
}

fn maxpool_backward<T: Scalar>(x: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut dx = Tensor::zeros(vec![c, h, w]);
    let xd = x.data();
    let dd = dout.data();
    let dxd = dx.data_mut();
    for ci in 0..c {
        for y in 0..oh {
            for xi in 0..ow {
                let base = ci * h * w + 2 * y * w + 2 * xi;
                // Route to the first maximal cell in scan order.
                let cells = [base, base + 1, base + w, base + w + 1];
                let mut best = cells[0];
                for &cell in &cells[1..] {
                    if xd[cell] > xd[best] {
                        best = cell;
                    }
                }
                dxd[best] += dd[ci * oh * ow + y * ow + xi];
            }
        }
    }
    dx
}

fn fc_forward<T: Scalar>(x: &Tensor<T>, w: &[T], b: &[T], in_dim: usize, out_dim: usize) -> Tensor<T> {
    let xd = x.data();
    let mut out = Tensor::zeros(vec![out_dim]);
    let od = out.data_mut();
    for j in 0..out_dim {
        let row = &w[j * in_dim..(j + 1) * in_dim];
        let mut acc = b[j];
        for (wv, xv) in row.iter().zip(xd) {
            acc += *wv * *xv;
        }
        od[j] = acc;
    }
    out
}

fn fc_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &[T],
    dout: &Tensor<T>,
    in_dim: usize,
    out_dim: usize,
    want_dparams: bool,
) -> (Params<T>, Tensor<T>) {
    let xd = x.data();
    let dd = dout.data();
    let mut dp = Params {
        w: vec![T::zero(); if want_dparams { w.len() } else { 0 }],
        b: if want_dparams { dd.to_vec() } else { Vec::new() },
    };
    let mut dx = Tensor::zeros(vec![in_dim]);
    let dxd = dx.data_mut();
    for j in 0..out_dim {
        let dj = dd[j];
        let row = &w[j * in_dim..(j + 1) * in_dim];
        if want_dparams {
            let drow = &mut dp.w[j * in_dim..(j + 1) * in_dim];
            for i in 0..in_dim {
                drow[i] = dj * xd[i];
            }
        }
        if dj != T::zero() {
            for i in 0..in_dim {
                dxd[i] += row[i] * dj;
            }
        }
    }
    (dp, dx)
}

fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let xd = x.data();
    let m = xd.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out = Tensor::zeros(vec![xd.len()]);
    let od = out.data_mut();
    let mut sum = T::zero();
    for (o, v) in od.iter_mut().zip(xd) {
        *o = (*v - m).exp();
        sum += *o;
    }
    for o in od.iter_mut() {
        *o /= sum;
    }
    out
}

/// Gradient through softmax: dL/dz_i = p_i (d_i - sum_j d_j p_j).
fn softmax_backward<T: Scalar>(probs: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let pd = probs.data();
    let dd = dout.data();
    let dot: T = pd.iter().zip(dd).map(|(p, d)| *p * *d).sum();
    let mut dz = Tensor::zeros(vec![pd.len()]);
    for ((z, p), d) in dz.data_mut().iter_mut().zip(pd).zip(dd) {
        *z = *p * (*d - dot);
    }
    dz
}
