//! Adam with bias correction, applied in place to a layer graph.

use super::graph::{Gradients, LayerGraph};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper<T> {
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    /// L2 penalty folded into the gradient before the moment updates;
    /// zero disables it.
    pub weight_decay: T,
}

impl<T: Scalar> Default for AdamHyper<T> {
    fn default() -> Self {
        AdamHyper {
            beta1: T::from_f64_lossy(0.5),
            beta2: T::from_f64_lossy(0.999),
            epsilon: T::from_f64_lossy(1e-8),
            weight_decay: T::zero(),
        }
    }
}

#[derive(Debug, Clone)]
struct Moments<T> {
    mw: Vec<T>,
    vw: Vec<T>,
    mb: Vec<T>,
    vb: Vec<T>,
}

/// First/second moment buffers for every trainable layer of one graph,
/// plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    t: u64,
    slots: Vec<Option<Moments<T>>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(graph: &LayerGraph<T>) -> AdamState<T> {
        let slots = graph
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if l.is_trainable() {
                    let p = graph.params_at(i).expect("trainable layer has params");
                    Some(Moments {
                        mw: vec![T::zero(); p.w.len()],
                        vw: vec![T::zero(); p.w.len()],
                        mb: vec![T::zero(); p.b.len()],
                        vb: vec![T::zero(); p.b.len()],
                    })
                } else {
                    None
                }
            })
            .collect();
        AdamState { t: 0, slots }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update. Gradient slots must line up with the graph's trainable
/// layers and the state must have been built for this graph; mismatches are
/// programmer error and panic.
pub fn adam_step<T: Scalar>(
    graph: &mut LayerGraph<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: T,
    hyper: &AdamHyper<T>,
) {
    assert_eq!(grads.by_layer.len(), graph.layers().len(), "gradient layout");
    assert_eq!(state.slots.len(), graph.layers().len(), "state layout");
    state.t += 1;
    let t = state.t;
    let one = T::one();
    let corr1 = one - hyper.beta1.powi(t as i32);
    let corr2 = one - hyper.beta2.powi(t as i32);

    for i in 0..graph.layers().len() {
        match (&grads.by_layer[i], &mut state.slots[i]) {
            (Some(g), Some(m)) => {
                let p = graph.params_at_mut(i).expect("trainable layer has params");
                assert_eq!(g.w.len(), p.w.len(), "weight gradient size");
                update(&mut p.w, &g.w, &mut m.mw, &mut m.vw, lr, hyper, corr1, corr2);
                update(&mut p.b, &g.b, &mut m.mb, &mut m.vb, lr, hyper, corr1, corr2);
            }
            (None, None) => {}
            _ => panic!("gradient/state layout disagrees at layer {}", i),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update<T: Scalar>(
    p: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: T,
    hyper: &AdamHyper<T>,
    corr1: T,
    corr2: T,
) {
    let one = T::one();
    for k in 0..p.len() {
        let mut gk = g[k];
        if hyper.weight_decay != T::zero() {
            gk += hyper.weight_decay * p[k];
        }
        m[k] = hyper.beta1 * m[k] + (one - hyper.beta1) * gk;
        v[k] = hyper.beta2 * v[k] + (one - hyper.beta2) * gk * gk;
        let m_hat = m[k] / corr1;
        let v_hat = v[k] / corr2;
        p[k] -= lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{cross_entropy, LayerShape, LayerSpec};
    use crate::tensor::Tensor;

    fn setup() -> (LayerGraph<f64>, Tensor<f64>) {
        let layers = vec![LayerSpec::fc(3, 2), LayerSpec::Softmax];
        let g = LayerGraph::new(LayerShape::Flat(3), layers, 42).unwrap();
        let x = Tensor::from_vec(vec![3], vec![0.4, -0.2, 0.9]).unwrap();
        (g, x)
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut g, _) = setup();
        let before = g.params_at(0).unwrap().clone();
        let mut state = AdamState::new(&g);
        let grads = Gradients::zeros_like(&g);
        adam_step(&mut g, &grads, &mut state, 1e-2, &AdamHyper::default());
        assert_eq!(*g.params_at(0).unwrap(), before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut g, x) = setup();
        let before = g.params_at(0).unwrap().clone();
        let pass = g.forward_cached(&x).unwrap();
        let grads = g.backward(&pass, 0).unwrap();
        let lr = 1e-3;
        let mut state = AdamState::new(&g);
        adam_step(&mut g, &grads, &mut state, lr, &AdamHyper::default());
        let after = g.params_at(0).unwrap();
        let gl = grads.by_layer[0].as_ref().unwrap();
        for k in 0..before.w.len() {
            let step = after.w[k] - before.w[k];
            if gl.w[k].abs() > 1e-9 {
                // After bias correction the first update is -lr * sign(g).
                assert!(
                    (step + lr * gl.w[k].signum()).abs() < lr * 1e-4,
                    "step {} for gradient {}",
                    step,
                    gl.w[k]
                );
            }
        }
    }

    #[test]
    fn repeated_steps_reduce_cross_entropy() {
        let (mut g, x) = setup();
        let mut state = AdamState::new(&g);
        let hyper = AdamHyper::default();
        let loss0 = cross_entropy(&g.forward(&x).unwrap(), 1);
        for _ in 0..50 {
            let pass = g.forward_cached(&x).unwrap();
            let grads = g.backward(&pass, 1).unwrap();
            adam_step(&mut g, &grads, &mut state, 1e-2, &hyper);
        }
        let loss1 = cross_entropy(&g.forward(&x).unwrap(), 1);
        assert!(loss1 < loss0 * 0.5, "loss {} -> {}", loss0, loss1);
    }

    #[test]
    fn weight_decay_shrinks_weights_under_zero_gradient() {
        let (mut g, _) = setup();
        let before = g.params_at(0).unwrap().w.clone();
        let mut state = AdamState::new(&g);
        let hyper = AdamHyper {
            weight_decay: 0.1,
            ..AdamHyper::default()
        };
        let grads = Gradients::zeros_like(&g);
        adam_step(&mut g, &grads, &mut state, 1e-3, &hyper);
        let after = &g.params_at(0).unwrap().w;
        for k in 0..before.len() {
            if before[k].abs() > 1e-6 {
                assert!(after[k].abs() < before[k].abs());
            }
        }
    }
}
