//! The shared training loop: Adam with the linear-decay schedule,
//! plateau early stopping on the validation metric, and the per-epoch
//! log.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evalkit::f1_frame;
use crate::net::{
    cross_entropy, section_seed, AdamHyper, LayerGraph, LayerSpec, NetInput, Network,
};
use crate::scalar::Scalar;
use crate::temporal::DECISION_THRESHOLD;
use crate::TrainScalar;

/// Optimizer schedule and stopping rules: Adam(0.5, 0.999), learning
/// rate 1e-4 decaying linearly to zero over 12 epochs, early stop after
/// 3 epochs without a > 1e-4 improvement of the validation metric.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_epochs: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub plateau_epochs: usize,
    pub improvement: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            decay_epochs: 12,
            max_epochs: 12,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            plateau_epochs: 3,
            improvement: 1e-4,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// lr(epoch) = lr0 * max(0, 1 - epoch / decay_epochs).
    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * (1.0 - epoch as f64 / self.decay_epochs as f64).max(0.0)
    }

    fn hyper(&self) -> AdamHyper<TrainScalar> {
        AdamHyper {
            beta1: TrainScalar::from_f64_lossy(self.beta1),
            beta2: TrainScalar::from_f64_lossy(self.beta2),
            epsilon: TrainScalar::from_f64_lossy(self.epsilon),
            weight_decay: TrainScalar::from_f64_lossy(self.weight_decay),
        }
    }
}

/// One training or validation example: an assembled input and its
/// class index (0/1 for detectors, 0..k for classifiers).
#[derive(Debug, Clone)]
pub struct ClassExample {
    pub input: NetInput<TrainScalar>,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub f1_val: f64,
    pub lr: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters as of the best validation epoch.
    pub net: Network<TrainScalar>,
    pub log: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best_f1(&self) -> f64 {
        self.log[self.best_epoch].f1_val
    }
}

/// Plateau rule: stop once `patience` consecutive epochs fail to beat
/// the best value by more than `threshold`.
#[derive(Debug, Clone)]
pub(crate) struct PlateauTracker {
    threshold: f64,
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl PlateauTracker {
    pub(crate) fn new(threshold: f64, patience: usize) -> Self {
        PlateauTracker {
            threshold,
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Returns (improved, stop-now).
    pub(crate) fn observe(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        let improved = value > self.best + self.threshold;
        if improved {
            self.best = value;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        (improved, self.stale >= self.patience)
    }

    pub(crate) fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone, Copy)]
enum Metric {
    F1Positive,
    Accuracy,
}

fn eval_metric(net: &Network<TrainScalar>, val: &[ClassExample], metric: Metric) -> Result<f64> {
    match metric {
        Metric::F1Positive => {
            let pairs: Vec<(bool, bool)> = val
                .par_iter()
                .map(|ex| Ok((predict_frame(net, &ex.input)? >= DECISION_THRESHOLD, ex.class == 1)))
                .collect::<Result<_>>()?;
            let (decisions, labels): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
            Ok(f1_frame(&decisions, &labels)?.2)
        }
        Metric::Accuracy => {
            let hits: Vec<bool> = val
                .par_iter()
                .map(|ex| {
                    let out = net.forward(&ex.input)?;
                    let arg = out
                        .data()
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    Ok(arg == ex.class)
                })
                .collect::<Result<_>>()?;
            Ok(hits.iter().filter(|&&h| h).count() as f64 / val.len() as f64)
        }
    }
}

fn run_training(
    mut net: Network<TrainScalar>,
    train: &[ClassExample],
    val: &[ClassExample],
    cfg: &TrainConfig,
    metric: Metric,
) -> Result<TrainOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("training and validation data must be nonempty"));
    }
    let k = match net.forward(&train[0].input)?.data().len() {
        n if n >= 2 => n,
        n => return Err(Error::invalid(format!("{}-way output cannot be trained", n))),
    };
    for ex in train.iter().chain(val) {
        if ex.class >= k {
            return Err(Error::invalid(format!(
                "class {} out of range for a {}-way head",
                ex.class, k
            )));
        }
    }
    let hyper = cfg.hyper();
    let mut state = net.adam_state();
    let mut tracker = PlateauTracker::new(cfg.improvement, cfg.plateau_epochs);
    let mut best_net = net.clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(section_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            // Per-example gradients in parallel; the fold stays in batch
            // order so results are bit-identical to a serial pass.
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &train[i];
                    let pass = net.forward_cached(&ex.input)?;
                    let loss = cross_entropy(pass.output(), ex.class) as f64;
                    let grads = net.backward(&pass, ex.class)?;
                    Ok((loss, grads))
                })
                .collect::<Result<_>>()?;
            let mut acc: Option<_> = None;
            for (loss, grads) in results {
                loss_sum += loss;
                match &mut acc {
                    None => acc = Some(grads),
                    Some(a) => Network::accumulate_grads(a, &grads),
                }
            }
            let mut grads = acc.expect("nonempty batch");
            Network::scale_grads(&mut grads, 1.0 / batch.len() as TrainScalar);
            net.adam_step(&grads, &mut state, lr as TrainScalar, &hyper);
        }
        let f1_val = eval_metric(&net, val, metric)?;
        let (improved, stop) = tracker.observe(epoch, f1_val);
        if improved {
            best_net = net.clone();
        }
        log.push(EpochStats {
            epoch,
            loss: loss_sum / train.len() as f64,
            f1_val,
            lr,
        });
        if stop {
            break;
        }
    }
    Ok(TrainOutcome {
        net: best_net,
        log,
        best_epoch: tracker.best_epoch(),
    })
}

/// Trains a binary AU detector, early-stopping on validation F1 and
/// returning the best-F1 snapshot plus the per-epoch log.
pub fn train_detector(
    net: Network<TrainScalar>,
    train: &[ClassExample],
    val: &[ClassExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    for ex in train.iter().chain(val) {
        if ex.class > 1 {
            return Err(Error::invalid("detector labels must be binary"));
        }
    }
    run_training(net, train, val, cfg, Metric::F1Positive)
}

/// Trains a k-way classifier (pretraining or the view net), early
/// stopping on validation accuracy; the log's metric column holds that
/// accuracy.
pub fn train_classifier(
    net: Network<TrainScalar>,
    train: &[ClassExample],
    val: &[ClassExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    run_training(net, train, val, cfg, Metric::Accuracy)
}

/// Probability of AU presence (slot 1 of the binary softmax).
pub fn predict_frame(net: &Network<TrainScalar>, input: &NetInput<TrainScalar>) -> Result<TrainScalar> {
    let out = net.forward(input)?;
    if out.data().len() != 2 {
        return Err(Error::invalid(format!(
            "predict_frame needs a binary head, found {} outputs",
            out.data().len()
        )));
    }
    Ok(out.data()[1])
}

/// Replaces the final FC of a softmax-headed chain with a fresh k-way
/// layer (normal(0, 0.01), zero bias, from `seed`); every other layer
/// keeps its exact parameters.
pub fn adapt_head<T: Scalar>(net: &LayerGraph<T>, k: usize, seed: u64) -> Result<LayerGraph<T>> {
    if k < 2 {
        return Err(Error::invalid(format!("cannot adapt a head to {} classes", k)));
    }
    let layers = net.layers();
    let n = layers.len();
    if n < 2
        || !matches!(layers[n - 1], LayerSpec::Softmax)
        || !matches!(layers[n - 2], LayerSpec::Fc { .. })
    {
        return Err(Error::invalid("network must end in an FC + softmax head"));
    }
    let mut new_layers = layers.to_vec();
    let (in_dim, trainable) = match new_layers[n - 2] {
        LayerSpec::Fc {
            in_dim, trainable, ..
        } => (in_dim, trainable),
        _ => unreachable!("checked above"),
    };
    new_layers[n - 2] = LayerSpec::Fc {
        in_dim,
        out_dim: k,
        trainable,
    };
    let mut out = LayerGraph::new(net.input_shape().clone(), new_layers, seed)?;
    let params: Vec<usize> = out.param_layer_indices();
    let last = *params.last().expect("head FC exists");
    for idx in params {
        if idx != last {
            *out.params_at_mut(idx).expect("param layer") =
                net.params_at(idx).expect("same layout").clone();
        }
    }
    Ok(out)
}

/// Writes the per-epoch log as CSV with columns epoch, loss, f1_val, lr.
pub fn write_log_csv(path: &Path, log: &[EpochStats]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::data(format!("writing {}: {}", path.display(), e)))?;
    w.write_record(["epoch", "loss", "f1_val", "lr"])
        .map_err(|e| Error::data(format!("writing {}: {}", path.display(), e)))?;
    for row in log {
        w.write_record([
            row.epoch.to_string(),
            format!("{:.6}", row.loss),
            format!("{:.6}", row.f1_val),
            format!("{:.8}", row.lr),
        ])
        .map_err(|e| Error::data(format!("writing {}: {}", path.display(), e)))?;
    }
    w.flush()
        .map_err(|e| Error::data(format!("writing {}: {}", path.display(), e)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{FusionMode, Profile};
    use crate::tensor::Tensor;

    #[test]
    fn schedule_hits_paper_checkpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr(0), 1e-4);
        assert_eq!(cfg.lr(6), 5e-5);
        assert_eq!(cfg.lr(12), 0.0);
        assert_eq!(cfg.lr(20), 0.0);
    }

    #[test]
    fn plateau_trace_stops_after_fifth_epoch() {
        let mut t = PlateauTracker::new(1e-4, 3);
        let trace = [0.50, 0.60, 0.60, 0.60, 0.60];
        let mut stopped_at = None;
        for (e, &v) in trace.iter().enumerate() {
            let (_, stop) = t.observe(e, v);
            if stop {
                stopped_at = Some(e);
                break;
            }
        }
        assert_eq!(stopped_at, Some(4));
        assert_eq!(t.best_epoch(), 1);
    }

    #[test]
    fn plateau_requires_more_than_threshold() {
        let mut t = PlateauTracker::new(1e-4, 3);
        assert!(t.observe(0, 0.5).0);
        // Exactly +1e-4 is not an improvement under the strict rule.
        assert!(!t.observe(1, 0.5 + 1e-4).0);
        assert!(t.observe(2, 0.5 + 2e-4).0);
    }

    fn toy_examples(n: usize, seed: u64) -> Vec<ClassExample> {
        // Class 1 = bright top half; class 0 = bright bottom half.
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let class = i % 2;
                let mut t = Tensor::zeros([3, 16, 16]);
                for c in 0..3 {
                    for y in 0..16 {
                        for x in 0..16 {
                            let bright = if class == 1 { y < 8 } else { y >= 8 };
                            let base: f32 = if bright { 0.9 } else { 0.1 };
                            t.data_mut()[(c * 16 + y) * 16 + x] =
                                base + rng.random_range(-0.05..0.05);
                        }
                    }
                }
                ClassExample {
                    input: NetInput::Single(t),
                    class,
                }
            })
            .collect()
    }

    fn toy_profile() -> Profile {
        let mut p = Profile::tiny(2);
        p.input_side = 16;
        p.conv_blocks = vec![vec![4], vec![8]];
        p.hidden_fcs = vec![16];
        p
    }

    #[test]
    fn detector_learns_separable_toy_task() {
        let net = Network::for_fusion(&toy_profile(), FusionMode::RgbOnly, 1).unwrap();
        let train = toy_examples(32, 1);
        let val = toy_examples(16, 2);
        let cfg = TrainConfig {
            lr0: 2e-3,
            seed: 7,
            ..TrainConfig::default()
        };
        let out = train_detector(net, &train, &val, &cfg).unwrap();
        assert!(out.best_f1() >= 0.95, "best F1 = {}", out.best_f1());
        // The snapshot's metric equals the maximum in the log.
        let max = out.log.iter().map(|r| r.f1_val).fold(f64::MIN, f64::max);
        assert_eq!(out.best_f1(), max);
        assert_eq!(out.log[0].lr, cfg.lr(0));
    }

    #[test]
    fn training_is_deterministic() {
        let make = || {
            let net = Network::for_fusion(&toy_profile(), FusionMode::RgbOnly, 3).unwrap();
            let train = toy_examples(16, 5);
            let val = toy_examples(8, 6);
            let cfg = TrainConfig {
                max_epochs: 3,
                seed: 11,
                ..TrainConfig::default()
            };
            train_detector(net, &train, &val, &cfg).unwrap()
        };
        let (a, b) = (make(), make());
        assert_eq!(a.log, b.log);
        let (pa, pb) = (
            a.net.as_single().unwrap().params_at(0).unwrap(),
            b.net.as_single().unwrap().params_at(0).unwrap(),
        );
        assert_eq!(pa.w, pb.w);
    }

    #[test]
    fn empty_data_rejected() {
        let net = Network::for_fusion(&toy_profile(), FusionMode::RgbOnly, 1).unwrap();
        let val = toy_examples(4, 0);
        assert!(train_detector(net, &[], &val, &TrainConfig::default()).is_err());
    }

    #[test]
    fn zero_weight_net_predicts_half() {
        let mut net = Network::for_fusion(&toy_profile(), FusionMode::RgbOnly, 1).unwrap();
        let g = net.as_single_mut().unwrap();
        for idx in g.param_layer_indices() {
            let p = g.params_at_mut(idx).unwrap();
            p.w.iter_mut().for_each(|v| *v = 0.0);
            p.b.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = NetInput::Single(Tensor::full([3, 16, 16], 0.3f32));
        assert_eq!(predict_frame(&net, &x).unwrap(), 0.5);
    }

    #[test]
    fn adapt_head_keeps_lower_layers_bit_identical() {
        let net: LayerGraph<f32> = {
            let n = Network::for_fusion(&toy_profile(), FusionMode::RgbOnly, 9).unwrap();
            n.as_single().unwrap().clone()
        };
        let adapted = adapt_head(&net, 22, 4).unwrap();
        let params = net.param_layer_indices();
        let last = *params.last().unwrap();
        for &idx in &params {
            if idx == last {
                continue;
            }
            let (a, b) = (net.params_at(idx).unwrap(), adapted.params_at(idx).unwrap());
            assert_eq!(a.w, b.w);
            assert_eq!(a.b, b.b);
        }
        let out = adapted
            .forward(&Tensor::full([3, 16, 16], 0.2f32))
            .unwrap();
        assert_eq!(out.data().len(), 22);
        let sum: f32 = out.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
        assert!(adapt_head(&net, 1, 0).is_err());
    }

    #[test]
    fn log_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let log = vec![EpochStats {
            epoch: 0,
            loss: 0.7,
            f1_val: 0.5,
            lr: 1e-4,
        }];
        write_log_csv(&path, &log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,loss,f1_val,lr\n"));
        assert!(text.contains("0,0.700000,0.500000,0.00010000"));
    }
}
