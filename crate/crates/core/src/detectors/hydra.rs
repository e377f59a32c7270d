//! HydraNet: one frozen convolutional trunk shared by independent
//! per-AU fully-connected heads.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::{
    chain_output_shape, section_seed, ArchDescriptor, LayerGraph, LayerShape, LayerSpec,
    NetInput, NetPlan, Network, Profile,
};
use crate::tensor::Tensor;
use crate::TrainScalar;

use super::au::AuCode;
use super::train::{train_detector, ClassExample, EpochStats, TrainConfig};

/// Shared frozen trunk (all conv blocks through flatten) plus one
/// FC head per action unit. Heads are disjoint parameter sets; the
/// trunk is never touched by head training.
#[derive(Debug, Clone)]
pub struct HydraNet {
    profile: Profile,
    trunk: LayerGraph<TrainScalar>,
    heads: BTreeMap<AuCode, LayerGraph<TrainScalar>>,
}

/// Splits the HydraNet plan into (input, trunk layers, head layers).
fn split_plan(profile: &Profile) -> (LayerShape, Vec<LayerSpec>, Vec<LayerSpec>) {
    let NetPlan::Single { input, layers } = NetPlan::for_arch(profile, ArchDescriptor::HydraNet)
    else {
        unreachable!("hydra plan is single-trunk")
    };
    let flat = layers
        .iter()
        .position(|l| matches!(l, LayerSpec::Flatten))
        .expect("plan contains a flatten");
    let trunk = layers[..=flat].to_vec();
    let head = layers[flat + 1..].to_vec();
    (input, trunk, head)
}

impl HydraNet {
    pub fn new(profile: &Profile, aus: &[AuCode], seed: u64) -> Result<HydraNet> {
        let (input, trunk_layers, head_layers) = split_plan(profile);
        let trunk = LayerGraph::new(input.clone(), trunk_layers.clone(), section_seed(seed, 0))?;
        let feat = chain_output_shape(&input, &trunk_layers)?;
        let mut heads = BTreeMap::new();
        for &au in aus {
            if heads.contains_key(&au) {
                return Err(Error::invalid(format!("duplicate head for {}", au)));
            }
            let head = LayerGraph::new(
                feat.clone(),
                head_layers.clone(),
                section_seed(seed, 1 + au.value() as u64),
            )?;
            heads.insert(au, head);
        }
        Ok(HydraNet {
            profile: profile.clone(),
            trunk,
            heads,
        })
    }

    /// Layer specs of one head; its parameter sum is the per-AU
    /// learnable budget.
    pub fn head_template(profile: &Profile) -> Vec<LayerSpec> {
        split_plan(profile).2
    }

    /// Builds a hydra whose trunk convolutions are copied from the conv
    /// prefix of a donor graph over the same profile (typically a
    /// pretrained expression classifier). Heads are fresh.
    pub fn from_pretrained(
        profile: &Profile,
        donor: &LayerGraph<TrainScalar>,
        aus: &[AuCode],
        seed: u64,
    ) -> Result<HydraNet> {
        let mut hydra = HydraNet::new(profile, aus, seed)?;
        for idx in hydra.trunk.param_layer_indices() {
            let matches = donor
                .layers()
                .get(idx)
                .is_some_and(|l| l.same_shape(&hydra.trunk.layers()[idx]));
            if !matches {
                return Err(Error::invalid(
                    "donor network does not share the trunk layout",
                ));
            }
            *hydra.trunk.params_at_mut(idx).expect("param layer") =
                donor.params_at(idx).expect("matching layer").clone();
        }
        Ok(hydra)
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn trunk(&self) -> &LayerGraph<TrainScalar> {
        &self.trunk
    }

    pub fn aus(&self) -> Vec<AuCode> {
        self.heads.keys().copied().collect()
    }

    pub fn head(&self, au: AuCode) -> Result<&LayerGraph<TrainScalar>> {
        self.heads
            .get(&au)
            .ok_or_else(|| Error::invalid(format!("no head for {}", au)))
    }

    /// Adds a freshly initialized head. Existing heads and the trunk
    /// are untouched.
    pub fn grow_head(&mut self, au: AuCode, seed: u64) -> Result<()> {
        if self.heads.contains_key(&au) {
            return Err(Error::invalid(format!("head for {} already present", au)));
        }
        let (input, trunk_layers, head_layers) = split_plan(&self.profile);
        let feat = chain_output_shape(&input, &trunk_layers)?;
        self.heads
            .insert(au, LayerGraph::new(feat, head_layers, seed)?);
        Ok(())
    }

    pub fn remove_head(&mut self, au: AuCode) -> Result<LayerGraph<TrainScalar>> {
        self.heads
            .remove(&au)
            .ok_or_else(|| Error::invalid(format!("no head for {}", au)))
    }

    /// Trunk features for one frame input.
    pub fn features(&self, x: &Tensor<TrainScalar>) -> Result<Tensor<TrainScalar>> {
        self.trunk.forward(x)
    }

    /// Probability of AU presence for one frame.
    pub fn predict(&self, au: AuCode, x: &Tensor<TrainScalar>) -> Result<TrainScalar> {
        let out = self.head(au)?.forward(&self.features(x)?)?;
        Ok(out.data()[1])
    }

    /// One full single-chain network equivalent to trunk + head, for
    /// checkpointing through the standard container.
    pub fn assemble(&self, au: AuCode) -> Result<LayerGraph<TrainScalar>> {
        let head = self.head(au)?;
        let (input, trunk_layers, head_layers) = split_plan(&self.profile);
        let mut layers = trunk_layers.clone();
        layers.extend(head_layers);
        let mut full = LayerGraph::zeroed(input, layers)?;
        let offset = trunk_layers.len();
        for idx in self.trunk.param_layer_indices() {
            *full.params_at_mut(idx).expect("same layout") =
                self.trunk.params_at(idx).expect("param layer").clone();
        }
        for idx in head.param_layer_indices() {
            *full.params_at_mut(offset + idx).expect("same layout") =
                head.params_at(idx).expect("param layer").clone();
        }
        Ok(full)
    }

    /// Rebuilds a hydra from assembled per-AU chains (e.g. loaded
    /// checkpoints). All trunk sections must be bit-identical.
    pub fn from_assembled(
        profile: &Profile,
        chains: BTreeMap<AuCode, LayerGraph<TrainScalar>>,
    ) -> Result<HydraNet> {
        let (input, trunk_layers, head_layers) = split_plan(profile);
        let offset = trunk_layers.len();
        let mut trunk: Option<LayerGraph<TrainScalar>> = None;
        let mut heads = BTreeMap::new();
        for (au, chain) in chains {
            let mut expect = trunk_layers.clone();
            expect.extend(head_layers.clone());
            if chain.layers() != expect.as_slice() {
                return Err(Error::invalid(format!(
                    "{} chain does not match the hydra plan",
                    au
                )));
            }
            let mut t = LayerGraph::zeroed(input.clone(), trunk_layers.clone())?;
            for idx in t.param_layer_indices() {
                *t.params_at_mut(idx).expect("param layer") =
                    chain.params_at(idx).expect("same layout").clone();
            }
            match &trunk {
                None => trunk = Some(t),
                Some(prev) => {
                    for idx in prev.param_layer_indices() {
                        let (a, b) = (prev.params_at(idx).unwrap(), t.params_at(idx).unwrap());
                        if a.w != b.w || a.b != b.b {
                            return Err(Error::invalid(format!(
                                "{} trunk differs from the shared trunk",
                                au
                            )));
                        }
                    }
                }
            }
            let feat = chain_output_shape(&input, &trunk_layers)?;
            let mut h = LayerGraph::zeroed(feat, head_layers.clone())?;
            for idx in h.param_layer_indices() {
                *h.params_at_mut(idx).expect("param layer") =
                    chain.params_at(offset + idx).expect("same layout").clone();
            }
            heads.insert(au, h);
        }
        let trunk = trunk.ok_or_else(|| Error::invalid("no chains supplied"))?;
        Ok(HydraNet {
            profile: profile.clone(),
            trunk,
            heads,
        })
    }
}

/// Trains one head on frame examples: trunk features are computed once
/// (the trunk is frozen), then the head alone is optimized with the
/// standard recipe. Returns the training log.
pub fn train_hydra_head(
    hydra: &mut HydraNet,
    au: AuCode,
    train: &[ClassExample],
    val: &[ClassExample],
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    let head = hydra.head(au)?.clone();
    let to_features = |examples: &[ClassExample]| -> Result<Vec<ClassExample>> {
        examples
            .par_iter()
            .map(|ex| {
                let NetInput::Single(x) = &ex.input else {
                    return Err(Error::invalid("hydra consumes single-frame inputs"));
                };
                Ok(ClassExample {
                    input: NetInput::Single(hydra.features(x)?),
                    class: ex.class,
                })
            })
            .collect()
    };
    let feat_train = to_features(train)?;
    let feat_val = to_features(val)?;
    let outcome = train_detector(Network::Single(head), &feat_train, &feat_val, cfg)?;
    let trained = outcome
        .net
        .as_single()
        .expect("head stays single")
        .clone();
    hydra.heads.insert(au, trained);
    Ok(outcome.log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::AuSet;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_profile() -> Profile {
        let mut p = Profile::tiny(2);
        p.input_side = 16;
        p.conv_blocks = vec![vec![4], vec![8]];
        p.hidden_fcs = vec![16];
        p
    }

    fn aus(codes: &[u8]) -> Vec<AuCode> {
        codes
            .iter()
            .map(|&c| AuCode::new(c, AuSet::Synthetic).unwrap())
            .collect()
    }

    fn head_params(h: &LayerGraph<TrainScalar>) -> Vec<Vec<TrainScalar>> {
        h.param_layer_indices()
            .into_iter()
            .map(|i| h.params_at(i).unwrap().w.clone())
            .collect()
    }

    #[test]
    fn trunk_is_frozen_and_heads_disjoint() {
        let h = HydraNet::new(&toy_profile(), &aus(&[1, 12]), 3).unwrap();
        assert_eq!(h.trunk().param_count(true), 0);
        assert!(h.trunk().param_count(false) > 0);
        let h1 = head_params(h.head(aus(&[1])[0]).unwrap());
        let h12 = head_params(h.head(aus(&[12])[0]).unwrap());
        assert_ne!(h1, h12);
    }

    #[test]
    fn vgg16_head_matches_learnable_budget() {
        let template = HydraNet::head_template(&Profile::vgg16(2));
        let total: u64 = template.iter().map(|l| l.param_count()).sum();
        assert_eq!(total, 119_554_050);
    }

    #[test]
    fn grow_head_leaves_existing_predictions_bit_identical() {
        let [au1, au12, au24] = [aus(&[1])[0], aus(&[12])[0], aus(&[24])[0]];
        let mut h = HydraNet::new(&toy_profile(), &[au1, au12], 3).unwrap();
        let x = Tensor::full([3, 16, 16], 0.4f32);
        let before = (h.predict(au1, &x).unwrap(), h.predict(au12, &x).unwrap());
        let saved = (head_params(h.head(au1).unwrap()), head_params(h.head(au12).unwrap()));

        h.grow_head(au24, 77).unwrap();
        assert_eq!(h.aus(), vec![au1, au12, au24]);
        let after = (h.predict(au1, &x).unwrap(), h.predict(au12, &x).unwrap());
        assert_eq!(before, after);
        assert_eq!(
            saved,
            (head_params(h.head(au1).unwrap()), head_params(h.head(au12).unwrap()))
        );
        assert!(h.grow_head(au24, 77).is_err());

        // Grow then remove restores the original head set.
        h.remove_head(au24).unwrap();
        assert_eq!(h.aus(), vec![au1, au12]);
    }

    fn toy_examples(n: usize, seed: u64) -> Vec<ClassExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let class = i % 2;
                let mut t = Tensor::zeros([3, 16, 16]);
                for (j, v) in t.data_mut().iter_mut().enumerate() {
                    let y = (j / 16) % 16;
                    let bright = if class == 1 { y < 8 } else { y >= 8 };
                    *v = if bright { 0.9 } else { 0.1 } + rng.random_range(-0.05..0.05);
                }
                ClassExample {
                    input: NetInput::Single(t),
                    class,
                }
            })
            .collect()
    }

    #[test]
    fn head_training_never_touches_trunk_or_other_heads() {
        let [au1, au12] = [aus(&[1])[0], aus(&[12])[0]];
        let mut h = HydraNet::new(&toy_profile(), &[au1, au12], 5).unwrap();
        let trunk_before: Vec<Vec<TrainScalar>> = head_params(h.trunk());
        let other_before = head_params(h.head(au12).unwrap());
        let target_before = head_params(h.head(au1).unwrap());

        let cfg = TrainConfig {
            lr0: 2e-3,
            max_epochs: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let log = train_hydra_head(&mut h, au1, &toy_examples(24, 1), &toy_examples(12, 2), &cfg)
            .unwrap();
        assert!(!log.is_empty());
        assert_eq!(head_params(h.trunk()), trunk_before);
        assert_eq!(head_params(h.head(au12).unwrap()), other_before);
        assert_ne!(head_params(h.head(au1).unwrap()), target_before);
    }

    #[test]
    fn assembled_chain_matches_two_stage_prediction() {
        let au12 = aus(&[12])[0];
        let h = HydraNet::new(&toy_profile(), &[au12], 8).unwrap();
        let x = Tensor::full([3, 16, 16], 0.35f32);
        let direct = h.predict(au12, &x).unwrap();
        let full = h.assemble(au12).unwrap();
        assert_eq!(full.forward(&x).unwrap().data()[1], direct);

        // Round trip through assembled chains.
        let mut chains = BTreeMap::new();
        chains.insert(au12, full);
        let back = HydraNet::from_assembled(&toy_profile(), chains).unwrap();
        assert_eq!(back.predict(au12, &x).unwrap(), direct);
    }
}
