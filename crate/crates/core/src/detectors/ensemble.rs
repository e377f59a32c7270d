//! AuNets ensemble: one fully independent network per action unit.
//! Networks share no parameters, so training one AU can never disturb
//! another.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::net::{section_seed, FusionMode, NetInput, Network, Profile};
use crate::TrainScalar;

use super::au::AuCode;
use super::train::{predict_frame, train_detector, ClassExample, EpochStats, TrainConfig};

#[derive(Debug, Clone)]
pub struct AuNetEnsemble {
    profile: Profile,
    mode: FusionMode,
    nets: BTreeMap<AuCode, Network<TrainScalar>>,
}

impl AuNetEnsemble {
    pub fn new(profile: &Profile, mode: FusionMode, aus: &[AuCode], seed: u64) -> Result<Self> {
        let mut nets = BTreeMap::new();
        for &au in aus {
            if nets.contains_key(&au) {
                return Err(Error::invalid(format!("duplicate detector for {}", au)));
            }
            let net = Network::for_fusion(profile, mode, section_seed(seed, au.value() as u64))?;
            nets.insert(au, net);
        }
        Ok(AuNetEnsemble {
            profile: profile.clone(),
            mode,
            nets,
        })
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn mode(&self) -> FusionMode {
        self.mode
    }

    pub fn aus(&self) -> Vec<AuCode> {
        self.nets.keys().copied().collect()
    }

    pub fn net(&self, au: AuCode) -> Result<&Network<TrainScalar>> {
        self.nets
            .get(&au)
            .ok_or_else(|| Error::invalid(format!("no detector for {}", au)))
    }

    pub fn net_mut(&mut self, au: AuCode) -> Result<&mut Network<TrainScalar>> {
        self.nets
            .get_mut(&au)
            .ok_or_else(|| Error::invalid(format!("no detector for {}", au)))
    }

    /// Replaces one detector wholesale (e.g. with a loaded checkpoint).
    pub fn install(&mut self, au: AuCode, net: Network<TrainScalar>) {
        self.nets.insert(au, net);
    }

    /// Trains the detector for one AU with the standard recipe; every
    /// other detector is left bit-identical.
    pub fn train_one(
        &mut self,
        au: AuCode,
        train: &[ClassExample],
        val: &[ClassExample],
        cfg: &TrainConfig,
    ) -> Result<Vec<EpochStats>> {
        let net = self.net(au)?.clone();
        let outcome = train_detector(net, train, val, cfg)?;
        self.nets.insert(au, outcome.net);
        Ok(outcome.log)
    }

    pub fn predict(&self, au: AuCode, input: &NetInput<TrainScalar>) -> Result<TrainScalar> {
        predict_frame(self.net(au)?, input)
    }
}
