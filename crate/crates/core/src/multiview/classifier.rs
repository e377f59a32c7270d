//! 9-way view classifier over face crops, with video-level aggregation
//! of the per-frame softmax distributions.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{
    load_network, save_network, CheckpointMeta, FusionMode, LayerGraph, LayerShape, NetPlan,
    Network, Profile, ProfileName,
};
use crate::tensor::Tensor;
use crate::TrainScalar;

use super::Viewpoint;

/// Frames sampled for view classification: every 10th by default.
pub const DEFAULT_VIEW_STRIDE: usize = 10;

/// How per-frame view distributions become one video-level decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ViewAggregation {
    /// Mean of the distributions, then argmax (default).
    #[default]
    MeanThenArgmax,
    /// Per-frame argmax, then majority vote.
    MajorityVote,
}

/// A softmax network with one output slot per viewpoint. The layer
/// recipe is the standard profile with the head widened to 9 classes.
#[derive(Debug, Clone)]
pub struct ViewClassifier {
    name: ProfileName,
    graph: LayerGraph<TrainScalar>,
}

impl ViewClassifier {
    pub fn new(profile: &Profile, seed: u64) -> Result<ViewClassifier> {
        let mut p = profile.clone();
        p.k_outputs = Viewpoint::COUNT;
        let NetPlan::Single { input, layers } = NetPlan::for_fusion(&p, FusionMode::RgbOnly)
        else {
            unreachable!("rgb plan is single-stream")
        };
        Ok(ViewClassifier {
            name: profile.name,
            graph: LayerGraph::new(input, layers, seed)?,
        })
    }

    /// Wraps an existing graph (e.g. a trained network), validating the
    /// 9-way head and square RGB input.
    pub fn from_parts(name: ProfileName, graph: LayerGraph<TrainScalar>) -> Result<ViewClassifier> {
        if graph.output_shape() != LayerShape::Flat(Viewpoint::COUNT) {
            return Err(Error::invalid(format!(
                "view classifier needs a {}-way head, found {:?}",
                Viewpoint::COUNT,
                graph.output_shape()
            )));
        }
        match graph.input_shape() {
            LayerShape::Map { c: 3, h, w } if h == w => {}
            other => {
                return Err(Error::invalid(format!(
                    "view classifier consumes square RGB crops, found {:?}",
                    other
                )))
            }
        }
        Ok(ViewClassifier { name, graph })
    }

    pub fn profile_name(&self) -> ProfileName {
        self.name
    }

    pub fn graph(&self) -> &LayerGraph<TrainScalar> {
        &self.graph
    }

    pub fn into_graph(self) -> LayerGraph<TrainScalar> {
        self.graph
    }

    pub fn input_side(&self) -> usize {
        match self.graph.input_shape() {
            LayerShape::Map { h, .. } => *h,
            LayerShape::Flat(_) => unreachable!("validated on construction"),
        }
    }

    /// Softmax distribution over the nine views for one crop.
    pub fn classify_frame(&self, crop: &Tensor<TrainScalar>) -> Result<Vec<TrainScalar>> {
        Ok(self.graph.forward(crop)?.data().to_vec())
    }

    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        let meta = CheckpointMeta {
            profile: self.name.as_str().to_string(),
            fusion: FusionMode::RgbOnly,
            seed,
        };
        save_network(path, &Network::Single(self.graph.clone()), &meta)
    }

    pub fn load(path: &Path) -> Result<ViewClassifier> {
        let (net, meta) = load_network(path)?;
        let name = ProfileName::parse(&meta.profile)?;
        let graph = match net {
            Network::Single(g) => g,
            Network::TwoStream(_) => {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    reason: "view classifier checkpoints are single-stream".into(),
                })
            }
        };
        ViewClassifier::from_parts(name, graph)
    }
}

/// Argmax with ties broken toward the lowest index.
fn argmax_lowest(values: &[TrainScalar]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Collapses per-frame distributions into a single view decision.
pub fn aggregate_views(
    dists: &[Vec<TrainScalar>],
    aggregation: ViewAggregation,
) -> Result<Viewpoint> {
    if dists.is_empty() {
        return Err(Error::invalid("no view distributions to aggregate"));
    }
    for d in dists {
        if d.len() != Viewpoint::COUNT {
            return Err(Error::shape(format!(
                "view distribution has {} entries, expected {}",
                d.len(),
                Viewpoint::COUNT
            )));
        }
    }
    let index = match aggregation {
        ViewAggregation::MeanThenArgmax => {
            let mut mean = vec![0.0 as TrainScalar; Viewpoint::COUNT];
            for d in dists {
                for (m, &v) in mean.iter_mut().zip(d) {
                    *m += v;
                }
            }
            let n = dists.len() as TrainScalar;
            for m in &mut mean {
                *m /= n;
            }
            argmax_lowest(&mean)
        }
        ViewAggregation::MajorityVote => {
            let mut votes = [0usize; Viewpoint::COUNT];
            for d in dists {
                votes[argmax_lowest(d)] += 1;
            }
            let mut best = 0;
            for (i, &v) in votes.iter().enumerate().skip(1) {
                if v > votes[best] {
                    best = i;
                }
            }
            best
        }
    };
    Viewpoint::from_index(index)
}

/// Classifies one video: sub-samples the crops at `stride`, classifies
/// each sampled crop, and aggregates. Returns the decision and the
/// sampled per-frame distributions.
pub fn classify_view_video(
    classifier: &ViewClassifier,
    crops: &[Tensor<TrainScalar>],
    stride: usize,
    aggregation: ViewAggregation,
) -> Result<(Viewpoint, Vec<Vec<TrainScalar>>)> {
    if crops.is_empty() {
        return Err(Error::invalid("video must have at least one frame"));
    }
    if stride == 0 {
        return Err(Error::invalid("frame stride must be positive"));
    }
    let dists: Vec<Vec<TrainScalar>> = crops
        .iter()
        .step_by(stride)
        .map(|c| classifier.classify_frame(c))
        .collect::<Result<_>>()?;
    let view = aggregate_views(&dists, aggregation)?;
    Ok((view, dists))
}
