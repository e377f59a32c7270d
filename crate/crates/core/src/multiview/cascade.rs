//! Two-stage inference over one video: classify the viewpoint, route
//! to that view's detectors, score every frame per AU, then smooth.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::detectors::{predict_frame, AuCode, AuNetEnsemble};
use crate::error::{Error, Result};
use crate::motion::{build_bundle, embed_flow, first_frame_policy};
use crate::net::{FusionMode, NetInput, Network};
use crate::temporal::{DetectionSequence, DEFAULT_WINDOW};
use crate::tensor::{crop_resize, FaceBox, Tensor};
use crate::TrainScalar;

use super::classifier::{
    classify_view_video, ViewAggregation, ViewClassifier, DEFAULT_VIEW_STRIDE,
};
use super::Viewpoint;

/// Anything that scores one assembled frame input for one AU. Detector
/// banks are read-only, so per-AU fan-out can run in parallel.
pub trait FramePredictor: Sync {
    fn aus(&self) -> Vec<AuCode>;
    fn predict(&self, au: AuCode, input: &NetInput<TrainScalar>) -> Result<TrainScalar>;
}

impl FramePredictor for BTreeMap<AuCode, Network<TrainScalar>> {
    fn aus(&self) -> Vec<AuCode> {
        self.keys().copied().collect()
    }

    fn predict(&self, au: AuCode, input: &NetInput<TrainScalar>) -> Result<TrainScalar> {
        let net = self
            .get(&au)
            .ok_or_else(|| Error::invalid(format!("no detector for {}", au)))?;
        predict_frame(net, input)
    }
}

impl FramePredictor for AuNetEnsemble {
    fn aus(&self) -> Vec<AuCode> {
        AuNetEnsemble::aus(self)
    }

    fn predict(&self, au: AuCode, input: &NetInput<TrainScalar>) -> Result<TrainScalar> {
        AuNetEnsemble::predict(self, au, input)
    }
}

impl<P: FramePredictor + ?Sized> FramePredictor for &P {
    fn aus(&self) -> Vec<AuCode> {
        (**self).aus()
    }

    fn predict(&self, au: AuCode, input: &NetInput<TrainScalar>) -> Result<TrainScalar> {
        (**self).predict(au, input)
    }
}

/// Fixed-output stand-in detector, for wiring tests.
#[derive(Debug, Clone)]
pub struct ConstantPredictor {
    pub aus: Vec<AuCode>,
    pub value: TrainScalar,
}

impl FramePredictor for ConstantPredictor {
    fn aus(&self) -> Vec<AuCode> {
        self.aus.clone()
    }

    fn predict(&self, au: AuCode, _input: &NetInput<TrainScalar>) -> Result<TrainScalar> {
        if !self.aus.contains(&au) {
            return Err(Error::invalid(format!("no detector for {}", au)));
        }
        Ok(self.value)
    }
}

#[derive(Debug, Clone)]
pub struct CascadeConfig {
    /// Fusion mode the detectors were trained under.
    pub mode: FusionMode,
    /// Square input side the detectors consume.
    pub side: usize,
    /// Median smoothing window.
    pub window: usize,
    /// Frame sub-sampling stride for view classification.
    pub view_stride: usize,
    pub aggregation: ViewAggregation,
}

impl CascadeConfig {
    pub fn new(mode: FusionMode, side: usize) -> Self {
        CascadeConfig {
            mode,
            side,
            window: DEFAULT_WINDOW,
            view_stride: DEFAULT_VIEW_STRIDE,
            aggregation: ViewAggregation::MeanThenArgmax,
        }
    }
}

/// Everything the cascade produces for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoDetections {
    pub video_id: String,
    pub view: Viewpoint,
    /// Per-sampled-frame view distributions from the classifier stage.
    pub view_distributions: Vec<Vec<TrainScalar>>,
    pub tracks: BTreeMap<AuCode, DetectionSequence>,
}

/// Runs the full cascade on one video. `route` is called once with the
/// predicted view and must hand back that view's detector bank.
pub fn detect_sequence<P, R>(
    classifier: &ViewClassifier,
    route: R,
    video_id: &str,
    frames: &[Tensor<TrainScalar>],
    boxes: &[FaceBox],
    cfg: &CascadeConfig,
) -> Result<VideoDetections>
where
    P: FramePredictor,
    R: FnOnce(Viewpoint) -> Result<P>,
{
    if frames.is_empty() {
        return Err(Error::invalid("video must have at least one frame"));
    }
    if frames.len() != boxes.len() {
        return Err(Error::shape(format!(
            "{} frames but {} face boxes",
            frames.len(),
            boxes.len()
        )));
    }

    // Stage 1: optical flow (when the fusion mode consumes it).
    let flows = if cfg.mode.uses_flow() {
        Some(first_frame_policy(frames)?)
    } else {
        None
    };

    // Stage 2: viewpoint from sub-sampled classifier-sized crops.
    let view_crops: Vec<Tensor<TrainScalar>> = frames
        .iter()
        .zip(boxes)
        .map(|(f, b)| crop_resize(f, *b, classifier.input_side()))
        .collect::<Result<_>>()?;
    let (view, view_distributions) =
        classify_view_video(classifier, &view_crops, cfg.view_stride, cfg.aggregation)?;

    // Stage 3: the detector ensemble for that view.
    let bank = route(view)?;

    // Stage 4: per-frame inputs, then per-AU tracks with smoothing.
    let inputs: Vec<NetInput<TrainScalar>> = frames
        .iter()
        .zip(boxes)
        .enumerate()
        .map(|(i, (frame, bx))| {
            let rgb = if cfg.mode.uses_rgb() {
                Some(crop_resize(frame, *bx, cfg.side)?)
            } else {
                None
            };
            let flow = match &flows {
                Some(fields) => Some(embed_flow(&fields[i], *bx, cfg.side)?),
                None => None,
            };
            build_bundle(rgb, flow, cfg.mode)
        })
        .collect::<Result<_>>()?;

    let tracks: BTreeMap<AuCode, DetectionSequence> = bank
        .aus()
        .into_par_iter()
        .map(|au| {
            let probs: Vec<TrainScalar> = inputs
                .iter()
                .map(|inp| bank.predict(au, inp))
                .collect::<Result<_>>()?;
            Ok((au, DetectionSequence::from_probs(au, probs, cfg.window)?))
        })
        .collect::<Result<_>>()?;

    Ok(VideoDetections {
        video_id: video_id.to_string(),
        view,
        view_distributions,
        tracks,
    })
}

/// One line of the prediction CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub video_id: String,
    pub frame: usize,
    pub predicted_view: Viewpoint,
    pub au: AuCode,
    pub prob_raw: TrainScalar,
    pub prob_smoothed: TrainScalar,
    pub decision_raw: bool,
    pub decision_smoothed: bool,
}

pub fn prediction_rows(video: &VideoDetections) -> Vec<PredictionRow> {
    let mut rows = Vec::new();
    for (au, seq) in &video.tracks {
        for frame in 0..seq.len() {
            rows.push(PredictionRow {
                video_id: video.video_id.clone(),
                frame,
                predicted_view: video.view,
                au: *au,
                prob_raw: seq.probs_raw[frame],
                prob_smoothed: seq.probs_smoothed[frame],
                decision_raw: seq.decisions_raw[frame],
                decision_smoothed: seq.decisions_smoothed[frame],
            });
        }
    }
    rows
}

const PREDICTION_HEADER: [&str; 8] = [
    "video_id",
    "frame",
    "predicted_view",
    "au",
    "prob_raw",
    "prob_smoothed",
    "decision_raw",
    "decision_smoothed",
];

pub fn write_predictions_csv(path: &Path, videos: &[VideoDetections]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::data(format!("writing {}: {}", path.display(), e)))?;
    w.write_record(PREDICTION_HEADER)
        .map_err(|e| Error::data(e.to_string()))?;
    for video in videos {
        for row in prediction_rows(video) {
            w.write_record([
                row.video_id.as_str(),
                &row.frame.to_string(),
                row.predicted_view.as_str(),
                &row.au.label(),
                &format!("{:.6}", row.prob_raw),
                &format!("{:.6}", row.prob_smoothed),
                if row.decision_raw { "1" } else { "0" },
                if row.decision_smoothed { "1" } else { "0" },
            ])
            .map_err(|e| Error::data(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions_csv(path: &Path, set: crate::detectors::AuSet) -> Result<Vec<PredictionRow>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::data(format!("reading {}: {}", path.display(), e)))?;
    let headers = r.headers().map_err(|e| Error::data(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != PREDICTION_HEADER {
        return Err(Error::data(format!(
            "{} must have columns {:?}, found {:?}",
            path.display(),
            PREDICTION_HEADER,
            headers
        )));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
        let line = rec
            .position()
            .map(|p| p.line().to_string())
            .unwrap_or_default();
        let cell = |i: usize| -> Result<&str> {
            rec.get(i)
                .ok_or_else(|| Error::data(format!("{}:{}: short record", path.display(), line)))
        };
        let bad = |what: &str| Error::data(format!("{}:{}: bad {}", path.display(), line, what));
        let decision = |s: &str, what: &str| match s {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(bad(what)),
        };
        rows.push(PredictionRow {
            video_id: cell(0)?.to_string(),
            frame: cell(1)?.parse().map_err(|_| bad("frame"))?,
            predicted_view: Viewpoint::parse(cell(2)?)?,
            au: AuCode::parse(cell(3)?, set)?,
            prob_raw: cell(4)?.parse().map_err(|_| bad("prob_raw"))?,
            prob_smoothed: cell(5)?.parse().map_err(|_| bad("prob_smoothed"))?,
            decision_raw: decision(cell(6)?, "decision_raw")?,
            decision_smoothed: decision(cell(7)?, "decision_smoothed")?,
        });
    }
    Ok(rows)
}
