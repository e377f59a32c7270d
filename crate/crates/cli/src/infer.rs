//! `predict` and `saliency`: inference-side commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;

use aunets_core::datakit::{load_dataset, load_frame_image, FrameRecord};
use aunets_core::detectors::{predict_frame, AuSet, FrameCache};
use aunets_core::evalkit::occlusion_saliency;
use aunets_core::multiview::{
    detect_sequence, write_predictions_csv, CascadeConfig, EnsembleIndex, VideoDetections,
    ViewAggregation, ViewClassifier, Viewpoint, DEFAULT_VIEW_STRIDE,
};
use aunets_core::net::{load_network, FusionMode, NetInput, Profile, ProfileName};
use aunets_core::temporal::DEFAULT_WINDOW;
use aunets_core::{TrainScalar, Tensor};

use crate::config::{RunConfig, UsageError};
use crate::train::checkpoint_path;
use crate::CliError;

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    data: PathBuf,
    /// View-classifier checkpoint.
    #[arg(long)]
    view_ckpt: PathBuf,
    /// Checkpoint bank root (as laid out by train-au).
    #[arg(long)]
    bank: PathBuf,
    /// Prediction CSV to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    median_window: Option<usize>,
    /// Frame stride for the view-classification stage.
    #[arg(long)]
    stride: Option<usize>,
    /// View aggregation: mean or vote.
    #[arg(long, default_value = "mean")]
    aggregation: String,
    /// Comma-separated subject ids to predict on (default: all).
    #[arg(long)]
    subjects: Option<String>,
    /// Optionally persist the hash-verified ensemble manifest.
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

/// Groups records by video id, frames sorted.
fn by_video(records: Vec<FrameRecord>) -> BTreeMap<String, Vec<FrameRecord>> {
    let mut videos: BTreeMap<String, Vec<FrameRecord>> = BTreeMap::new();
    for r in records {
        videos.entry(r.video_id.clone()).or_default().push(r);
    }
    for frames in videos.values_mut() {
        frames.sort_by_key(|r| r.frame_index);
    }
    videos
}

fn filter_subjects(
    records: Vec<FrameRecord>,
    include: &Option<String>,
) -> Result<Vec<FrameRecord>, CliError> {
    let Some(list) = include else {
        return Ok(records);
    };
    let wanted: Vec<&str> = list.split(',').map(str::trim).collect();
    let kept: Vec<FrameRecord> = records
        .into_iter()
        .filter(|r| wanted.contains(&r.subject_id.as_str()))
        .collect();
    if kept.is_empty() {
        return Err(UsageError(format!("no frames left after --subjects {}", list)).into());
    }
    Ok(kept)
}

pub fn run_predict(args: PredictArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let name_str = cfg.resolve(args.profile, "profile", "tiny".to_string())?;
    let name = ProfileName::parse(&name_str).map_err(|e| UsageError(e.to_string()))?;
    let profile = Profile::by_name(name, 2);
    let fusion_str = cfg.resolve(args.fusion, "fusion", "rgb_only".to_string())?;
    let fusion = FusionMode::parse(&fusion_str).map_err(|e| UsageError(e.to_string()))?;
    let window = cfg.resolve(args.median_window, "median_window", DEFAULT_WINDOW)?;
    let stride = cfg.resolve(args.stride, "view_stride", DEFAULT_VIEW_STRIDE)?;
    let aggregation = match args.aggregation.as_str() {
        "mean" => ViewAggregation::MeanThenArgmax,
        "vote" => ViewAggregation::MajorityVote,
        other => return Err(UsageError(format!("unknown aggregation {:?}", other)).into()),
    };

    let classifier = ViewClassifier::load(&args.view_ckpt)?;
    let aus = AuSet::Synthetic.aus();
    let mut index = EnsembleIndex::new();
    for view in Viewpoint::all() {
        for &au in &aus {
            let path = checkpoint_path(&args.bank, view, au, fusion);
            if path.is_file() {
                index.register(view, au, &path)?;
            }
        }
    }

    let records = filter_subjects(load_dataset(&args.data)?, &args.subjects)?;
    let mut cascade_cfg = CascadeConfig::new(fusion, profile.input_side);
    cascade_cfg.window = window;
    cascade_cfg.view_stride = stride;
    cascade_cfg.aggregation = aggregation;

    let mut detections: Vec<VideoDetections> = Vec::new();
    for (video_id, frames) in by_video(records) {
        let images: aunets_core::Result<Vec<Tensor<TrainScalar>>> =
            frames.iter().map(|r| load_frame_image(&r.path)).collect();
        let images = images.map_err(|e| CliError::at(format!("video {}", video_id), e))?;
        let boxes: Vec<_> = frames.iter().map(|r| r.face_box).collect();
        let det = detect_sequence(
            &classifier,
            |view| index.route(view, &aus),
            &video_id,
            &images,
            &boxes,
            &cascade_cfg,
        )
        .map_err(|e| CliError::at(format!("video {}", video_id), e))?;
        println!("video {}: view {}", video_id, det.view);
        detections.push(det);
    }

    if let Some(dir) = args.out.parent() {
        std::fs::create_dir_all(dir).map_err(aunets_core::Error::from)?;
    }
    write_predictions_csv(&args.out, &detections)?;
    if let Some(manifest) = &args.manifest_out {
        index.write_manifest(manifest)?;
    }
    let rows: usize = detections
        .iter()
        .map(|d| d.tracks.len() * d.tracks.values().next().map_or(0, |t| t.probs_raw.len()))
        .sum();
    println!(
        "wrote {} rows for {} videos to {}",
        rows,
        detections.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct SaliencyArgs {
    /// Detector checkpoint to probe.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Video id, e.g. S00_V5.
    #[arg(long)]
    video: String,
    /// Frame index within the video.
    #[arg(long)]
    frame: usize,
    /// Occluder side in pixels.
    #[arg(long, default_value_t = 8)]
    patch: usize,
    /// Occluder stride in pixels.
    #[arg(long, default_value_t = 4)]
    stride: usize,
    /// CSV grid to write.
    #[arg(long)]
    out: PathBuf,
}

pub fn run_saliency(args: SaliencyArgs) -> Result<(), CliError> {
    let (net, meta) = load_network(&args.ckpt)?;
    let mode = meta.fusion;
    if mode.is_two_stream() {
        return Err(UsageError(format!(
            "saliency needs a single-input checkpoint; {} is two-stream",
            mode.as_str()
        ))
        .into());
    }
    let name = ProfileName::parse(&meta.profile).map_err(|e| UsageError(e.to_string()))?;
    let side = Profile::by_name(name, 2).input_side;

    let records = load_dataset(&args.data)?;
    let video: Vec<FrameRecord> = records
        .into_iter()
        .filter(|r| r.video_id == args.video)
        .collect();
    if video.is_empty() {
        return Err(UsageError(format!("no video {:?} in the dataset", args.video)).into());
    }
    let record = video
        .iter()
        .find(|r| r.frame_index == args.frame)
        .ok_or_else(|| UsageError(format!("video {} has no frame {}", args.video, args.frame)))?
        .clone();

    let cache = FrameCache::build(&video, mode.uses_flow())?;
    let input = match cache.bundle(&record, mode, side)? {
        NetInput::Single(t) => t,
        NetInput::Pair { .. } => unreachable!("single-input mode checked above"),
    };
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let fill: Vec<TrainScalar> = (0..c)
        .map(|ci| {
            let plane = &input.data()[ci * h * w..(ci + 1) * h * w];
            plane.iter().copied().sum::<TrainScalar>() / (h * w) as TrainScalar
        })
        .collect();

    let grid = occlusion_saliency(
        |x: &Tensor<TrainScalar>| predict_frame(&net, &NetInput::Single(x.clone())),
        &input,
        &fill,
        args.patch,
        args.stride,
    )?;
    write_grid_csv(&args.out, &grid)?;
    println!(
        "saliency grid {}x{} for {} frame {} written to {}",
        grid.shape()[0],
        grid.shape()[1],
        args.video,
        args.frame,
        args.out.display()
    );
    Ok(())
}

fn write_grid_csv(path: &Path, grid: &Tensor<TrainScalar>) -> aunets_core::Result<()> {
    let (h, w) = (grid.shape()[0], grid.shape()[1]);
    let mut text = String::new();
    for y in 0..h {
        let row: Vec<String> = (0..w)
            .map(|x| format!("{:.6}", grid.data()[y * w + x]))
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouping_sorts_frames_within_videos() {
        let rec = |vid: &str, idx: usize| FrameRecord {
            subject_id: "S00".into(),
            video_id: vid.to_string(),
            frame_index: idx,
            path: PathBuf::new(),
            img_w: 8,
            img_h: 8,
            face_box: aunets_core::FaceBox::new(0, 0, 8, 8),
            labels: Default::default(),
            view: Some(Viewpoint::frontal()),
        };
        let videos = by_video(vec![rec("b", 1), rec("a", 2), rec("b", 0), rec("a", 0)]);
        assert_eq!(videos.keys().collect::<Vec<_>>(), ["a", "b"]);
        let idx: Vec<usize> = videos["b"].iter().map(|r| r.frame_index).collect();
        assert_eq!(idx, [0, 1]);
    }

    #[test]
    fn grid_csv_shape_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let grid = Tensor::from_vec([2, 3], vec![0.25f32, 0.5, -1.0, 0.0, 2.0, 0.125]).unwrap();
        write_grid_csv(&path, &grid).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "0.250000,0.500000,-1.000000\n0.000000,2.000000,0.125000\n");
    }
}
