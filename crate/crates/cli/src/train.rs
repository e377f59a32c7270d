//! `pretrain`, `train-au`, `train-view`: the staged training surface.
//! Per-detector fine-tuning defaults to the standard recipe; the two
//! offline classifier stages default to a patience-free schedule so
//! freshly initialized features have time to appear.

use std::path::{Path, PathBuf};

use clap::Args;

use aunets_core::datakit::{jitter_balance, load_dataset, FrameRecord, DEFAULT_JITTER_FACTOR};
use aunets_core::detectors::{
    adapt_head, expression_class, prepare_class_examples, prepare_detector_examples,
    train_classifier, train_detector, write_log_csv, AuCode, AuSet, TrainConfig,
};
use aunets_core::multiview::{ViewClassifier, Viewpoint};
use aunets_core::net::{
    load_network, save_network, warm_start, CheckpointMeta, FusionMode, Network, Profile,
    ProfileName,
};

use crate::config::{RunConfig, UsageError};
use crate::CliError;

/// Classes the synthetic expression pretraining distinguishes: one per
/// subset of the four animatable units.
const EXPRESSION_CLASSES: usize = 16;

fn patience_free_defaults() -> TrainConfig {
    TrainConfig {
        lr0: 3e-3,
        decay_epochs: 12,
        max_epochs: 12,
        plateau_epochs: 12,
        ..TrainConfig::default()
    }
}

fn parse_profile(cfg: &RunConfig, flag: Option<String>) -> Result<(ProfileName, Profile), CliError> {
    let name_str = cfg.resolve(flag, "profile", "tiny".to_string())?;
    let name = ProfileName::parse(&name_str).map_err(|e| UsageError(e.to_string()))?;
    Ok((name, Profile::by_name(name, 2)))
}

fn parse_view(s: &str) -> Result<Viewpoint, UsageError> {
    if s.eq_ignore_ascii_case("frontal") {
        return Ok(Viewpoint::frontal());
    }
    Viewpoint::parse(&s.to_ascii_uppercase()).map_err(|e| UsageError(e.to_string()))
}

/// Bank path for one detector: `{bank}/{view|frontal}/AU{code}_{fusion}.ckpt`.
pub fn checkpoint_path(bank: &Path, view: Viewpoint, au: AuCode, fusion: FusionMode) -> PathBuf {
    let dir = if view == Viewpoint::frontal() {
        "frontal".to_string()
    } else {
        view.as_str().to_string()
    };
    bank.join(dir).join(format!("{}_{}.ckpt", au, fusion.as_str()))
}

fn log_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("log.csv")
}

fn load_records(data: &Path) -> Result<Vec<FrameRecord>, CliError> {
    Ok(load_dataset(data)?)
}

/// Keeps only the subjects in a comma-separated include list, if given.
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

/// Splits off one validation subject: the flag value, or the
/// lexicographically last subject present.
fn split_val(
    records: Vec<FrameRecord>,
    val_subject: &Option<String>,
) -> Result<(Vec<FrameRecord>, Vec<FrameRecord>), CliError> {
    let val_id = match val_subject {
        Some(s) => s.clone(),
        None => records
            .iter()
            .map(|r| r.subject_id.clone())
            .max()
            .ok_or_else(|| UsageError("dataset has no frames".into()))?,
    };
    let (val, train): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.subject_id == val_id);
    if val.is_empty() {
        return Err(UsageError(format!("validation subject {} has no frames", val_id)).into());
    }
    if train.is_empty() {
        return Err(UsageError(format!(
            "no training frames left outside validation subject {}",
            val_id
        ))
        .into());
    }
    Ok((train, val))
}

#[derive(Args)]
pub struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to warm start the trunk from (head is re-grown).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Comma-separated subject ids to train on (default: all).
    #[arg(long)]
    subjects: Option<String>,
    /// Subject held out for validation (default: last id).
    #[arg(long)]
    val_subject: Option<String>,
}

pub fn run_pretrain(args: PretrainArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let (name, profile) = parse_profile(&cfg, args.profile)?;
    let tc = cfg.train_config(patience_free_defaults(), args.seed)?;

    let records = filter_subjects(load_records(&args.data)?, &args.subjects)?;
    let (train, val) = split_val(records, &args.val_subject)?;
    let side = profile.input_side;
    let tr = prepare_class_examples(&train, FusionMode::RgbOnly, side, expression_class)?;
    let va = prepare_class_examples(&val, FusionMode::RgbOnly, side, expression_class)?;

    let net = initial_net(
        &profile,
        FusionMode::RgbOnly,
        EXPRESSION_CLASSES,
        tc.seed,
        &args.init,
    )?;
    let outcome = train_classifier(net, &tr, &va, &tc)?;
    if let Some(dir) = args.out.parent() {
        std::fs::create_dir_all(dir).map_err(aunets_core::Error::from)?;
    }
    let meta = CheckpointMeta {
        profile: name.as_str().to_string(),
        fusion: FusionMode::RgbOnly,
        seed: tc.seed,
    };
    save_network(&args.out, &outcome.net, &meta)?;
    write_log_csv(&log_path(&args.out), &outcome.log)?;
    println!(
        "pretrained {}-way classifier: best val accuracy {:.3} at epoch {}, saved to {}",
        EXPRESSION_CLASSES,
        outcome.best_f1(),
        outcome.best_epoch,
        args.out.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct TrainAuArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint bank root; the file lands under {view}/AU{n}_{fusion}.ckpt.
    #[arg(long)]
    bank: PathBuf,
    /// Action unit code, e.g. 12.
    #[arg(long)]
    au: u8,
    /// Viewpoint: V1..V9 or "frontal".
    #[arg(long)]
    view: String,
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to warm start from (expression classifier or an
    /// already trained detector).
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<String>,
    #[arg(long)]
    val_subject: Option<String>,
}

/// Builds a starting network with a `k`-way head: fresh, continued, or
/// transplanted from a donor checkpoint depending on what the donor
/// looks like.
fn initial_net(
    profile: &Profile,
    fusion: FusionMode,
    k: usize,
    seed: u64,
    init: &Option<PathBuf>,
) -> aunets_core::Result<Network<aunets_core::TrainScalar>> {
    let mut profile = profile.clone();
    profile.k_outputs = k;
    let Some(path) = init else {
        return Network::for_fusion(&profile, fusion, seed);
    };
    let (donor, meta) = load_network(path)?;
    let target = aunets_core::net::LayerShape::Flat(k);
    if meta.fusion == fusion {
        match &donor {
            Network::Single(g) if g.output_shape() != target => {
                Ok(Network::Single(adapt_head(g, k, seed)?))
            }
            _ => Ok(donor),
        }
    } else {
        match donor {
            Network::Single(g) => {
                let src = if g.output_shape() != target {
                    adapt_head(&g, k, seed)?
                } else {
                    g
                };
                let mut net = Network::for_fusion(&profile, fusion, seed)?;
                warm_start(&mut net, &src)?;
                Ok(net)
            }
            Network::TwoStream(_) => Err(aunets_core::Error::invalid(format!(
                "cannot warm start a {} net from a {} checkpoint",
                fusion.as_str(),
                meta.fusion.as_str()
            ))),
        }
    }
}

pub fn run_train_au(args: TrainAuArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let (name, profile) = parse_profile(&cfg, args.profile)?;
    let view = parse_view(&args.view)?;
    let au = AuCode::new(args.au, AuSet::Synthetic).map_err(|e| UsageError(e.to_string()))?;
    let fusion_str = cfg.resolve(args.fusion, "fusion", "rgb_only".to_string())?;
    let fusion = FusionMode::parse(&fusion_str).map_err(|e| UsageError(e.to_string()))?;
    let tc = cfg.train_config(TrainConfig::default(), args.seed)?;
    let balance = cfg.resolve(None, "balance_factor", DEFAULT_JITTER_FACTOR)?;

    let context = format!("view {} / {} ({})", view, au, fusion.as_str());
    let records = filter_subjects(load_records(&args.data)?, &args.subjects)?;
    let of_view: Vec<FrameRecord> = records
        .into_iter()
        .filter(|r| r.view == Some(view))
        .collect();
    if of_view.is_empty() {
        return Err(CliError::at(
            context,
            aunets_core::Error::data(format!("dataset has no frames for view {}", view)),
        ));
    }
    let (train, val) = split_val(of_view, &args.val_subject)?;

    let run = || -> aunets_core::Result<_> {
        let balanced = jitter_balance(&train, au, balance);
        let side = profile.input_side;
        let tr = prepare_detector_examples(&balanced, au, fusion, side)?;
        let va = prepare_detector_examples(&val, au, fusion, side)?;
        let net = initial_net(&profile, fusion, 2, tc.seed, &args.init)?;
        train_detector(net, &tr, &va, &tc)
    };
    let outcome = run().map_err(|e| CliError::at(context.clone(), e))?;

    let ckpt = checkpoint_path(&args.bank, view, au, fusion);
    if let Some(dir) = ckpt.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::at(context.clone(), aunets_core::Error::from(e)))?;
    }
    let meta = CheckpointMeta {
        profile: name.as_str().to_string(),
        fusion,
        seed: tc.seed,
    };
    save_network(&ckpt, &outcome.net, &meta).map_err(|e| CliError::at(context.clone(), e))?;
    write_log_csv(&log_path(&ckpt), &outcome.log)
        .map_err(|e| CliError::at(context.clone(), e))?;
    println!(
        "{}: best val F1 {:.3} at epoch {}, saved to {}",
        context,
        outcome.best_f1(),
        outcome.best_epoch,
        ckpt.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct TrainViewArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to warm start the trunk from (head is re-grown).
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<String>,
    #[arg(long)]
    val_subject: Option<String>,
}

pub fn run_train_view(args: TrainViewArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let (name, profile) = parse_profile(&cfg, args.profile)?;
    let tc = cfg.train_config(patience_free_defaults(), args.seed)?;

    let records = filter_subjects(load_records(&args.data)?, &args.subjects)?;
    if let Some(bad) = records.iter().find(|r| r.view.is_none()) {
        return Err(aunets_core::Error::data(format!(
            "frame {}/{} has no viewpoint tag",
            bad.video_id, bad.frame_index
        ))
        .into());
    }
    let (train, val) = split_val(records, &args.val_subject)?;
    let side = profile.input_side;
    let class_of = |r: &FrameRecord| r.view.expect("validated above").index();
    let tr = prepare_class_examples(&train, FusionMode::RgbOnly, side, class_of)?;
    let va = prepare_class_examples(&val, FusionMode::RgbOnly, side, class_of)?;

    let net = initial_net(
        &profile,
        FusionMode::RgbOnly,
        Viewpoint::COUNT,
        tc.seed,
        &args.init,
    )?;
    let outcome = train_classifier(net, &tr, &va, &tc)?;
    let trained = outcome
        .net
        .as_single()
        .expect("view classifier is single-stream")
        .clone();
    let trained = ViewClassifier::from_parts(name, trained)?;
    if let Some(dir) = args.out.parent() {
        std::fs::create_dir_all(dir).map_err(aunets_core::Error::from)?;
    }
    trained.save(&args.out, tc.seed)?;
    write_log_csv(&log_path(&args.out), &outcome.log)?;
    println!(
        "view classifier: best val accuracy {:.3} at epoch {}, saved to {}",
        outcome.best_f1(),
        outcome.best_epoch,
        args.out.display()
    );
    Ok(())
}
