//! Dataset layout, subject-disjoint splits, class-balance jittering,
//! and the synthetic multi-view sequence generator.

mod synth;

pub use synth::{generate_synthetic, ActivationProfile, SyntheticSpec};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detectors::{AuCode, AuSet};
use crate::error::{Error, Result};
use crate::multiview::Viewpoint;
use crate::tensor::{FaceBox, Tensor};
use crate::TrainScalar;

/// One annotated frame: where its image lives, the face box, and the
/// binary label per action unit of the active set.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub subject_id: String,
    pub video_id: String,
    pub frame_index: usize,
    pub path: PathBuf,
    pub img_w: u32,
    pub img_h: u32,
    pub face_box: FaceBox,
    pub labels: BTreeMap<AuCode, bool>,
    pub view: Option<Viewpoint>,
}

impl FrameRecord {
    pub fn is_positive(&self, au: AuCode) -> bool {
        *self
            .labels
            .get(&au)
            .expect("labels cover the active AU set")
    }
}

/// Dataset-level metadata written next to `subjects/`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub au_set: String,
    pub aus: Vec<u8>,
    pub views: Vec<String>,
    pub seed: u64,
    pub generator_version: u32,
    pub image_side: u32,
}

impl Manifest {
    pub fn read(root: &Path) -> Result<Manifest> {
        let path = root.join("manifest.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::data(format!("reading {}: {}", path.display(), e)))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("parsing {}: {}", path.display(), e)))
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        std::fs::create_dir_all(root)?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(root.join("manifest.json"), text)?;
        Ok(())
    }
}

/// One cross-validation fold: a held-out test subject set, one
/// validation subject, and the remaining training subjects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub test: Vec<String>,
    pub val: String,
    pub train: Vec<String>,
}

/// Three subject-disjoint folds covering every subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub folds: Vec<Fold>,
}

/// Deterministic three-fold split: subjects are sorted, dealt
/// round-robin into three sets, and each fold tests one set while
/// training on the other two minus a validation subject (the
/// lexicographically smallest of the training pool). The seed is
/// accepted for interface stability but the declared rule ignores it.
pub fn make_splits(subjects: &[String], _seed: u64) -> Result<SplitPlan> {
    let mut sorted: Vec<String> = subjects.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != subjects.len() {
        return Err(Error::invalid("duplicate subject ids"));
    }
    if sorted.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 subjects to make splits, got {}",
            sorted.len()
        )));
    }
    let mut sets: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, s) in sorted.iter().enumerate() {
        sets[i % 3].push(s.clone());
    }
    let folds = (0..3)
        .map(|i| {
            let mut pool: Vec<String> = (0..3)
                .filter(|&j| j != i)
                .flat_map(|j| sets[j].iter().cloned())
                .collect();
            pool.sort();
            let val = pool.remove(0);
            Fold {
                test: sets[i].clone(),
                val,
                train: pool,
            }
        })
        .collect();
    Ok(SplitPlan { folds })
}

/// The eight jitter directions in their fixed application order:
/// R, L, U, D, UR, UL, DR, DL (y grows downward).
pub const JITTER_DIRECTIONS: [(i32, i32); 8] = [
    (1, 0),
    (-1, 0),
    (0, -1),
    (0, 1),
    (1, -1),
    (-1, -1),
    (1, 1),
    (-1, 1),
];

pub const DEFAULT_JITTER_FACTOR: usize = 9;

/// Replicates positive records with shifted face boxes (5% of the box
/// side per axis, clamped to image bounds) in whole rounds until the
/// positive count reaches 0.9x the negative count or the total
/// replication factor hits `max_factor`. Streams with no positives or
/// no negatives pass through unchanged.
pub fn jitter_balance(
    records: &[FrameRecord],
    au: AuCode,
    max_factor: usize,
) -> Vec<FrameRecord> {
    let positives: Vec<&FrameRecord> = records.iter().filter(|r| r.is_positive(au)).collect();
    let n_pos = positives.len();
    let n_neg = records.len() - n_pos;
    let mut out = records.to_vec();
    if n_pos == 0 || n_neg == 0 || max_factor <= 1 {
        return out;
    }
    let mut factor = 1usize;
    while ((n_pos * factor) as f64) < 0.9 * n_neg as f64 && factor < max_factor {
        factor += 1;
    }
    for round in 0..factor - 1 {
        let (sx, sy) = JITTER_DIRECTIONS[round % 8];
        for r in &positives {
            let dx = sx * (0.05 * r.face_box.w as f64).round() as i32;
            let dy = sy * (0.05 * r.face_box.h as f64).round() as i32;
            let mut copy = (*r).clone();
            copy.face_box = r.face_box.shifted_clamped(dx, dy, r.img_w, r.img_h);
            out.push(copy);
        }
    }
    out
}

/// Loads a frame image as `[3, h, w]` floats in `[0,1]`.
pub fn load_frame_image(path: &Path) -> Result<Tensor<TrainScalar>> {
    let img = image::open(path)
        .map_err(|e| Error::data(format!("reading {}: {}", path.display(), e)))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros([3, h, w]);
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            t.data_mut()[c * h * w + i] = px.0[c] as TrainScalar / 255.0;
        }
    }
    Ok(t)
}

/// Streams every record under `root` in (video_id, frame_index) order,
/// validating labels against the manifest's AU set. A root without a
/// `subjects/` directory yields an empty stream.
pub fn load_dataset(root: &Path) -> Result<Vec<FrameRecord>> {
    let subjects = root.join("subjects");
    if !subjects.is_dir() {
        return Ok(Vec::new());
    }
    let manifest = Manifest::read(root)?;
    let set = AuSet::parse(&manifest.au_set)?;
    let mut records = Vec::new();
    for sid_dir in sorted_dirs(&subjects)? {
        let sid = dir_name(&sid_dir);
        for view_dir in sorted_dirs(&sid_dir)? {
            let view = Viewpoint::parse(&dir_name(&view_dir)).ok();
            for video_dir in sorted_dirs(&view_dir)? {
                load_video(&video_dir, &sid, view, set, &mut records)?;
            }
        }
    }
    records.sort_by(|a, b| {
        (&a.video_id, a.frame_index).cmp(&(&b.video_id, b.frame_index))
    });
    Ok(records)
}

fn sorted_dirs(parent: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(parent)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn dir_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn frame_file_name(frame_index: usize) -> String {
    format!("frame_{:06}.png", frame_index)
}

fn load_video(
    video_dir: &Path,
    subject_id: &str,
    view: Option<Viewpoint>,
    set: AuSet,
    out: &mut Vec<FrameRecord>,
) -> Result<()> {
    let labels_path = video_dir.join("labels.csv");
    let mut reader = csv::Reader::from_path(&labels_path)
        .map_err(|e| Error::data(format!("reading {}: {}", labels_path.display(), e)))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("reading {}: {}", labels_path.display(), e)))?
        .clone();
    let fixed = ["video_id", "frame", "face_x", "face_y", "face_w", "face_h"];
    for (i, name) in fixed.iter().enumerate() {
        if headers.get(i) != Some(name) {
            return Err(Error::data(format!(
                "{}: expected column {} to be '{}'",
                labels_path.display(),
                i,
                name
            )));
        }
    }
    let mut au_columns = Vec::new();
    for au in set.aus() {
        let label = au.label();
        let idx = headers.iter().position(|h| h == label).ok_or_else(|| {
            Error::data(format!(
                "{}: missing column '{}' for the {} AU set",
                labels_path.display(),
                label,
                set.as_str()
            ))
        })?;
        au_columns.push((au, idx));
    }
    for row in reader.records() {
        let row =
            row.map_err(|e| Error::data(format!("reading {}: {}", labels_path.display(), e)))?;
        let line = row
            .position()
            .map(|p| p.line())
            .unwrap_or_default();
        let ctx = format!("{}:{}", labels_path.display(), line);
        let field = |i: usize| -> Result<&str> {
            row.get(i)
                .ok_or_else(|| Error::data(format!("{}: missing column {}", ctx, i)))
        };
        let parse_u32 = |i: usize| -> Result<u32> {
            let s = field(i)?;
            s.parse()
                .map_err(|_| Error::data(format!("{}: '{}' is not a number", ctx, s)))
        };
        let video_id = field(0)?.to_string();
        let frame_index = parse_u32(1)? as usize;
        let face_box = FaceBox::new(parse_u32(2)?, parse_u32(3)?, parse_u32(4)?, parse_u32(5)?);
        let mut labels = BTreeMap::new();
        for &(au, idx) in &au_columns {
            let value = field(idx)?;
            let bit = match value {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::data(format!(
                        "{}: label '{}' for {} is not binary",
                        ctx, other, au
                    )))
                }
            };
            labels.insert(au, bit);
        }
        let path = video_dir.join(frame_file_name(frame_index));
        let (img_w, img_h) = image::image_dimensions(&path)
            .map_err(|e| Error::data(format!("{}: frame image {}: {}", ctx, path.display(), e)))?;
        if face_box.w == 0
            || face_box.h == 0
            || face_box.x + face_box.w > img_w
            || face_box.y + face_box.h > img_h
        {
            return Err(Error::data(format!(
                "{}: face box {:?} outside {}x{} image",
                ctx, face_box, img_w, img_h
            )));
        }
        out.push(FrameRecord {
            subject_id: subject_id.to_string(),
            video_id,
            frame_index,
            path,
            img_w,
            img_h,
            face_box,
            labels,
            view,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subjects(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("S{:02}", i)).collect()
    }

    #[test]
    fn six_subjects_split_two_per_fold() {
        let plan = make_splits(&subjects(6), 7).unwrap();
        assert_eq!(plan.folds.len(), 3);
        let mut seen = Vec::new();
        for fold in &plan.folds {
            assert_eq!(fold.test.len(), 2);
            assert_eq!(fold.train.len(), 3);
            seen.extend(fold.test.iter().cloned());
            // Disjointness within the fold.
            for s in &fold.test {
                assert!(!fold.train.contains(s) && *s != fold.val);
            }
            assert!(!fold.train.contains(&fold.val));
            // Validation subject is the smallest of the training pool.
            let mut pool = fold.train.clone();
            pool.push(fold.val.clone());
            pool.sort();
            assert_eq!(fold.val, pool[0]);
        }
        seen.sort();
        assert_eq!(seen, subjects(6));
    }

    #[test]
    fn splits_ignore_input_order_and_reject_small_sets() {
        let fwd = make_splits(&subjects(7), 0).unwrap();
        let mut rev = subjects(7);
        rev.reverse();
        assert_eq!(fwd, make_splits(&rev, 99).unwrap());
        assert!(make_splits(&subjects(2), 0).is_err());
        assert!(make_splits(&["a".into(), "a".into(), "b".into()], 0).is_err());
    }

    fn record(id: usize, positive: bool, au: AuCode) -> FrameRecord {
        FrameRecord {
            subject_id: "S0".into(),
            video_id: "v0".into(),
            frame_index: id,
            path: PathBuf::from("unused.png"),
            img_w: 100,
            img_h: 100,
            face_box: FaceBox::new(10, 10, 60, 60),
            labels: BTreeMap::from([(au, positive)]),
            view: None,
        }
    }

    fn stream(pos: usize, neg: usize, au: AuCode) -> Vec<FrameRecord> {
        (0..pos)
            .map(|i| record(i, true, au))
            .chain((0..neg).map(|i| record(pos + i, false, au)))
            .collect()
    }

    fn count_pos(records: &[FrameRecord], au: AuCode) -> usize {
        records.iter().filter(|r| r.is_positive(au)).count()
    }

    #[test]
    fn jitter_reaches_au23_like_balance() {
        let au = AuCode::new(12, AuSet::Synthetic).unwrap();
        let out = jitter_balance(&stream(100, 600, au), au, DEFAULT_JITTER_FACTOR);
        assert_eq!(count_pos(&out, au), 600);
        assert_eq!(out.len(), 1200);
    }

    #[test]
    fn jitter_caps_at_max_factor() {
        let au = AuCode::new(12, AuSet::Synthetic).unwrap();
        let out = jitter_balance(&stream(10, 200, au), au, 9);
        assert_eq!(count_pos(&out, au), 90);
    }

    #[test]
    fn jitter_leaves_balanced_and_degenerate_streams_alone() {
        let au = AuCode::new(1, AuSet::Synthetic).unwrap();
        let balanced = stream(100, 100, au);
        assert_eq!(jitter_balance(&balanced, au, 9).len(), 200);
        let all_pos = stream(50, 0, au);
        assert_eq!(jitter_balance(&all_pos, au, 9).len(), 50);
        let all_neg = stream(0, 50, au);
        assert_eq!(jitter_balance(&all_neg, au, 9).len(), 50);
    }

    #[test]
    fn jitter_applies_directions_in_declared_order() {
        let au = AuCode::new(24, AuSet::Synthetic).unwrap();
        // One positive, many negatives: six rounds of jitter.
        let out = jitter_balance(&stream(1, 6, au), au, 9);
        assert_eq!(count_pos(&out, au), 6);
        let base = FaceBox::new(10, 10, 60, 60);
        let shift = 3; // 5% of 60
        let expected = [
            (1, 0),
            (-1, 0),
            (0, -1),
            (0, 1),
            (1, -1),
        ];
        for (k, (sx, sy)) in expected.iter().enumerate() {
            let b = out[7 + k].face_box;
            assert_eq!(b.x as i32, base.x as i32 + sx * shift);
            assert_eq!(b.y as i32, base.y as i32 + sy * shift);
        }
    }

    #[test]
    fn jitter_clamps_shifted_boxes() {
        let au = AuCode::new(2, AuSet::Synthetic).unwrap();
        let mut r = record(0, true, au);
        r.face_box = FaceBox::new(0, 0, 60, 60);
        let mut records = vec![r];
        records.extend((1..4).map(|i| record(i, false, au)));
        let out = jitter_balance(&records, au, 9);
        for r in &out {
            assert!(r.face_box.x + r.face_box.w <= r.img_w);
            assert!(r.face_box.y + r.face_box.h <= r.img_h);
        }
    }

    #[test]
    fn jitter_ratio_lands_in_band_for_skewed_streams() {
        let au = AuCode::new(12, AuSet::Synthetic).unwrap();
        for (pos, neg) in [(5, 100), (30, 100), (13, 71), (100, 600), (1, 10)] {
            let out = jitter_balance(&stream(pos, neg, au), au, 64);
            let ratio = count_pos(&out, au) as f64 / neg as f64;
            assert!(
                (0.9..=1.2).contains(&ratio),
                "{}:{} gave ratio {}",
                pos,
                neg,
                ratio
            );
        }
    }

    #[test]
    fn empty_root_loads_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn malformed_label_rows_are_rejected_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        Manifest {
            au_set: "synthetic".into(),
            aus: AuSet::Synthetic.codes().to_vec(),
            views: vec!["V1".into()],
            seed: 0,
            generator_version: 1,
            image_side: 8,
        }
        .write(root)
        .unwrap();
        let video = root.join("subjects/S00/V1/vid0");
        std::fs::create_dir_all(&video).unwrap();
        image::RgbImage::new(8, 8)
            .save(video.join("frame_000000.png"))
            .unwrap();
        let header = "video_id,frame,face_x,face_y,face_w,face_h,AU1,AU2,AU12,AU24";
        std::fs::write(
            video.join("labels.csv"),
            format!("{}\nvid0,0,0,0,8,8,0,2,0,0\n", header),
        )
        .unwrap();
        let err = load_dataset(root).unwrap_err().to_string();
        assert!(err.contains("labels.csv:2"), "error was: {}", err);
        assert!(err.contains("not binary"), "error was: {}", err);

        // Out-of-bounds face box is also rejected.
        std::fs::write(
            video.join("labels.csv"),
            format!("{}\nvid0,0,4,4,8,8,0,1,0,0\n", header),
        )
        .unwrap();
        let err = load_dataset(root).unwrap_err().to_string();
        assert!(err.contains("outside"), "error was: {}", err);

        // Missing AU column: header naming error.
        std::fs::write(
            video.join("labels.csv"),
            "video_id,frame,face_x,face_y,face_w,face_h,AU1,AU2,AU12\nvid0,0,0,0,8,8,0,0,0\n",
        )
        .unwrap();
        let err = load_dataset(root).unwrap_err().to_string();
        assert!(err.contains("AU24"), "error was: {}", err);
    }
}
