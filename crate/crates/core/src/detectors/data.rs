//! Turns frame records into assembled network inputs: face crops,
//! per-video optical flow, and the per-FusionMode bundles.

use std::collections::HashMap;
use std::path::PathBuf;

use rayon::prelude::*;

use crate::datakit::{load_frame_image, FrameRecord};
use crate::error::{Error, Result};
use crate::motion::{build_bundle, embed_flow, first_frame_policy, FlowField};
use crate::net::{FusionMode, NetInput};
use crate::tensor::{crop_resize, Tensor};
use crate::TrainScalar;

use super::au::AuCode;
use super::train::ClassExample;

/// Full frames plus (when a mode needs them) per-frame flow fields,
/// loaded once per unique frame so jittered duplicates are free.
pub struct FrameCache {
    frames: HashMap<PathBuf, Tensor<TrainScalar>>,
    flows: HashMap<(String, usize), FlowField>,
}

impl FrameCache {
    /// Builds the cache for `records`. Flow is estimated between
    /// consecutive distinct frames of each video, the first frame of a
    /// video receiving the zero field.
    pub fn build(records: &[FrameRecord], with_flow: bool) -> Result<FrameCache> {
        let mut order: Vec<&FrameRecord> = Vec::new();
        let mut seen: HashMap<&PathBuf, ()> = HashMap::new();
        for r in records {
            if seen.insert(&r.path, ()).is_none() {
                order.push(r);
            }
        }
        let loaded: Vec<(PathBuf, Tensor<TrainScalar>)> = order
            .par_iter()
            .map(|r| Ok((r.path.clone(), load_frame_image(&r.path)?)))
            .collect::<Result<Vec<_>>>()?;
        let frames: HashMap<_, _> = loaded.into_iter().collect();

        let mut flows = HashMap::new();
        if with_flow {
            let mut videos: HashMap<&str, Vec<&FrameRecord>> = HashMap::new();
            for r in &order {
                videos.entry(r.video_id.as_str()).or_default().push(r);
            }
            let mut jobs: Vec<(&str, Vec<&FrameRecord>)> = videos.into_iter().collect();
            jobs.sort_by_key(|(id, _)| *id);
            for (_, frames_of) in jobs.iter_mut() {
                frames_of.sort_by_key(|r| r.frame_index);
            }
            let computed: Vec<Vec<((String, usize), FlowField)>> = jobs
                .par_iter()
                .map(|(_, recs)| {
                    let seq: Vec<Tensor<TrainScalar>> =
                        recs.iter().map(|r| frames[&r.path].clone()).collect();
                    let fields = first_frame_policy(&seq)?;
                    Ok(recs
                        .iter()
                        .zip(fields)
                        .map(|(r, f)| ((r.video_id.clone(), r.frame_index), f))
                        .collect())
                })
                .collect::<Result<Vec<_>>>()?;
            flows = computed.into_iter().flatten().collect();
        }
        Ok(FrameCache { frames, flows })
    }

    pub fn frame(&self, record: &FrameRecord) -> Result<&Tensor<TrainScalar>> {
        self.frames
            .get(&record.path)
            .ok_or_else(|| Error::data(format!("{} not in cache", record.path.display())))
    }

    pub fn flow(&self, record: &FrameRecord) -> Result<&FlowField> {
        self.flows
            .get(&(record.video_id.clone(), record.frame_index))
            .ok_or_else(|| {
                Error::data(format!(
                    "no flow cached for {} frame {}",
                    record.video_id, record.frame_index
                ))
            })
    }

    /// Assembles the input bundle for one record under `mode`.
    pub fn bundle(
        &self,
        record: &FrameRecord,
        mode: FusionMode,
        side: usize,
    ) -> Result<NetInput<TrainScalar>> {
        let rgb = if mode.uses_rgb() {
            Some(crop_resize(self.frame(record)?, record.face_box, side)?)
        } else {
            None
        };
        let flow = if mode.uses_flow() {
            Some(embed_flow(self.flow(record)?, record.face_box, side)?)
        } else {
            None
        };
        build_bundle(rgb, flow, mode)
    }
}

/// Builds detector examples: bundle per record, class 1 where the
/// record is positive for `au`.
pub fn prepare_detector_examples(
    records: &[FrameRecord],
    au: AuCode,
    mode: FusionMode,
    side: usize,
) -> Result<Vec<ClassExample>> {
    let cache = FrameCache::build(records, mode.uses_flow())?;
    records
        .par_iter()
        .map(|r| {
            Ok(ClassExample {
                input: cache.bundle(r, mode, side)?,
                class: r.is_positive(au) as usize,
            })
        })
        .collect()
}

/// Builds k-way classifier examples with an arbitrary class function.
pub fn prepare_class_examples(
    records: &[FrameRecord],
    mode: FusionMode,
    side: usize,
    class_of: impl Fn(&FrameRecord) -> usize + Sync,
) -> Result<Vec<ClassExample>> {
    let cache = FrameCache::build(records, mode.uses_flow())?;
    records
        .par_iter()
        .map(|r| {
            Ok(ClassExample {
                input: cache.bundle(r, mode, side)?,
                class: class_of(r),
            })
        })
        .collect()
}

/// Expression class for pretraining: the bitmask of active AUs in the
/// record's label map, in AU-set order (up to 2^n classes).
pub fn expression_class(record: &FrameRecord) -> usize {
    record
        .labels
        .values()
        .enumerate()
        .map(|(i, &v)| (v as usize) << i)
        .sum()
}
