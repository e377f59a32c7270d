//! Temporal consistency: sliding median filter over per-AU prediction
//! tracks, with symmetric boundary reflection.

use crate::detectors::AuCode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::TrainScalar;

/// Decision threshold on probabilities; ties count as positive.
pub const DECISION_THRESHOLD: TrainScalar = 0.5;

/// Default smoothing window (best of {3, 5, 7}).
pub const DEFAULT_WINDOW: usize = 7;

/// Per-frame probability and decision track for one action unit of one
/// video, raw and smoothed.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSequence {
    pub au: AuCode,
    pub probs_raw: Vec<TrainScalar>,
    pub probs_smoothed: Vec<TrainScalar>,
    pub decisions_raw: Vec<bool>,
    pub decisions_smoothed: Vec<bool>,
    pub window: usize,
}

impl DetectionSequence {
    /// Builds the full four-track sequence from raw probabilities.
    pub fn from_probs(au: AuCode, probs: Vec<TrainScalar>, window: usize) -> Result<Self> {
        let smoothed = median_smooth(&probs, window)?;
        Ok(DetectionSequence {
            decisions_raw: threshold(&probs),
            decisions_smoothed: threshold(&smoothed),
            probs_smoothed: smoothed,
            probs_raw: probs,
            au,
            window,
        })
    }

    pub fn len(&self) -> usize {
        self.probs_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs_raw.is_empty()
    }
}

pub fn threshold(probs: &[TrainScalar]) -> Vec<bool> {
    probs.iter().map(|&p| p >= DECISION_THRESHOLD).collect()
}

/// Sliding median with symmetric reflection at the boundaries: the sample
/// just outside an edge mirrors the edge sample itself, so a track of any
/// length supports any odd window.
pub fn median_smooth<T: Scalar>(track: &[T], window: usize) -> Result<Vec<T>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!(
            "median window must be odd and positive, got {}",
            window
        )));
    }
    if track.is_empty() {
        return Err(Error::invalid("cannot smooth an empty track"));
    }
    if window == 1 {
        return Ok(track.to_vec());
    }
    let n = track.len() as isize;
    let half = (window / 2) as isize;
    let mut out = Vec::with_capacity(track.len());
    let mut buf: Vec<T> = Vec::with_capacity(window);
    for i in 0..n {
        buf.clear();
        for off in -half..=half {
            let mut j = i + off;
            loop {
                if j < 0 {
                    j = -j - 1;
                } else if j >= n {
                    j = 2 * n - 1 - j;
                } else {
                    break;
                }
            }
            buf.push(track[j as usize]);
        }
        buf.sort_by(|a, b| a.partial_cmp(b).expect("finite track values"));
        out.push(buf[window / 2]);
    }
    Ok(out)
}

/// Re-smooths a sequence at a new window. By default the filter runs over
/// probabilities, which are then re-thresholded; with `smooth_decisions`
/// the binary track is filtered directly and the probabilities are left
/// untouched.
pub fn smooth_sequence(
    seq: &DetectionSequence,
    window: usize,
    smooth_decisions: bool,
) -> Result<DetectionSequence> {
    let mut out = seq.clone();
    out.window = window;
    if smooth_decisions {
        let as_real: Vec<TrainScalar> = seq
            .decisions_raw
            .iter()
            .map(|&d| if d { 1.0 } else { 0.0 })
            .collect();
        let filtered = median_smooth(&as_real, window)?;
        out.probs_smoothed = seq.probs_raw.clone();
        out.decisions_smoothed = threshold(&filtered);
    } else {
        out.probs_smoothed = median_smooth(&seq.probs_raw, window)?;
        out.decisions_smoothed = threshold(&out.probs_smoothed);
    }
    Ok(out)
}
