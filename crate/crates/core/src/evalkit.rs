//! Metrics (frame-level F1, accuracy), per-AU report tables with a final
//! averaged row, and occlusion-based saliency maps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::datakit::FrameRecord;
use crate::detectors::AuCode;
use crate::error::{Error, Result};
use crate::multiview::PredictionRow;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Binary confusion counts over paired tracks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

impl Confusion {
    pub fn from_tracks(decisions: &[bool], labels: &[bool]) -> Result<Confusion> {
        if decisions.len() != labels.len() {
            return Err(Error::invalid(format!(
                "decision track length {} does not match label length {}",
                decisions.len(),
                labels.len()
            )));
        }
        if decisions.is_empty() {
            return Err(Error::invalid("empty tracks have no metrics"));
        }
        let mut c = Confusion::default();
        for (&d, &l) in decisions.iter().zip(labels) {
            match (d, l) {
                (true, true) => c.true_pos += 1,
                (true, false) => c.false_pos += 1,
                (false, true) => c.false_neg += 1,
                (false, false) => c.true_neg += 1,
            }
        }
        Ok(c)
    }

    pub fn add(&mut self, other: &Confusion) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.true_neg += other.true_neg;
        self.false_neg += other.false_neg;
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    /// Precision, recall and F1 with every 0/0 mapped to 0.
    pub fn prf(&self) -> (f64, f64, f64) {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let p = ratio(self.true_pos, self.true_pos + self.false_pos);
        let r = ratio(self.true_pos, self.true_pos + self.false_neg);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f1)
    }

    pub fn accuracy(&self) -> f64 {
        (self.true_pos + self.true_neg) as f64 / self.total() as f64
    }
}

/// Frame-level precision, recall and F1 of a decision track against
/// labels.
pub fn f1_frame(decisions: &[bool], labels: &[bool]) -> Result<(f64, f64, f64)> {
    Ok(Confusion::from_tracks(decisions, labels)?.prf())
}

/// Fraction of frames where decision and label agree.
pub fn accuracy(decisions: &[bool], labels: &[bool]) -> Result<f64> {
    Ok(Confusion::from_tracks(decisions, labels)?.accuracy())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub au: AuCode,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricAverages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Per-AU metric rows plus the unweighted average row, for one grouping
/// key (fold, view, fusion mode — encoded by the caller in `group`).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub group: String,
    pub rows: Vec<MetricRow>,
    pub average: MetricAverages,
}

/// Aggregates (au, decision, label) triples into a per-AU report. Frames
/// of the same AU are pooled before computing metrics.
pub fn report(
    group: &str,
    pairs: impl IntoIterator<Item = (AuCode, bool, bool)>,
) -> Result<MetricReport> {
    let mut by_au: BTreeMap<AuCode, Confusion> = BTreeMap::new();
    for (au, decision, label) in pairs {
        let c = by_au.entry(au).or_default();
        match (decision, label) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    if by_au.is_empty() {
        return Err(Error::data("no prediction/label pairs to report on"));
    }
    let rows: Vec<MetricRow> = by_au
        .iter()
        .map(|(&au, c)| {
            let (precision, recall, f1) = c.prf();
            MetricRow {
                au,
                precision,
                recall,
                f1,
                accuracy: c.accuracy(),
            }
        })
        .collect();
    let n = rows.len() as f64;
    let average = MetricAverages {
        precision: rows.iter().map(|r| r.precision).sum::<f64>() / n,
        recall: rows.iter().map(|r| r.recall).sum::<f64>() / n,
        f1: rows.iter().map(|r| r.f1).sum::<f64>() / n,
        accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / n,
    };
    Ok(MetricReport {
        group: group.to_string(),
        rows,
        average,
    })
}

impl MetricReport {
    /// Plain-text table, one AU per row, `Av.` row last.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        if !self.group.is_empty() {
            let _ = writeln!(out, "[{}]", self.group);
        }
        let _ = writeln!(
            out,
            "{:<8}{:>10}{:>10}{:>10}{:>10}",
            "AU", "Prec", "Rec", "F1", "Acc"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8}{:>10.3}{:>10.3}{:>10.3}{:>10.3}",
                r.au.label(),
                r.precision,
                r.recall,
                r.f1,
                r.accuracy
            );
        }
        let _ = writeln!(
            out,
            "{:<8}{:>10.3}{:>10.3}{:>10.3}{:>10.3}",
            "Av.", self.average.precision, self.average.recall, self.average.f1,
            self.average.accuracy
        );
        out
    }

    /// Machine-readable rendering with the same rows.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("group,au,precision,recall,f1,accuracy\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.group,
                r.au.label(),
                r.precision,
                r.recall,
                r.f1,
                r.accuracy
            );
        }
        let _ = writeln!(
            out,
            "{},Av.,{},{},{},{}",
            self.group, self.average.precision, self.average.recall, self.average.f1,
            self.average.accuracy
        );
        out
    }
}

/// Joins prediction rows against dataset ground truth on (video, frame,
/// AU) and builds the per-AU report. `smoothed` selects which decision
/// column is scored.
pub fn evaluate_predictions(
    group: &str,
    rows: &[PredictionRow],
    records: &[FrameRecord],
    smoothed: bool,
) -> Result<MetricReport> {
    let truth: BTreeMap<(&str, usize), &FrameRecord> = records
        .iter()
        .map(|r| ((r.video_id.as_str(), r.frame_index), r))
        .collect();
    let pairs: Vec<(AuCode, bool, bool)> = rows
        .iter()
        .map(|row| {
            let record = truth
                .get(&(row.video_id.as_str(), row.frame))
                .ok_or_else(|| {
                    Error::data(format!(
                        "no ground truth for video {} frame {}",
                        row.video_id, row.frame
                    ))
                })?;
            let label = *record.labels.get(&row.au).ok_or_else(|| {
                Error::data(format!(
                    "video {} frame {} has no label for {}",
                    row.video_id, row.frame, row.au
                ))
            })?;
            let decision = if smoothed {
                row.decision_smoothed
            } else {
                row.decision_raw
            };
            Ok((row.au, decision, label))
        })
        .collect::<Result<_>>()?;
    report(group, pairs)
}

/// Occlusion saliency: slides a square occluder over the input, refills it
/// with `fill` (one value per channel, usually the dataset mean) and maps
/// each grid position to `score(input) - score(occluded)`. Output shape is
/// the sliding-grid size `[grid_h, grid_w]`.
pub fn occlusion_saliency<T: Scalar>(
    score: impl Fn(&Tensor<T>) -> Result<T> + Sync,
    input: &Tensor<T>,
    fill: &[T],
    patch_side: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    if input.shape().len() != 3 {
        return Err(Error::shape("saliency input must be a channel-first image"));
    }
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if fill.len() != c {
        return Err(Error::invalid(format!(
            "fill has {} entries for {} channels",
            fill.len(),
            c
        )));
    }
    if patch_side == 0 || patch_side > h || patch_side > w {
        return Err(Error::invalid(format!(
            "occluder side {} does not fit a {}x{} input",
            patch_side, h, w
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let grid_h = (h - patch_side) / stride + 1;
    let grid_w = (w - patch_side) / stride + 1;
    let base = score(input)?;

    let cells: Vec<(usize, usize)> = (0..grid_h)
        .flat_map(|gy| (0..grid_w).map(move |gx| (gy, gx)))
        .collect();
    let values: Result<Vec<T>> = cells
        .par_iter()
        .map(|&(gy, gx)| {
            let mut occluded = input.clone();
            for ci in 0..c {
                for y in gy * stride..gy * stride + patch_side {
                    for x in gx * stride..gx * stride + patch_side {
                        *occluded.at3_mut(ci, y, x) = fill[ci];
                    }
                }
            }
            Ok(base - score(&occluded)?)
        })
        .collect();
    Tensor::from_vec(vec![grid_h, grid_w], values?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::AuSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn au(v: u8) -> AuCode {
        AuCode::new(v, AuSet::Synthetic).unwrap()
    }

    #[test]
    fn hand_counted_examples() {
        let perfect = vec![true, false, true];
        assert_eq!(f1_frame(&perfect, &perfect).unwrap(), (1.0, 1.0, 1.0));
        let d = vec![true, true, false, false];
        let l = vec![true, false, true, false];
        assert_eq!(f1_frame(&d, &l).unwrap(), (0.5, 0.5, 0.5));
        assert_eq!(accuracy(&d, &l).unwrap(), 0.5);
        // All-negative decisions against some positives: declared 0/0 -> 0.
        let none = vec![false; 4];
        assert_eq!(f1_frame(&none, &l).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(f1_frame(&[true], &[true, false]).is_err());
        assert!(f1_frame(&[], &[]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    /// Independent oracle: materialize the four index sets, verify they
    /// partition the frames, then evaluate the formulas literally.
    fn oracle(d: &[bool], l: &[bool]) -> (f64, f64, f64, f64) {
        let idx: Vec<usize> = (0..d.len()).collect();
        let tp: Vec<usize> = idx.iter().copied().filter(|&i| d[i] && l[i]).collect();
        let fp: Vec<usize> = idx.iter().copied().filter(|&i| d[i] && !l[i]).collect();
        let fneg: Vec<usize> = idx.iter().copied().filter(|&i| !d[i] && l[i]).collect();
        let tn: Vec<usize> = idx.iter().copied().filter(|&i| !d[i] && !l[i]).collect();
        assert_eq!(tp.len() + fp.len() + fneg.len() + tn.len(), d.len());
        let p = if tp.len() + fp.len() == 0 {
            0.0
        } else {
            tp.len() as f64 / (tp.len() + fp.len()) as f64
        };
        let r = if tp.len() + fneg.len() == 0 {
            0.0
        } else {
            tp.len() as f64 / (tp.len() + fneg.len()) as f64
        };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let acc = (tp.len() + tn.len()) as f64 / d.len() as f64;
        (p, r, f1, acc)
    }

    #[test]
    fn matches_exhaustive_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let len = rng.random_range(1..=50);
            let d: Vec<bool> = (0..len).map(|_| rng.random_bool(0.5)).collect();
            let l: Vec<bool> = (0..len).map(|_| rng.random_bool(0.5)).collect();
            let (p, r, f1) = f1_frame(&d, &l).unwrap();
            let (op, or, of1, oacc) = oracle(&d, &l);
            assert_eq!((p, r, f1), (op, or, of1));
            assert_eq!(accuracy(&d, &l).unwrap(), oacc);
        }
    }

    #[test]
    fn f1_is_invariant_under_joint_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let d: Vec<bool> = (0..40).map(|_| rng.random_bool(0.3)).collect();
        let l: Vec<bool> = (0..40).map(|_| rng.random_bool(0.6)).collect();
        let base = f1_frame(&d, &l).unwrap();
        let mut order: Vec<usize> = (0..40).collect();
        for i in (1..40).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let dp: Vec<bool> = order.iter().map(|&i| d[i]).collect();
        let lp: Vec<bool> = order.iter().map(|&i| l[i]).collect();
        assert_eq!(f1_frame(&dp, &lp).unwrap(), base);
    }

    #[test]
    fn report_averages_per_au_rows() {
        // AU1: F1 = 0.4 (tp=1, fp=2, fn=1); AU2: F1 = 0.6 (tp=3, fp=2, fn=2).
        let mut pairs = Vec::new();
        pairs.push((au(1), true, true));
        pairs.extend([(au(1), true, false), (au(1), true, false)]);
        pairs.push((au(1), false, true));
        for _ in 0..3 {
            pairs.push((au(2), true, true));
        }
        pairs.extend([(au(2), true, false), (au(2), true, false)]);
        pairs.extend([(au(2), false, true), (au(2), false, true)]);
        let rep = report("fold0", pairs).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!((rep.rows[0].f1 - 0.4).abs() < 1e-12);
        assert!((rep.rows[1].f1 - 0.6).abs() < 1e-12);
        assert!((rep.average.f1 - 0.5).abs() < 1e-12);
        let text = rep.render_text();
        let last = text.trim_end().lines().last().unwrap();
        assert!(last.starts_with("Av."));
        assert!(report("x", Vec::new()).is_err());
    }

    #[test]
    fn perfect_single_au_report_is_all_ones() {
        let pairs = vec![(au(12), true, true), (au(12), false, false)];
        let rep = report("", pairs).unwrap();
        assert_eq!(rep.rows.len(), 1);
        assert_eq!(
            (rep.rows[0].precision, rep.rows[0].recall, rep.rows[0].f1, rep.rows[0].accuracy),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert_eq!(rep.average.f1, 1.0);
    }

    #[test]
    fn prediction_rows_join_against_ground_truth() {
        use crate::multiview::Viewpoint;
        use crate::tensor::FaceBox;
        let record = |frame: usize, label: bool| FrameRecord {
            subject_id: "s1".into(),
            video_id: "s1_V5".into(),
            frame_index: frame,
            path: std::path::PathBuf::from("unused.png"),
            img_w: 64,
            img_h: 64,
            face_box: FaceBox::new(0, 0, 64, 64),
            labels: [(au(12), label)].into(),
            view: Some(Viewpoint::frontal()),
        };
        let row = |frame: usize, raw: bool, smoothed: bool| PredictionRow {
            video_id: "s1_V5".into(),
            frame,
            predicted_view: Viewpoint::frontal(),
            au: au(12),
            prob_raw: if raw { 0.9 } else { 0.1 },
            prob_smoothed: if smoothed { 0.9 } else { 0.1 },
            decision_raw: raw,
            decision_smoothed: smoothed,
        };
        let records = vec![record(0, true), record(1, true), record(2, false)];
        let rows = vec![row(0, true, true), row(1, false, true), row(2, false, false)];

        // Raw decisions: tp=1, fn=1, tn=1 -> recall 0.5.
        let raw = evaluate_predictions("", &rows, &records, false).unwrap();
        assert_eq!(raw.rows[0].recall, 0.5);
        // Smoothed decisions are perfect.
        let smoothed = evaluate_predictions("", &rows, &records, true).unwrap();
        assert_eq!(smoothed.rows[0].f1, 1.0);

        // Rows without ground truth are an error, not a silent skip.
        let orphan = vec![row(9, true, true)];
        assert!(evaluate_predictions("", &orphan, &records, false).is_err());
    }

    #[test]
    fn constant_scorer_yields_zero_map() {
        let input: Tensor<f32> = Tensor::full(vec![3, 8, 8], 0.3);
        let map = occlusion_saliency(|_| Ok(0.7f32), &input, &[0.5, 0.5, 0.5], 4, 2).unwrap();
        assert_eq!(map.shape(), &[3, 3]);
        assert!(map.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn whole_input_patch_gives_one_cell() {
        let input: Tensor<f64> = Tensor::full(vec![1, 6, 6], 1.0);
        // Score = mean pixel value; occluding everything with 0.25 drops it.
        let score = |t: &Tensor<f64>| Ok(t.data().iter().sum::<f64>() / t.len() as f64);
        let map = occlusion_saliency(score, &input, &[0.25], 6, 6).unwrap();
        assert_eq!(map.shape(), &[1, 1]);
        assert!((map.data()[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let input: Tensor<f32> = Tensor::zeros(vec![3, 8, 8]);
        assert!(occlusion_saliency(|_| Ok(0.0f32), &input, &[0.0; 3], 9, 2).is_err());
        assert!(occlusion_saliency(|_| Ok(0.0f32), &input, &[0.0; 2], 4, 2).is_err());
    }
}
