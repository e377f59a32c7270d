//! The multi-view cascade: view classification per video, routing to
//! the per-view detector ensemble, and the gradual adaptation order.

mod cascade;
mod classifier;
mod index;

pub use cascade::{
    detect_sequence, prediction_rows, read_predictions_csv, write_predictions_csv,
    CascadeConfig, ConstantPredictor, FramePredictor, PredictionRow, VideoDetections,
};
pub use classifier::{
    aggregate_views, classify_view_video, ViewAggregation, ViewClassifier, DEFAULT_VIEW_STRIDE,
};
pub use index::{EnsembleIndex, IndexEntry};

use crate::error::{Error, Result};

/// One of the nine camera viewpoints, V1 to V9. The synthetic renderer
/// lays them out on a 3x3 yaw/pitch grid with V5 (the centre) frontal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Viewpoint(u8);

impl Viewpoint {
    pub const COUNT: usize = 9;

    pub fn new(value: u8) -> Result<Self> {
        if (1..=9).contains(&value) {
            Ok(Viewpoint(value))
        } else {
            Err(Error::invalid(format!(
                "viewpoint must be V1..V9, got V{}",
                value
            )))
        }
    }

    pub fn all() -> impl Iterator<Item = Viewpoint> {
        (1..=9).map(Viewpoint)
    }

    pub fn frontal() -> Viewpoint {
        Viewpoint(5)
    }

    pub fn value(&self) -> u8 {
        self.0
    }

    /// Zero-based index, e.g. for classifier output slots.
    pub fn index(&self) -> usize {
        self.0 as usize - 1
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Viewpoint::new(index as u8 + 1)
    }

    pub fn as_str(&self) -> &'static str {
        const NAMES: [&str; 9] = ["V1", "V2", "V3", "V4", "V5", "V6", "V7", "V8", "V9"];
        NAMES[self.index()]
    }

    pub fn parse(s: &str) -> Result<Self> {
        let digits = s
            .strip_prefix('V')
            .ok_or_else(|| Error::invalid(format!("bad viewpoint {:?}", s)))?;
        let value: u8 = digits
            .parse()
            .map_err(|_| Error::invalid(format!("bad viewpoint {:?}", s)))?;
        Viewpoint::new(value)
    }
}

impl std::fmt::Display for Viewpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One stage of the gradual adaptation schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingStage {
    pub label: String,
    /// `None` for the expression-classification pretraining stage.
    pub view: Option<Viewpoint>,
    /// Index of the earlier stage whose weights warm-start this one.
    pub warm_start: Option<usize>,
}

/// The detector training order: pretrain on expression classes, train
/// the frontal view from those weights, then initialize each remaining
/// view from the frontal result.
pub fn adapt_training_order() -> Vec<TrainingStage> {
    let mut stages = vec![TrainingStage {
        label: "pretrain".into(),
        view: None,
        warm_start: None,
    }];
    stages.push(TrainingStage {
        label: format!("frontal {}", Viewpoint::frontal()),
        view: Some(Viewpoint::frontal()),
        warm_start: Some(0),
    });
    for v in Viewpoint::all().filter(|v| *v != Viewpoint::frontal()) {
        stages.push(TrainingStage {
            label: format!("view {}", v),
            view: Some(v),
            warm_start: Some(1),
        });
    }
    stages
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_views_round_trip() {
        let all: Vec<_> = Viewpoint::all().collect();
        assert_eq!(all.len(), 9);
        for (i, v) in all.iter().enumerate() {
            assert_eq!(v.index(), i);
            assert_eq!(Viewpoint::parse(v.as_str()).unwrap(), *v);
            assert_eq!(Viewpoint::from_index(i).unwrap(), *v);
        }
        assert_eq!(Viewpoint::frontal().as_str(), "V5");
        assert!(Viewpoint::new(0).is_err());
        assert!(Viewpoint::new(10).is_err());
        assert!(Viewpoint::parse("W3").is_err());
    }

    #[test]
    fn adaptation_schedule_puts_frontal_before_every_other_view() {
        let stages = adapt_training_order();
        assert_eq!(stages.len(), 10);
        assert_eq!(stages[0].view, None);
        assert_eq!(stages[0].warm_start, None);
        assert_eq!(stages[1].view, Some(Viewpoint::frontal()));
        assert_eq!(stages[1].warm_start, Some(0));
        let mut seen = vec![Viewpoint::frontal()];
        for s in &stages[2..] {
            let v = s.view.expect("view stage");
            assert_ne!(v, Viewpoint::frontal());
            assert_eq!(s.warm_start, Some(1), "non-frontal stages start from frontal");
            seen.push(v);
        }
        seen.sort();
        assert_eq!(seen, Viewpoint::all().collect::<Vec<_>>());
    }
}
