//! Per-AU binary detectors: head adaptation for transfer, the shared-trunk
//! HydraNet with growable heads, independent per-unit networks, and the
//! training loop (Adam, linear decay, plateau early stop).

mod au;
mod data;
mod ensemble;
mod hydra;
mod train;

pub use au::{AuCode, AuSet};
pub use data::{
    expression_class, prepare_class_examples, prepare_detector_examples, FrameCache,
};
pub use ensemble::AuNetEnsemble;
pub use hydra::{train_hydra_head, HydraNet};
pub use train::{
    adapt_head, predict_frame, train_classifier, train_detector, write_log_csv, ClassExample,
    EpochStats, TrainConfig, TrainOutcome,
};
