//! Mask-aware scoring: precision, recall and F1 over answered entries, a
//! threshold sweep, rare/frequent key segments, the three-variant ablation and
//! a histogram of gate activations.

mod ablation;
mod gates;
mod metrics;

pub use ablation::{ablation_suite, gate_values_for, predict_users, AblationReport, AblationRun};
pub use gates::{gate_histogram, GateHistogram, DEFAULT_BINS};
pub use metrics::{
    masked_confusion, precision_recall_f1, segment_eval, threshold_sweep, Averaging, Confusion, MetricsReport,
    Predictions, SegmentReport, ThresholdSweep, DEFAULT_THRESHOLD, DEFAULT_THRESHOLDS,
};
