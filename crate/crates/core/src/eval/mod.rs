//! Metrics, evaluation runs, corruption sweeps and exports.

pub mod metrics;
pub mod plot;
pub mod report;

pub use metrics::{ade, bleu_n, fde, field_accuracy, min_ade, sentence_bleu, FieldTally};
pub use plot::{sweep_csv, trajectory_svg};
pub use report::{
    check_compatible, corruption_sweep, evaluate, evaluate_into, parse_routing, routing_accuracy, routing_name,
    Accumulator, MetricReport, PredictionRecord, REPORT_SCHEMA_VERSION,
};
