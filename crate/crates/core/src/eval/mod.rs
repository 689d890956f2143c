//! Error rates, prosody and mel distances, and report tables.

pub mod edit;
pub mod metrics;
pub mod report;

pub use edit::{cer, edit_distance, error_rate, normalize_text, per, wer, EditCounts};
pub use metrics::{duration_deviation, duration_map, f0_rmse, mel_l1, spectral_template_distance};
pub use report::{build_report, EvalReport, SystemMetrics};
