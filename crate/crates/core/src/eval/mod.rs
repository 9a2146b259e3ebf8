//! Metrics, diagnostic tasks, cross-validation, ablation sweeps and
//! reports.

mod auroc;
mod config;
mod cv;
mod folds;
mod report;
mod sweep;
mod tasks;

pub use auroc::{auroc_binary, macro_auroc, MacroAuroc};
pub use config::{DataSection, Extractor, FusionSection, HarnessConfig, OptimSection};
pub use cv::{
    evaluate_folds, extract_dataset, fold_seed, prepare_folds, prepare_set, run_cv, run_cv_model, train_full,
    train_model, FoldMetrics, MetricsReport, ModelKind, PreparedFold,
};
pub use folds::{make_folds, make_stratified_folds, FoldPlan};
pub use report::{emit_report, parse_report_csv, render_markdown, report_paths, write_csv};
pub use sweep::{run_ablation, SWEEP_HIDDEN_DIMS};
pub use tasks::{task_labels, TaskSpec};

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "MEDMIMIC_THREADS";

/// Sizes the global worker pool from `MEDMIMIC_THREADS` when it is set.
/// Results do not depend on the thread count.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // A pool that already exists keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
