use rayon::prelude::*;

use super::config::HarnessConfig;
use super::cv::{evaluate_folds, prepare_folds, MetricsReport, ModelKind};
use super::folds::FoldPlan;
use super::tasks::{task_labels, TaskSpec};
use crate::error::Result;
use crate::fusion::Modalities;
use crate::io::Dataset;
use crate::resfusion::{ablate, ResFusionConfig, Variant};

pub const SWEEP_HIDDEN_DIMS: [usize; 5] = [16, 32, 64, 128, 256];

/// Cross-validates every (variant, hidden width) pair. Fold preparation is
/// shared; the pairs run in parallel. Reports are labelled
/// `<variant>@h<width>` in variant-major order.
pub fn run_ablation(
    ds: &Dataset,
    cfg: &HarnessConfig,
    task_id: u8,
    plan: &FoldPlan,
    modalities: Modalities,
    variants: &[Variant],
    hidden_dims: &[usize],
) -> Result<Vec<MetricsReport>> {
    let task = TaskSpec::new(task_id)?;
    let labels = task_labels(ds.etiologies(), task_id)?;
    let folds = prepare_folds(ds, &labels, plan, &cfg.fusion)?;
    let jobs: Vec<(Variant, usize)> = variants
        .iter()
        .flat_map(|&v| hidden_dims.iter().map(move |&h| (v, h)))
        .collect();
    jobs.par_iter()
        .map(|&(variant, hidden)| {
            let base = ResFusionConfig {
                hidden_dim: hidden,
                n_classes: task.n_classes(),
                ..cfg.model.clone()
            };
            let model = ablate(&base, variant)?;
            let mut job_cfg = cfg.clone();
            job_cfg.model = model.clone();
            let metrics = evaluate_folds(&folds, &model, &cfg.hyper(), modalities, ModelKind::Mfcn)?;
            Ok(MetricsReport {
                task_id,
                label: format!("{variant}@h{hidden}"),
                fingerprint: job_cfg.fingerprint(task_id, modalities, plan.k, plan.seed),
                class_names: task.class_names.iter().map(|s| s.to_string()).collect(),
                folds: metrics,
            })
        })
        .collect()
}
