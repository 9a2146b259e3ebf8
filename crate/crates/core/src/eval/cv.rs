use ndarray::{concatenate, ArrayView2, Axis};
use rayon::prelude::*;

use super::auroc::macro_auroc;
use super::config::{Extractor, FusionSection, HarnessConfig};
use super::folds::FoldPlan;
use super::tasks::{task_labels, TaskSpec};
use crate::error::{Error, Result};
use crate::fusion::Modalities;
use crate::io::Dataset;
use crate::nn::Rng;
use crate::pca::{pca_fit, pca_fit_per_patient, PcaModel};
use crate::resfusion::{linear_baseline, predict, train_mfcn, MultimodalSet, ResFusionConfig, TrainHyper, TrainReport};
use crate::tensor::{pad_stack, FeatureMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Mfcn,
    /// Softmax regression on pooled features.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub fold: usize,
    /// `None` when the held-out fold holds a single class.
    pub macro_auroc: Option<f64>,
    /// `None` for classes absent from the held-out fold.
    pub per_class: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub task_id: u8,
    pub label: String,
    pub fingerprint: String,
    pub class_names: Vec<String>,
    pub folds: Vec<FoldMetrics>,
}

fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, sd))
}

impl MetricsReport {
    /// Mean and sample standard deviation of the fold macro-AUROCs.
    pub fn summary(&self) -> Option<(f64, f64)> {
        mean_sd(&self.folds.iter().filter_map(|f| f.macro_auroc).collect::<Vec<_>>())
    }

    pub fn mean(&self) -> f64 {
        self.summary().map_or(f64::NAN, |s| s.0)
    }

    pub fn class_summary(&self, class: usize) -> Option<(f64, f64)> {
        mean_sd(&self.folds.iter().filter_map(|f| f.per_class[class]).collect::<Vec<_>>())
    }
}

/// Train and test sets of one fold.
#[derive(Debug, Clone)]
pub struct PreparedFold {
    pub train: MultimodalSet,
    pub test: MultimodalSet,
}

fn stack_slices(mats: &[&FeatureMatrix]) -> Result<ndarray::Array2<f64>> {
    let views: Vec<ArrayView2<'_, f64>> = mats.iter().map(|m| m.data()).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::Shape(format!("slice widths differ: {e}")))
}

/// Projects one modality's slices. A shared basis is fit on the `train`
/// patients' slices; per-patient mode fits each patient on its own slices.
fn project(
    mats: &[FeatureMatrix],
    train: &[usize],
    fusion: &FusionSection,
) -> Result<(Vec<FeatureMatrix>, Option<PcaModel>)> {
    match fusion.extractor {
        Extractor::External => Ok((mats.to_vec(), None)),
        Extractor::Pca if fusion.per_patient_pca => {
            let views: Vec<_> = mats.iter().map(FeatureMatrix::data).collect();
            let models = pca_fit_per_patient(&views, fusion.b1)?;
            let out = models
                .iter()
                .zip(mats)
                .map(|(m, x)| m.transform(x.data()))
                .collect::<Result<_>>()?;
            Ok((out, None))
        }
        Extractor::Pca => {
            let train_mats: Vec<&FeatureMatrix> = train.iter().map(|&i| &mats[i]).collect();
            let model = pca_fit(stack_slices(&train_mats)?.view(), fusion.b1)?;
            let out = mats.iter().map(|x| model.transform(x.data())).collect::<Result<_>>()?;
            Ok((out, Some(model)))
        }
    }
}

/// Feature extraction, padding to the cohort-wide slice maximum, and
/// clinical imputation, with everything fit on `train` patients only.
/// Returns the set for all patients plus the fitted CT and PET bases.
pub fn prepare_set(
    ds: &Dataset,
    labels: &[usize],
    train: &[usize],
    fusion: &FusionSection,
) -> Result<(MultimodalSet, Option<(PcaModel, PcaModel)>)> {
    let (ct, ct_model) = project(&ds.ct, train, fusion)?;
    let (pet, pet_model) = project(&ds.pet, train, fusion)?;
    let s_ct = ds.ct.iter().map(FeatureMatrix::n_slices).max().unwrap_or(1);
    let s_pet = ds.pet.iter().map(FeatureMatrix::n_slices).max().unwrap_or(1);
    let set = MultimodalSet {
        ct: pad_stack(&ct, s_ct)?,
        pet: pad_stack(&pet, s_pet)?,
        clinical: ds.clinical.impute(train),
        labels: labels.to_vec(),
    };
    Ok((set, ct_model.zip(pet_model)))
}

pub fn prepare_folds(
    ds: &Dataset,
    labels: &[usize],
    plan: &FoldPlan,
    fusion: &FusionSection,
) -> Result<Vec<PreparedFold>> {
    if plan.n_patients() != ds.n_patients() {
        return Err(Error::Shape(format!(
            "fold plan covers {} patients, dataset has {}",
            plan.n_patients(),
            ds.n_patients()
        )));
    }
    (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let train = plan.train_indices(fold);
            let test = plan.test_indices(fold);
            debug_assert!(test.iter().all(|i| !train.contains(i)));
            let (set, _) = prepare_set(ds, labels, &train, fusion)?;
            Ok(PreparedFold {
                train: set.select(&train),
                test: set.select(&test),
            })
        })
        .collect()
}

/// Model seed for one fold, derived from the configured seed.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    Rng::derived(seed, fold as u64).seed()
}

pub fn train_model(
    set: &MultimodalSet,
    cfg: &ResFusionConfig,
    hyper: &TrainHyper,
    modalities: Modalities,
    kind: ModelKind,
) -> Result<TrainReport> {
    match kind {
        ModelKind::Mfcn => train_mfcn(set, cfg, hyper, modalities),
        ModelKind::Linear => linear_baseline(set, cfg, hyper, modalities),
    }
}

/// Trains on every fold's training set in parallel and scores the held-out
/// patients as one eval-mode batch.
pub fn evaluate_folds(
    folds: &[PreparedFold],
    cfg: &ResFusionConfig,
    hyper: &TrainHyper,
    modalities: Modalities,
    kind: ModelKind,
) -> Result<Vec<FoldMetrics>> {
    folds
        .par_iter()
        .enumerate()
        .map(|(fold, data)| {
            let mut fold_cfg = cfg.clone();
            fold_cfg.seed = fold_seed(cfg.seed, fold);
            let report = train_model(&data.train, &fold_cfg, hyper, modalities, kind)?;
            let probs = predict(&report.model, &data.test)?;
            match macro_auroc(probs.view(), &data.test.labels) {
                Ok(m) => Ok(FoldMetrics {
                    fold,
                    macro_auroc: Some(m.value),
                    per_class: m.per_class,
                }),
                Err(Error::DegenerateClass(_)) => Ok(FoldMetrics {
                    fold,
                    macro_auroc: None,
                    per_class: vec![None; cfg.n_classes],
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Cross-validated macro-AUROC of the full network on one task.
pub fn run_cv(
    ds: &Dataset,
    cfg: &HarnessConfig,
    task_id: u8,
    plan: &FoldPlan,
    modalities: Modalities,
) -> Result<MetricsReport> {
    run_cv_model(ds, cfg, task_id, plan, modalities, ModelKind::Mfcn)
}

pub fn run_cv_model(
    ds: &Dataset,
    cfg: &HarnessConfig,
    task_id: u8,
    plan: &FoldPlan,
    modalities: Modalities,
    kind: ModelKind,
) -> Result<MetricsReport> {
    let task = TaskSpec::new(task_id)?;
    let labels = task_labels(ds.etiologies(), task_id)?;
    let folds = prepare_folds(ds, &labels, plan, &cfg.fusion)?;
    let model = ResFusionConfig {
        n_classes: task.n_classes(),
        ..cfg.model.clone()
    };
    let metrics = evaluate_folds(&folds, &model, &cfg.hyper(), modalities, kind)?;
    Ok(MetricsReport {
        task_id,
        label: match kind {
            ModelKind::Mfcn => "mfcn".into(),
            ModelKind::Linear => "linear".into(),
        },
        fingerprint: cfg.fingerprint(task_id, modalities, plan.k, plan.seed),
        class_names: task.class_names.iter().map(|s| s.to_string()).collect(),
        folds: metrics,
    })
}

/// The dataset with CT and PET slices replaced by PCA projections, the
/// bases fit on the `train` patients' slices.
pub fn extract_dataset(ds: &Dataset, b1: usize, train: &[usize]) -> Result<(Dataset, PcaModel, PcaModel)> {
    let fusion = FusionSection {
        extractor: Extractor::Pca,
        b1,
        ..Default::default()
    };
    let (ct, ct_model) = project(&ds.ct, train, &fusion)?;
    let (pet, pet_model) = project(&ds.pet, train, &fusion)?;
    let projected = Dataset {
        ct,
        pet,
        clinical: ds.clinical.clone(),
    };
    Ok((
        projected,
        ct_model.expect("shared basis"),
        pet_model.expect("shared basis"),
    ))
}

/// Trains on every patient, for export as a checkpoint.
pub fn train_full(
    ds: &Dataset,
    cfg: &HarnessConfig,
    task_id: u8,
    modalities: Modalities,
) -> Result<(TrainReport, Option<(PcaModel, PcaModel)>)> {
    let task = TaskSpec::new(task_id)?;
    let labels = task_labels(ds.etiologies(), task_id)?;
    let all: Vec<usize> = (0..ds.n_patients()).collect();
    let (set, bases) = prepare_set(ds, &labels, &all, &cfg.fusion)?;
    let model = ResFusionConfig {
        n_classes: task.n_classes(),
        ..cfg.model.clone()
    };
    Ok((train_mfcn(&set, &model, &cfg.hyper(), modalities)?, bases))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::folds::make_folds;
    use crate::io::{synth_dataset, InteractionMode, SyntheticSpec};

    pub(crate) fn spec(n: usize, mode: InteractionMode, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_patients: n,
            feat_dims: [3, 3, 3],
            slice_range_ct: [2, 4],
            slice_range_pet: [1, 3],
            class_weights: crate::etiology::Etiology::ALL
                .into_iter()
                .map(|e| (e, 1.0 / 7.0))
                .collect(),
            interaction_mode: mode,
            noise_scale: 1.0,
            seed,
            separation: 4.0,
            pixel_dim: None,
            missing_rate: 0.0,
        }
    }

    fn quick() -> HarnessConfig {
        let mut cfg = HarnessConfig::default();
        cfg.model.hidden_dim = 16;
        cfg.model.n_blocks = 2;
        cfg.optim.epochs = 60;
        cfg.optim.lr = 0.01;
        cfg.fusion.extractor = Extractor::External;
        cfg
    }

    #[test]
    fn separable_additive_set_scores_high() {
        let ds = synth_dataset(&spec(80, InteractionMode::Additive, 3)).unwrap();
        let plan = make_folds(80, 5, 1).unwrap();
        let report = run_cv(&ds, &quick(), 1, &plan, Modalities::ALL).unwrap();
        assert_eq!(report.folds.len(), 5);
        assert!(report.mean() >= 0.95, "{report:?}");
    }

    #[test]
    fn training_statistics_never_see_test_patients() {
        let mut ds = synth_dataset(&spec(20, InteractionMode::Additive, 4)).unwrap();
        let plan = make_folds(20, 4, 0).unwrap();
        let labels = task_labels(ds.etiologies(), 1).unwrap();
        let fusion = FusionSection {
            extractor: Extractor::External,
            ..Default::default()
        };
        let before = prepare_folds(&ds, &labels, &plan, &fusion).unwrap();
        // Corrupting held-out patients of fold 0 must leave its training set alone.
        for &i in &plan.test_indices(0) {
            ds.clinical.values.column_mut(i).fill(1e6);
            ds.clinical.missing.column_mut(i).fill(true);
        }
        let after = prepare_folds(&ds, &labels, &plan, &fusion).unwrap();
        assert_eq!(before[0].train, after[0].train);
    }

    #[test]
    fn pca_bases_fit_on_training_slices() {
        let mut s = spec(20, InteractionMode::Additive, 5);
        s.pixel_dim = Some(12);
        let ds = synth_dataset(&s).unwrap();
        let labels = task_labels(ds.etiologies(), 2).unwrap();
        let fusion = FusionSection {
            b1: 3,
            ..Default::default()
        };
        let train: Vec<usize> = (0..15).collect();
        let (set, bases) = prepare_set(&ds, &labels, &train, &fusion).unwrap();
        let (ct_basis, _) = bases.unwrap();
        assert_eq!(ct_basis.n_pixels(), 12);
        assert_eq!(set.ct.feat_dim(), 3);
        let own: Vec<&FeatureMatrix> = train.iter().map(|&i| &ds.ct[i]).collect();
        let refit = pca_fit(stack_slices(&own).unwrap().view(), 3).unwrap();
        assert_eq!(refit, ct_basis);
    }

    #[test]
    fn extraction_keeps_slice_counts() {
        let mut s = spec(10, InteractionMode::Additive, 8);
        s.pixel_dim = Some(9);
        let ds = synth_dataset(&s).unwrap();
        let (out, ct, _) = extract_dataset(&ds, 2, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert_eq!(ct.n_components(), 2);
        for i in 0..10 {
            assert_eq!(out.ct[i].n_slices(), ds.ct[i].n_slices());
            assert_eq!(out.pet[i].feat_dim(), 2);
        }
    }

    #[test]
    fn single_class_test_fold_is_recorded_not_fatal() {
        let ds = synth_dataset(&spec(12, InteractionMode::Additive, 6)).unwrap();
        let labels = task_labels(ds.etiologies(), 1).unwrap();
        // Hand-built plan: fold 0 holds two patients of the same class.
        let first = labels[0];
        let same: Vec<usize> = (0..12).filter(|&i| labels[i] == first).take(2).collect();
        let mut assignments = vec![0; 12];
        let mut seen = [0usize; 2];
        for i in (0..12).filter(|i| !same.contains(i)) {
            assignments[i] = 1 + seen[labels[i]] % 2;
            seen[labels[i]] += 1;
        }
        let plan = FoldPlan {
            k: 3,
            seed: 0,
            assignments,
        };
        let mut cfg = quick();
        cfg.optim.epochs = 2;
        let report = run_cv(&ds, &cfg, 1, &plan, Modalities::ALL).unwrap();
        assert_eq!(report.folds[0].macro_auroc, None);
        assert!(report.folds[0].per_class.iter().all(Option::is_none));
    }

    #[test]
    fn repeat_runs_are_identical() {
        let ds = synth_dataset(&spec(30, InteractionMode::Additive, 7)).unwrap();
        let plan = make_folds(30, 3, 2).unwrap();
        let mut cfg = quick();
        cfg.optim.epochs = 5;
        let a = run_cv(&ds, &cfg, 4, &plan, Modalities::ALL).unwrap();
        let b = run_cv(&ds, &cfg, 4, &plan, Modalities::ALL).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_names.len(), 3);
    }
}
