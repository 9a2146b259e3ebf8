use std::time::Instant;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{build, forward_logits, mfcn_backward, mfcn_forward, ResFusionConfig, ResFusionParams};
use crate::error::{Error, Result};
use crate::fusion::{
    align_and_fuse, pool, AttentionConfig, FusedTensor, FusionStats, Modalities, PoolMode, DEFAULT_D_CAP,
};
use crate::nn::{softmax_columns, softmax_cross_entropy, trainable_count, Adam, Linear, LrSchedule, Mode, Rng};
use crate::tensor::FeatureTensor;

/// Inputs for one group of patients: padded CT and PET feature tensors,
/// the clinical matrix (`a × I`, already imputed) and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSet {
    pub ct: FeatureTensor,
    pub pet: FeatureTensor,
    pub clinical: Array2<f64>,
    pub labels: Vec<usize>,
}

impl MultimodalSet {
    pub fn n_patients(&self) -> usize {
        self.labels.len()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            ct: self.ct.select_patients(indices),
            pet: self.pet.select_patients(indices),
            clinical: self.clinical.select(Axis(1), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    fn fuse(&self, stats: &FusionStats, modalities: Modalities) -> Result<FusedTensor> {
        align_and_fuse(&self.ct, &self.pet, self.clinical.view(), stats, modalities)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub lr: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub pool: PoolMode,
    pub d_cap: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lr: 0.001,
            lr_min: 0.0,
            epochs: 200,
            pool: PoolMode::Full,
            d_cap: DEFAULT_D_CAP,
        }
    }
}

impl TrainHyper {
    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            pool: self.pool,
            d_cap: self.d_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Mfcn(ResFusionParams),
    /// Softmax regression on slice-pooled fused features.
    Linear(Linear),
}

/// Everything needed to score new patients.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ResFusionConfig,
    pub attention: AttentionConfig,
    pub modalities: Modalities,
    pub stats: FusionStats,
    pub classifier: Classifier,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Training loss at the start of each epoch.
    pub losses: Vec<f64>,
    pub lrs: Vec<f64>,
    pub seconds: f64,
    pub model: TrainedModel,
}

fn check_labels(labels: &[usize], n_classes: usize) -> Result<Array2<f64>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Label(format!("label {bad} outside 0..{n_classes}")));
    }
    if labels.windows(2).all(|w| w[0] == w[1]) {
        return Err(Error::LabelDegeneracy(format!(
            "training set of {} patients holds a single class",
            labels.len()
        )));
    }
    Ok(Array2::from_shape_fn((n_classes, labels.len()), |(c, i)| {
        if labels[i] == c {
            1.0
        } else {
            0.0
        }
    }))
}

/// Fits normalization on `set`, then trains the full network with
/// full-batch Adam under a cosine learning-rate schedule stepped per epoch.
pub fn train_mfcn(
    set: &MultimodalSet,
    cfg: &ResFusionConfig,
    hyper: &TrainHyper,
    modalities: Modalities,
) -> Result<TrainReport> {
    let start = Instant::now();
    cfg.validate()?;
    let targets = check_labels(&set.labels, cfg.n_classes)?;
    let stats = FusionStats::fit(&set.ct, &set.pet, set.clinical.view())?;
    let fused = set.fuse(&stats, modalities)?;
    let attention = hyper.attention();

    let mut params = build(cfg, fused.channels(), &mut Rng::derived(cfg.seed, 0))?;
    let mut dropout_rng = Rng::derived(cfg.seed, 1);
    let schedule = LrSchedule::new(hyper.lr, hyper.lr_min, hyper.epochs)?;
    let mut adam = Adam::new(trainable_count(&params));
    let mut losses = Vec::with_capacity(hyper.epochs);
    let mut lrs = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let lr = schedule.lr(epoch)?;
        let (logits, cache) = mfcn_forward(&mut params, cfg, &attention, &fused, Mode::Train, &mut dropout_rng)?;
        let ce = softmax_cross_entropy(&logits, &targets)?;
        if !ce.loss.is_finite() {
            return Err(Error::Numeric { layer: "loss".into() });
        }
        let grads = mfcn_backward(&params, cfg, &cache, &ce.grad_logits);
        adam.step(&mut params, &grads, lr)?;
        losses.push(ce.loss);
        lrs.push(lr);
    }
    Ok(TrainReport {
        losses,
        lrs,
        seconds: start.elapsed().as_secs_f64(),
        model: TrainedModel {
            config: cfg.clone(),
            attention,
            modalities,
            stats,
            classifier: Classifier::Mfcn(params),
        },
    })
}

/// Softmax regression on slice-pooled fused features, trained with the same
/// optimizer and schedule. Only `n_classes` and `seed` are read from `cfg`.
pub fn linear_baseline(
    set: &MultimodalSet,
    cfg: &ResFusionConfig,
    hyper: &TrainHyper,
    modalities: Modalities,
) -> Result<TrainReport> {
    let start = Instant::now();
    let targets = check_labels(&set.labels, cfg.n_classes)?;
    let stats = FusionStats::fit(&set.ct, &set.pet, set.clinical.view())?;
    let x = pool(&set.fuse(&stats, modalities)?, hyper.pool);

    let mut layer = Linear::he_uniform(cfg.n_classes, x.nrows(), &mut Rng::derived(cfg.seed, 0));
    let schedule = LrSchedule::new(hyper.lr, hyper.lr_min, hyper.epochs)?;
    let mut adam = Adam::new(trainable_count(&layer));
    let mut losses = Vec::with_capacity(hyper.epochs);
    let mut lrs = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let lr = schedule.lr(epoch)?;
        let ce = softmax_cross_entropy(&layer.forward(&x)?, &targets)?;
        if !ce.loss.is_finite() {
            return Err(Error::Numeric { layer: "loss".into() });
        }
        let (grads, _) = layer.backward(&x, &ce.grad_logits);
        adam.step(&mut layer, &grads, lr)?;
        losses.push(ce.loss);
        lrs.push(lr);
    }
    Ok(TrainReport {
        losses,
        lrs,
        seconds: start.elapsed().as_secs_f64(),
        model: TrainedModel {
            config: cfg.clone(),
            attention: hyper.attention(),
            modalities,
            stats,
            classifier: Classifier::Linear(layer),
        },
    })
}

/// Class probabilities `C × I` in eval mode, using the normalization fit at
/// training time. Labels in `set` are ignored.
pub fn predict(model: &TrainedModel, set: &MultimodalSet) -> Result<Array2<f64>> {
    let fused = set.fuse(&model.stats, model.modalities)?;
    let logits = match &model.classifier {
        Classifier::Mfcn(params) => {
            let mut params = params.clone();
            let mut unused = Rng::new(0);
            mfcn_forward(
                &mut params,
                &model.config,
                &model.attention,
                &fused,
                Mode::Eval,
                &mut unused,
            )?
            .0
        }
        Classifier::Linear(layer) => layer.forward(&pool(&fused, model.attention.pool))?,
    };
    Ok(softmax_columns(&logits))
}

/// Eval-mode classifier output on already pooled features.
pub fn classify_pooled(params: &ResFusionParams, cfg: &ResFusionConfig, x: &Array2<f64>) -> Result<Array2<f64>> {
    let mut params = params.clone();
    Ok(softmax_columns(
        &forward_logits(&mut params, cfg, x, Mode::Eval, &mut Rng::new(0))?.0,
    ))
}
