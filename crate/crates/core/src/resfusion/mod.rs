//! Residual fully-connected classifier over pooled fused features, its
//! composition with attention fusion, training, ablation variants and
//! checkpoints.

mod ablation;
mod checkpoint;
mod train;

pub use ablation::{ablate, Variant};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use train::{
    classify_pooled, linear_baseline, predict, train_mfcn, Classifier, MultimodalSet, TrainHyper, TrainReport,
    TrainedModel,
};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    attention_backward, attention_forward, pool, AttentionCache, AttentionConfig, FusedTensor, FusionParams,
};
use crate::nn::params::join;
use crate::nn::{
    dropout, dropout_backward, relu, relu_backward, softmax_columns, BatchNorm, BatchNormCache, Linear, Mode,
    Parameters, Rng, Visitor, VisitorMut,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResFusionConfig {
    pub hidden_dim: usize,
    pub n_blocks: usize,
    pub dropout_p: f64,
    pub n_classes: usize,
    pub use_residual: bool,
    pub use_attention: bool,
    pub use_dropout: bool,
    pub use_qkv_conv: bool,
    pub seed: u64,
}

impl Default for ResFusionConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            n_blocks: 6,
            dropout_p: 0.2,
            n_classes: 2,
            use_residual: true,
            use_attention: true,
            use_dropout: true,
            use_qkv_conv: true,
            seed: 0,
        }
    }
}

impl ResFusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        if !(1..=16).contains(&self.n_blocks) {
            return Err(Error::Config(format!(
                "n_blocks must be in 1..=16, got {}",
                self.n_blocks
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "n_classes must be at least 2, got {}",
                self.n_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// Dropout probability actually applied.
    pub fn effective_dropout(&self) -> f64 {
        if self.use_dropout {
            self.dropout_p
        } else {
            0.0
        }
    }

    /// Trainable parameter count for fused width `c`.
    pub fn parameter_count(&self, c: usize) -> usize {
        let h = self.hidden_dim;
        let fusion = if self.use_attention && self.use_qkv_conv {
            3 * (c * c + c)
        } else {
            0
        };
        let hidden = c * h + h + 2 * h;
        let blocks = self.n_blocks * (2 * (h * h + h) + 2 * (h + h));
        let head = self.n_classes * h + self.n_classes;
        fusion + hidden + blocks + head
    }
}

/// `Linear → BN → ReLU → Dropout → Linear → BN (+ residual) → ReLU`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub l1: Linear,
    pub bn1: BatchNorm,
    pub l2: Linear,
    pub bn2: BatchNorm,
}

impl Block {
    fn zeros_like(&self) -> Self {
        Self {
            l1: Linear::zeros(self.l1.out_dim(), self.l1.in_dim()),
            bn1: self.bn1.zeros_like(),
            l2: Linear::zeros(self.l2.out_dim(), self.l2.in_dim()),
            bn2: self.bn2.zeros_like(),
        }
    }
}

impl Parameters for Block {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        self.l1.visit(&join(prefix, "l1"), f);
        self.bn1.visit(&join(prefix, "bn1"), f);
        self.l2.visit(&join(prefix, "l2"), f);
        self.bn2.visit(&join(prefix, "bn2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_>) {
        self.l1.visit_mut(&join(prefix, "l1"), f);
        self.bn1.visit_mut(&join(prefix, "bn1"), f);
        self.l2.visit_mut(&join(prefix, "l2"), f);
        self.bn2.visit_mut(&join(prefix, "bn2"), f);
    }
}

/// All weights of the composed network. The fusion projections are always
/// allocated; they are frozen identities when attention or the Q/K/V
/// projections are switched off.
#[derive(Debug, Clone, PartialEq)]
pub struct ResFusionParams {
    pub fusion: FusionParams,
    pub hidden: Linear,
    pub hidden_bn: BatchNorm,
    pub blocks: Vec<Block>,
    pub head: Linear,
}

impl ResFusionParams {
    pub fn input_dim(&self) -> usize {
        self.hidden.in_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fusion: self.fusion.zeros_like(),
            hidden: Linear::zeros(self.hidden.out_dim(), self.hidden.in_dim()),
            hidden_bn: self.hidden_bn.zeros_like(),
            blocks: self.blocks.iter().map(Block::zeros_like).collect(),
            head: Linear::zeros(self.head.out_dim(), self.head.in_dim()),
        }
    }
}

impl Parameters for ResFusionParams {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        self.fusion.visit(&join(prefix, "fusion"), f);
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.hidden_bn.visit(&join(prefix, "hidden_bn"), f);
        for (k, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{k}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_>) {
        self.fusion.visit_mut(&join(prefix, "fusion"), f);
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        self.hidden_bn.visit_mut(&join(prefix, "hidden_bn"), f);
        for (k, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{k}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// He-uniform linear layers, unit-gamma batch norms, and fusion projections
/// per the attention and Q/K/V flags.
pub fn build(cfg: &ResFusionConfig, input_dim: usize, rng: &mut Rng) -> Result<ResFusionParams> {
    cfg.validate()?;
    if input_dim == 0 {
        return Err(Error::Shape("input width must be at least 1".into()));
    }
    let h = cfg.hidden_dim;
    let fusion = if cfg.use_attention && cfg.use_qkv_conv {
        FusionParams::init(input_dim, rng)
    } else {
        FusionParams::identity(input_dim)
    };
    let hidden = Linear::he_uniform(h, input_dim, rng);
    let blocks = (0..cfg.n_blocks)
        .map(|_| Block {
            l1: Linear::he_uniform(h, h, rng),
            bn1: BatchNorm::new(h),
            l2: Linear::he_uniform(h, h, rng),
            bn2: BatchNorm::new(h),
        })
        .collect();
    Ok(ResFusionParams {
        fusion,
        hidden,
        hidden_bn: BatchNorm::new(h),
        blocks,
        head: Linear::he_uniform(cfg.n_classes, h, rng),
    })
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Array2<f64>,
    bn1_in_out: (BatchNormCache, Array2<f64>),
    mask: Option<Array2<f64>>,
    dropped: Array2<f64>,
    bn2: BatchNormCache,
    pre_relu: Array2<f64>,
}

/// Intermediates of a classifier forward pass.
#[derive(Debug, Clone)]
pub struct ClassifierCache {
    input: Array2<f64>,
    hidden_bn: BatchNormCache,
    hidden_pre: Array2<f64>,
    blocks: Vec<BlockCache>,
    last: Array2<f64>,
}

/// Logits `C × B` for pooled features `c × B`. Train mode updates the batch
/// norm running statistics and draws dropout masks from `rng`.
pub fn forward_logits(
    p: &mut ResFusionParams,
    cfg: &ResFusionConfig,
    x: &Array2<f64>,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Array2<f64>, ClassifierCache)> {
    let z = p.hidden.forward(x)?;
    let (hidden_pre, hidden_bn) = p.hidden_bn.forward(&z, mode)?;
    let mut h = relu(&hidden_pre);
    let p_drop = cfg.effective_dropout();
    let mut caches = Vec::with_capacity(p.blocks.len());
    for block in p.blocks.iter_mut() {
        let z1 = block.l1.forward(&h)?;
        let (r1, bn1) = block.bn1.forward(&z1, mode)?;
        let (dropped, mask) = dropout(&relu(&r1), p_drop, rng, mode)?;
        let z2 = block.l2.forward(&dropped)?;
        let (mut pre_relu, bn2) = block.bn2.forward(&z2, mode)?;
        if cfg.use_residual {
            pre_relu += &h;
        }
        let out = relu(&pre_relu);
        caches.push(BlockCache {
            input: std::mem::replace(&mut h, out),
            bn1_in_out: (bn1, r1),
            mask,
            dropped,
            bn2,
            pre_relu,
        });
    }
    let logits = p.head.forward(&h)?;
    crate::error::ensure_finite("classifier", logits.iter())?;
    Ok((
        logits,
        ClassifierCache {
            input: x.clone(),
            hidden_bn,
            hidden_pre,
            blocks: caches,
            last: h,
        },
    ))
}

/// Class probabilities `C × B`; every column sums to 1.
pub fn forward(
    p: &mut ResFusionParams,
    cfg: &ResFusionConfig,
    x: &Array2<f64>,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Array2<f64>> {
    Ok(softmax_columns(&forward_logits(p, cfg, x, mode, rng)?.0))
}

/// Gradients of the classifier weights and of its input. The fusion entry
/// of the returned structure is left at zero.
pub fn backward_logits(
    p: &ResFusionParams,
    cfg: &ResFusionConfig,
    cache: &ClassifierCache,
    grad_logits: &Array2<f64>,
) -> (ResFusionParams, Array2<f64>) {
    let mut g = p.zeros_like();
    let (head, mut dh) = p.head.backward(&cache.last, grad_logits);
    g.head = head;
    for (k, (block, bc)) in p.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let d_pre = relu_backward(&bc.pre_relu, &dh);
        let (bn2, d_z2) = block.bn2.backward(&bc.bn2, &d_pre);
        let (l2, d_dropped) = block.l2.backward(&bc.dropped, &d_z2);
        let d_a1 = dropout_backward(bc.mask.as_ref(), &d_dropped);
        let (bn1_cache, r1) = &bc.bn1_in_out;
        let d_r1 = relu_backward(r1, &d_a1);
        let (bn1, d_z1) = block.bn1.backward(bn1_cache, &d_r1);
        let (l1, mut d_in) = block.l1.backward(&bc.input, &d_z1);
        if cfg.use_residual {
            d_in += &d_pre;
        }
        g.blocks[k] = Block { l1, bn1, l2, bn2 };
        dh = d_in;
    }
    let d_pre = relu_backward(&cache.hidden_pre, &dh);
    let (hidden_bn, d_z) = p.hidden_bn.backward(&cache.hidden_bn, &d_pre);
    let (hidden, dx) = p.hidden.backward(&cache.input, &d_z);
    g.hidden = hidden;
    g.hidden_bn = hidden_bn;
    (g, dx)
}

/// Intermediates of the composed network.
#[derive(Debug, Clone)]
pub struct MfcnCache {
    attention: Option<AttentionCache>,
    classifier: ClassifierCache,
}

/// Fused tensor to logits: attention recalibration and slice pooling (or
/// pooling alone when attention is off), then the classifier.
pub fn mfcn_forward(
    p: &mut ResFusionParams,
    cfg: &ResFusionConfig,
    attention: &AttentionConfig,
    fused: &FusedTensor,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Array2<f64>, MfcnCache)> {
    let (pooled, attention_cache) = if cfg.use_attention {
        let (pooled, cache) = attention_forward(fused, &p.fusion, attention)?;
        (pooled, Some(cache))
    } else {
        (pool(fused, attention.pool), None)
    };
    let (logits, classifier) = forward_logits(p, cfg, &pooled, mode, rng)?;
    Ok((
        logits,
        MfcnCache {
            attention: attention_cache,
            classifier,
        },
    ))
}

pub fn mfcn_backward(
    p: &ResFusionParams,
    cfg: &ResFusionConfig,
    cache: &MfcnCache,
    grad_logits: &Array2<f64>,
) -> ResFusionParams {
    let (mut g, d_pooled) = backward_logits(p, cfg, &cache.classifier, grad_logits);
    if let Some(att) = &cache.attention {
        if p.fusion.trainable {
            g.fusion = attention_backward(&p.fusion, att, &d_pooled).params;
        }
    }
    g
}
