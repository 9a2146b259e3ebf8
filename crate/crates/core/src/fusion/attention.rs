use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use super::FusedTensor;
use crate::error::{ensure_finite, Error, Result};
use crate::nn::params::join;
use crate::nn::{softmax_columns, Parameters, Rng, Visitor, VisitorMut};

/// Largest flattened width `M·c` accepted before the `D × D` score matrix
/// is refused.
pub const DEFAULT_D_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    /// Divide by `M` for every patient, padding rows included.
    #[default]
    Full,
    /// Divide by each patient's observed slice count, ignoring padding rows.
    Masked,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionConfig {
    pub pool: PoolMode,
    pub d_cap: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            pool: PoolMode::Full,
            d_cap: DEFAULT_D_CAP,
        }
    }
}

/// 1×1 convolution weights producing queries, keys and values.
///
/// Every `c`-vector at a (slice, patient) position is mapped through the
/// same `c × c` matrix and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bq: Array1<f64>,
    pub bk: Array1<f64>,
    pub bv: Array1<f64>,
    /// Frozen parameters are reported as non-trainable.
    pub trainable: bool,
}

impl FusionParams {
    /// Weights uniform in `±1/√c`, zero biases.
    pub fn init(c: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (c as f64).sqrt();
        let mut w = || Array2::from_shape_simple_fn((c, c), || rng.uniform_in(-bound, bound));
        let (wq, wk, wv) = (w(), w(), w());
        Self {
            wq,
            wk,
            wv,
            bq: Array1::zeros(c),
            bk: Array1::zeros(c),
            bv: Array1::zeros(c),
            trainable: true,
        }
    }

    /// Identity projections, frozen.
    pub fn identity(c: usize) -> Self {
        Self {
            wq: Array2::eye(c),
            wk: Array2::eye(c),
            wv: Array2::eye(c),
            bq: Array1::zeros(c),
            bk: Array1::zeros(c),
            bv: Array1::zeros(c),
            trainable: false,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let c = self.channels();
        Self {
            wq: Array2::zeros((c, c)),
            wk: Array2::zeros((c, c)),
            wv: Array2::zeros((c, c)),
            bq: Array1::zeros(c),
            bk: Array1::zeros(c),
            bv: Array1::zeros(c),
            trainable: self.trainable,
        }
    }

    pub fn channels(&self) -> usize {
        self.bq.len()
    }
}

impl Parameters for FusionParams {
    fn visit(&self, prefix: &str, f: &mut Visitor<'_>) {
        let t = self.trainable;
        f(&join(prefix, "wq"), t, self.wq.view().into_dyn());
        f(&join(prefix, "bq"), t, self.bq.view().into_dyn());
        f(&join(prefix, "wk"), t, self.wk.view().into_dyn());
        f(&join(prefix, "bk"), t, self.bk.view().into_dyn());
        f(&join(prefix, "wv"), t, self.wv.view().into_dyn());
        f(&join(prefix, "bv"), t, self.bv.view().into_dyn());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_>) {
        let t = self.trainable;
        f(&join(prefix, "wq"), t, self.wq.view_mut().into_dyn());
        f(&join(prefix, "bq"), t, self.bq.view_mut().into_dyn());
        f(&join(prefix, "wk"), t, self.wk.view_mut().into_dyn());
        f(&join(prefix, "bk"), t, self.bk.view_mut().into_dyn());
        f(&join(prefix, "wv"), t, self.wv.view_mut().into_dyn());
        f(&join(prefix, "bv"), t, self.bv.view_mut().into_dyn());
    }
}

/// Intermediates kept for the backward pass.
///
/// `positions` holds the fused tensor with one row per (patient, slice)
/// pair, row index `i·M + s`. `q`, `k`, `v` and `output` are the same rows
/// viewed as `I × D`, column index `s·c + ch`.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub positions: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// `D × D`; every column sums to 1.
    pub alpha: Array2<f64>,
    /// Recalibrated tensor before pooling, `I × D`.
    pub output: Array2<f64>,
    /// Pooling weight per slice and patient, `M × I`.
    pub weights: Array2<f64>,
    m: usize,
    c: usize,
}

impl AttentionCache {
    /// The recalibrated tensor in `M × c × I` layout.
    pub fn output_tensor(&self) -> Array3<f64> {
        from_rows(&self.output, self.m, self.c)
    }
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub params: FusionParams,
    /// Gradient with respect to the fused tensor, `M × c × I`.
    pub input: Array3<f64>,
}

/// `M × c × I` to `(I·M) × c`.
fn to_rows(f: &Array3<f64>) -> Array2<f64> {
    let (m, c, n) = f.dim();
    f.view()
        .permuted_axes([2, 0, 1])
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n * m, c))
        .expect("contiguous")
}

/// `(I·M) × c` or `I × (M·c)` back to `M × c × I`.
fn from_rows(rows: &Array2<f64>, m: usize, c: usize) -> Array3<f64> {
    let n = rows.len() / (m * c);
    rows.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, m, c))
        .expect("contiguous")
        .permuted_axes([1, 2, 0])
        .as_standard_layout()
        .into_owned()
}

fn reshape(a: Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    a.as_standard_layout()
        .into_owned()
        .into_shape_with_order((rows, cols))
        .expect("same length")
}

/// Pooling weights `M × I`: `1/M` everywhere, or `1/n_i` on observed rows.
pub fn pool_weights(fused: &FusedTensor, mode: PoolMode) -> Array2<f64> {
    let m = fused.m_max();
    match mode {
        PoolMode::Full => Array2::from_elem((m, fused.n_patients()), 1.0 / m as f64),
        PoolMode::Masked => Array2::from_shape_fn((m, fused.n_patients()), |(s, i)| {
            let n = fused.observed()[i];
            if s < n {
                1.0 / n as f64
            } else {
                0.0
            }
        }),
    }
}

/// Slice pooling without attention: `c × I`.
pub fn pool(fused: &FusedTensor, mode: PoolMode) -> Array2<f64> {
    let w = pool_weights(fused, mode);
    let data = fused.tensor().data();
    let mut out = Array2::zeros((fused.channels(), fused.n_patients()));
    for ((s, ch, i), &v) in data.indexed_iter() {
        out[[ch, i]] += w[[s, i]] * v;
    }
    out
}

/// Projects, scores across the flattened slice-channel axis, recalibrates
/// and pools. Returns the pooled `c × I` features.
///
/// Each patient contributes one row of the `I × D` query, key and value
/// matrices; scores are `KᵀQ / √I` and the softmax runs down each column.
pub fn attention_forward(
    fused: &FusedTensor,
    params: &FusionParams,
    config: &AttentionConfig,
) -> Result<(Array2<f64>, AttentionCache)> {
    let (m, c, n) = fused.tensor().data().dim();
    if params.channels() != c {
        return Err(Error::Shape(format!(
            "fusion parameters expect {} channels, fused tensor has {c}",
            params.channels()
        )));
    }
    let d = m * c;
    if d > config.d_cap {
        return Err(Error::Capacity(format!(
            "flattened width M·c = {m}·{c} = {d} exceeds the cap of {}",
            config.d_cap
        )));
    }
    let positions = to_rows(fused.tensor().data());
    let project = |w: &Array2<f64>, b: &Array1<f64>| reshape(positions.dot(&w.t()) + b, n, d);
    let q = project(&params.wq, &params.bq);
    let k = project(&params.wk, &params.bk);
    let v = project(&params.wv, &params.bv);

    let scores = k.t().dot(&q) / (n as f64).sqrt();
    let alpha = softmax_columns(&scores);
    ensure_finite("attention", alpha.iter())?;
    let output = v.dot(&alpha);

    let weights = pool_weights(fused, config.pool);
    let mut pooled = Array2::zeros((c, n));
    for i in 0..n {
        for s in 0..m {
            let w = weights[[s, i]];
            if w == 0.0 {
                continue;
            }
            for ch in 0..c {
                pooled[[ch, i]] += w * output[[i, s * c + ch]];
            }
        }
    }
    ensure_finite("attention", pooled.iter())?;
    Ok((
        pooled,
        AttentionCache {
            positions,
            q,
            k,
            v,
            alpha,
            output,
            weights,
            m,
            c,
        },
    ))
}

/// Gradients of the fusion parameters and of the fused input given the
/// gradient of the pooled `c × I` output.
pub fn attention_backward(params: &FusionParams, cache: &AttentionCache, grad_pooled: &Array2<f64>) -> AttentionGrads {
    let (m, c) = (cache.m, cache.c);
    let (n, d) = cache.v.dim();
    let mut d_out = Array2::zeros((n, d));
    for i in 0..n {
        for s in 0..m {
            let w = cache.weights[[s, i]];
            for ch in 0..c {
                d_out[[i, s * c + ch]] = w * grad_pooled[[ch, i]];
            }
        }
    }
    let d_v = d_out.dot(&cache.alpha.t());
    let d_alpha = cache.v.t().dot(&d_out);
    let weighted = (&cache.alpha * &d_alpha).sum_axis(Axis(0));
    let d_scores = &cache.alpha * &(d_alpha - &weighted.insert_axis(Axis(0)));
    let scale = 1.0 / (n as f64).sqrt();
    let d_q = cache.k.dot(&d_scores) * scale;
    let d_k = cache.q.dot(&d_scores.t()) * scale;

    let mut grads = params.zeros_like();
    let mut d_positions = Array2::zeros((n * m, c));
    for (dx, w, dw, db) in [
        (d_q, &params.wq, &mut grads.wq, &mut grads.bq),
        (d_k, &params.wk, &mut grads.wk, &mut grads.bk),
        (d_v, &params.wv, &mut grads.wv, &mut grads.bv),
    ] {
        let dx = reshape(dx, n * m, c);
        *dw = dx.t().dot(&cache.positions);
        *db = dx.sum_axis(Axis(0));
        d_positions += &dx.dot(w);
    }
    AttentionGrads {
        params: grads,
        input: from_rows(&d_positions, m, c),
    }
}
