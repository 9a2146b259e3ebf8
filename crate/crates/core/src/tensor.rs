//! Dense low-order tensors and the alignment primitives of the fusion
//! pipeline: zero-padded stacking, per-coordinate normalization, feature
//! concatenation, clinical broadcasting and slice pooling.
//!
//! Feature tensors are laid out `(slice, feature, patient)`, row-major with
//! the patient index fastest.

use ndarray::{s, Array2, Array3, ArrayD, ArrayView2, Axis, IxDyn};

use crate::error::{Error, Result};

/// Guard below which a standard deviation is treated as zero.
pub const STD_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// An order-1 to order-3 dense tensor of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
    precision: Precision,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::Shape(format!("tensor order must be 1..=3, got {}", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero extent in dims {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {expected} elements, got {}",
                data.len()
            )));
        }
        crate::error::ensure_finite("tensor", &data)?;
        Ok(Self {
            dims,
            data,
            precision: Precision::F64,
        })
    }

    pub fn from_array(array: ArrayD<f64>) -> Result<Self> {
        let dims = array.shape().to_vec();
        let data = array.as_standard_layout().iter().copied().collect();
        Self::new(dims, data)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Rounds every element through `f32`, as stored on disk.
    pub fn to_f32_precision(&self) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| v as f32 as f64).collect(),
            precision: Precision::F32,
        }
    }

    pub(crate) fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn to_array(&self) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&self.dims), self.data.clone()).expect("dims were validated against data length")
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// Per-patient stack of slice feature vectors, `n_slices × feat_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Shape(format!(
                "feature matrix needs at least one slice and one feature, got {:?}",
                data.shape()
            )));
        }
        crate::error::ensure_finite("feature matrix", data.iter())?;
        Ok(Self { data })
    }

    pub fn n_slices(&self) -> usize {
        self.data.nrows()
    }

    pub fn feat_dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_array(self.data.clone().into_dyn()).expect("validated on construction")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.dims() {
            [rows, cols] => Self::new(Array2::from_shape_vec((rows, cols), t.data().to_vec()).expect("dims validated")),
            // An order-3 tensor is a stack of 2-D slices; flatten each slice.
            [rows, h, w] => {
                Self::new(Array2::from_shape_vec((rows, h * w), t.data().to_vec()).expect("dims validated"))
            }
            _ => Err(Error::Shape(format!(
                "expected an order-2 or order-3 tensor, got dims {:?}",
                t.dims()
            ))),
        }
    }
}

/// Zero-padded per-modality stack, `s_max × feat_dim × n_patients`.
///
/// Rows at or beyond a patient's true slice count are all zero. A feature
/// width of zero is allowed and denotes an absent modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    data: Array3<f64>,
    slice_counts: Vec<usize>,
}

impl FeatureTensor {
    pub fn new(data: Array3<f64>, slice_counts: Vec<usize>) -> Result<Self> {
        let (s_max, feat_dim, n_patients) = data.dim();
        if s_max == 0 || n_patients == 0 {
            return Err(Error::Shape(format!(
                "feature tensor needs s_max ≥ 1 and at least one patient, got {:?}",
                data.shape()
            )));
        }
        if slice_counts.len() != n_patients {
            return Err(Error::Shape(format!(
                "{} slice counts for {n_patients} patients",
                slice_counts.len()
            )));
        }
        if let Some(&c) = slice_counts.iter().find(|&&c| c > s_max) {
            return Err(Error::Capacity(format!("slice count {c} exceeds s_max {s_max}")));
        }
        crate::error::ensure_finite("feature tensor", data.iter())?;
        for (i, &count) in slice_counts.iter().enumerate() {
            if feat_dim > 0 && data.slice(s![count.., .., i]).iter().any(|&v| v != 0.0) {
                return Err(Error::Consistency(format!(
                    "patient {i} has non-zero padding rows beyond slice {count}"
                )));
            }
        }
        Ok(Self { data, slice_counts })
    }

    pub fn s_max(&self) -> usize {
        self.data.dim().0
    }

    pub fn feat_dim(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_patients(&self) -> usize {
        self.data.dim().2
    }

    pub fn slice_counts(&self) -> &[usize] {
        &self.slice_counts
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array3<f64> {
        self.data
    }

    /// The patient-`i` matrix, `s_max × feat_dim`.
    pub fn patient(&self, i: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(2), i)
    }

    /// Patients in `indices` order.
    pub fn select_patients(&self, indices: &[usize]) -> Self {
        Self {
            data: self.data.select(Axis(2), indices),
            slice_counts: indices.iter().map(|&i| self.slice_counts[i]).collect(),
        }
    }

    /// Appends all-zero rows up to `s_max` slices (the zero-padding mask).
    pub fn extend_rows(&self, s_max: usize) -> Result<Self> {
        if s_max < self.s_max() {
            return Err(Error::Capacity(format!(
                "cannot shrink s_max from {} to {s_max}",
                self.s_max()
            )));
        }
        let mut data = Array3::zeros((s_max, self.feat_dim(), self.n_patients()));
        data.slice_mut(s![..self.s_max(), .., ..]).assign(&self.data);
        Ok(Self {
            data,
            slice_counts: self.slice_counts.clone(),
        })
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_array(self.data.clone().into_dyn())
    }
}

/// Zero-pads every matrix to `s_max` rows and stacks the patients.
pub fn pad_stack(mats: &[FeatureMatrix], s_max: usize) -> Result<FeatureTensor> {
    let first = mats
        .first()
        .ok_or_else(|| Error::Shape("no feature matrices to stack".into()))?;
    let feat_dim = first.feat_dim();
    if let Some(m) = mats.iter().find(|m| m.feat_dim() != feat_dim) {
        return Err(Error::Shape(format!(
            "mixed feature widths {feat_dim} and {}",
            m.feat_dim()
        )));
    }
    if let Some(m) = mats.iter().find(|m| m.n_slices() > s_max) {
        return Err(Error::Capacity(format!(
            "{} slices do not fit in s_max {s_max}",
            m.n_slices()
        )));
    }
    let mut data = Array3::zeros((s_max, feat_dim, mats.len()));
    for (i, m) in mats.iter().enumerate() {
        data.slice_mut(s![..m.n_slices(), .., i]).assign(&m.data);
    }
    let slice_counts = mats.iter().map(FeatureMatrix::n_slices).collect();
    Ok(FeatureTensor { data, slice_counts })
}

/// Location and scale per `(slice, feature)` coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
    pub epsilon: f64,
}

impl NormStats {
    pub fn identity(s_max: usize, feat_dim: usize) -> Self {
        Self {
            mean: Array2::zeros((s_max, feat_dim)),
            std: Array2::ones((s_max, feat_dim)),
            epsilon: STD_EPSILON,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mean.dim()
    }
}

/// Fits mean and population standard deviation across patients for every
/// `(slice, feature)` coordinate.
///
/// Only patients whose slice count covers a row contribute to that row's
/// statistics, so padding never leaks into the location estimate.
/// Coordinates with no observations get `(0, 1)`; a standard deviation
/// under [`STD_EPSILON`] is replaced by 1.
pub fn fit_norm_stats(t: &FeatureTensor) -> Result<NormStats> {
    if t.n_patients() < 2 {
        return Err(Error::InsufficientData(format!(
            "normalization needs at least 2 patients, got {}",
            t.n_patients()
        )));
    }
    let (s_max, feat_dim, _) = t.data.dim();
    let mut stats = NormStats::identity(s_max, feat_dim);
    for s in 0..s_max {
        let observed: Vec<usize> = (0..t.n_patients()).filter(|&i| t.slice_counts[i] > s).collect();
        if observed.is_empty() {
            continue;
        }
        let n = observed.len() as f64;
        for f in 0..feat_dim {
            let mean = observed.iter().map(|&i| t.data[[s, f, i]]).sum::<f64>() / n;
            let var = observed
                .iter()
                .map(|&i| (t.data[[s, f, i]] - mean).powi(2))
                .sum::<f64>()
                / n;
            let std = var.sqrt();
            stats.mean[[s, f]] = mean;
            stats.std[[s, f]] = if std < stats.epsilon { 1.0 } else { std };
        }
    }
    Ok(stats)
}

fn check_stats(t: &FeatureTensor, stats: &NormStats) -> Result<()> {
    if stats.shape() != (t.s_max(), t.feat_dim()) || stats.std.dim() != stats.mean.dim() {
        return Err(Error::Shape(format!(
            "norm stats {:?} do not match tensor ({}, {})",
            stats.shape(),
            t.s_max(),
            t.feat_dim()
        )));
    }
    Ok(())
}

/// `(t − mean) / std` on observed rows; padding rows stay zero.
pub fn znormalize(t: &FeatureTensor, stats: &NormStats) -> Result<FeatureTensor> {
    check_stats(t, stats)?;
    let mut data = t.data.clone();
    for (i, &count) in t.slice_counts.iter().enumerate() {
        let mut rows = data.slice_mut(s![..count, .., i]);
        rows -= &stats.mean.slice(s![..count, ..]);
        rows /= &stats.std.slice(s![..count, ..]);
    }
    FeatureTensor::new(data, t.slice_counts.clone())
}

/// Inverse of [`znormalize`]: `out · std + mean` on observed rows.
pub fn denormalize(t: &FeatureTensor, stats: &NormStats) -> Result<FeatureTensor> {
    check_stats(t, stats)?;
    let mut data = t.data.clone();
    for (i, &count) in t.slice_counts.iter().enumerate() {
        let mut rows = data.slice_mut(s![..count, .., i]);
        rows *= &stats.std.slice(s![..count, ..]);
        rows += &stats.mean.slice(s![..count, ..]);
    }
    FeatureTensor::new(data, t.slice_counts.clone())
}

/// Concatenates along the feature axis; `x` occupies the leading columns.
pub fn concat_features(x: &FeatureTensor, y: &FeatureTensor) -> Result<FeatureTensor> {
    if x.s_max() != y.s_max() || x.n_patients() != y.n_patients() {
        return Err(Error::Shape(format!(
            "cannot concatenate {:?} with {:?}",
            x.data.shape(),
            y.data.shape()
        )));
    }
    let data = ndarray::concatenate(Axis(1), &[x.data.view(), y.data.view()]).expect("leading and trailing axes agree");
    let slice_counts = x
        .slice_counts
        .iter()
        .zip(&y.slice_counts)
        .map(|(&a, &b)| match (x.feat_dim(), y.feat_dim()) {
            (0, _) => b,
            (_, 0) => a,
            _ => a.max(b),
        })
        .collect();
    Ok(FeatureTensor { data, slice_counts })
}

/// Broadcasts the `a × I` clinical matrix to every one of `s_max` slices.
pub fn expand_clinical(clinical: ArrayView2<'_, f64>, s_max: usize) -> Result<FeatureTensor> {
    let (a, n_patients) = clinical.dim();
    if n_patients == 0 || s_max == 0 {
        return Err(Error::Shape(format!(
            "cannot expand a {a}×{n_patients} clinical matrix to {s_max} slices"
        )));
    }
    let data = clinical
        .insert_axis(Axis(0))
        .broadcast((s_max, a, n_patients))
        .expect("broadcast along a new leading axis")
        .to_owned();
    FeatureTensor::new(data, vec![s_max; n_patients])
}

/// Mean over the slice axis, dividing by `s_max` (padding rows included).
pub fn global_avg_pool(t: &FeatureTensor) -> Array2<f64> {
    t.data.sum_axis(Axis(0)) / t.s_max() as f64
}

/// Mean over each patient's observed slices only.
pub fn masked_avg_pool(t: &FeatureTensor) -> Array2<f64> {
    let mut out = t.data.sum_axis(Axis(0));
    for (i, &count) in t.slice_counts.iter().enumerate() {
        let mut col = out.column_mut(i);
        if count == 0 {
            col.fill(0.0);
        } else {
            col /= count as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Rng;
    use ndarray::array;

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> FeatureMatrix {
        FeatureMatrix::new(Array2::from_shape_fn((rows, cols), |_| rng.normal())).unwrap()
    }

    fn random_tensor(rng: &mut Rng, s: usize, f: usize, n: usize) -> FeatureTensor {
        FeatureTensor::new(Array3::from_shape_fn((s, f, n), |_| rng.normal()), vec![s; n]).unwrap()
    }

    #[test]
    fn pad_stack_copies_rows_and_zero_fills() {
        let m = FeatureMatrix::new(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let t = pad_stack(&[m], 4).unwrap();
        assert_eq!(t.data().shape(), &[4, 3, 1]);
        assert_eq!(t.patient(0).row(1).to_vec(), vec![4.0, 5.0, 6.0]);
        assert!(t.patient(0).slice(s![2.., ..]).iter().all(|&v| v == 0.0));
        assert_eq!(t.slice_counts(), &[2]);
    }

    #[test]
    fn pad_stack_dinov2_width_shape() {
        let mut rng = Rng::new(3);
        let mats: Vec<_> = (0..416).map(|i| random_matrix(&mut rng, 1 + i % 5, 192)).collect();
        let n_max = mats.iter().map(FeatureMatrix::n_slices).max().unwrap();
        let t = pad_stack(&mats, n_max).unwrap();
        assert_eq!(t.data().shape(), &[n_max, 192, 416]);
    }

    #[test]
    fn pad_stack_rejects_mixed_widths_and_overflow() {
        let mut rng = Rng::new(1);
        let a = random_matrix(&mut rng, 2, 512);
        let b = random_matrix(&mut rng, 2, 768);
        assert!(matches!(pad_stack(&[a.clone(), b], 4), Err(Error::Shape(_))));
        assert!(matches!(pad_stack(&[a], 1), Err(Error::Capacity(_))));
    }

    #[test]
    fn norm_stats_of_identical_patients_use_guard() {
        let m = FeatureMatrix::new(array![[1.0, -2.0], [3.0, 0.5]]).unwrap();
        let t = pad_stack(&[m.clone(), m.clone(), m], 2).unwrap();
        let stats = fit_norm_stats(&t).unwrap();
        assert_eq!(stats.std, Array2::ones((2, 2)));
        assert_eq!(stats.mean, array![[1.0, -2.0], [3.0, 0.5]]);
        let z = znormalize(&t, &stats).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn norm_stats_two_patients() {
        let a = FeatureMatrix::new(array![[0.0]]).unwrap();
        let b = FeatureMatrix::new(array![[2.0]]).unwrap();
        let stats = fit_norm_stats(&pad_stack(&[a, b], 1).unwrap()).unwrap();
        assert_eq!(stats.mean[[0, 0]], 1.0);
        assert_eq!(stats.std[[0, 0]], 1.0);
    }

    #[test]
    fn norm_stats_need_two_patients() {
        let a = FeatureMatrix::new(array![[0.0]]).unwrap();
        assert!(matches!(
            fit_norm_stats(&pad_stack(&[a], 1).unwrap()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn znormalize_moments_match_direct_recomputation() {
        let mut rng = Rng::new(11);
        let t = random_tensor(&mut rng, 3, 4, 25);
        let z = znormalize(&t, &fit_norm_stats(&t).unwrap()).unwrap();
        for s in 0..3 {
            for f in 0..4 {
                let lane: Vec<f64> = (0..25).map(|i| z.data()[[s, f, i]]).collect();
                let mean = lane.iter().sum::<f64>() / 25.0;
                let var = lane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 25.0;
                assert!(mean.abs() < 1e-6);
                assert!((var - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn znormalize_with_identity_stats_is_identity_and_inverts() {
        let mut rng = Rng::new(5);
        let t = random_tensor(&mut rng, 2, 3, 4);
        assert_eq!(znormalize(&t, &NormStats::identity(2, 3)).unwrap(), t);
        let stats = fit_norm_stats(&t).unwrap();
        let back = denormalize(&znormalize(&t, &stats).unwrap(), &stats).unwrap();
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn znormalize_rejects_mismatched_stats() {
        let mut rng = Rng::new(5);
        let t = random_tensor(&mut rng, 2, 3, 4);
        assert!(matches!(
            znormalize(&t, &NormStats::identity(3, 3)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn znormalize_keeps_padding_zero() {
        let a = FeatureMatrix::new(array![[1.0], [5.0]]).unwrap();
        let b = FeatureMatrix::new(array![[3.0]]).unwrap();
        let c = FeatureMatrix::new(array![[2.0], [9.0]]).unwrap();
        let t = pad_stack(&[a, b, c], 2).unwrap();
        let z = znormalize(&t, &fit_norm_stats(&t).unwrap()).unwrap();
        assert_eq!(z.data()[[1, 0, 1]], 0.0);
        assert!((z.data()[[1, 0, 0]] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn concat_shapes() {
        let mut rng = Rng::new(2);
        let x = random_tensor(&mut rng, 4, 2, 3);
        let y = random_tensor(&mut rng, 4, 5, 3);
        let xy = concat_features(&x, &y).unwrap();
        assert_eq!(xy.data().shape(), &[4, 7, 3]);
        assert_eq!(xy.data().slice(s![.., ..2, ..]), x.data());

        let empty = FeatureTensor::new(Array3::zeros((4, 0, 3)), vec![0; 3]).unwrap();
        assert_eq!(concat_features(&x, &empty).unwrap(), x);

        let z = random_tensor(&mut rng, 5, 2, 3);
        assert!(matches!(concat_features(&x, &z), Err(Error::Shape(_))));
    }

    #[test]
    fn expand_clinical_broadcasts_columns() {
        let a = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]];
        let t = expand_clinical(a.view(), 2).unwrap();
        assert_eq!(t.data().shape(), &[2, 2, 3]);
        for s in 0..2 {
            assert_eq!(t.data().index_axis(Axis(0), s), a);
        }
        assert_eq!(global_avg_pool(&t), a);
        let one = expand_clinical(a.view(), 1).unwrap();
        assert_eq!(one.data().index_axis(Axis(0), 0), a);
    }

    #[test]
    fn pooling() {
        let m = FeatureMatrix::new(array![[2.0], [0.0]]).unwrap();
        let t = pad_stack(&[m], 2).unwrap();
        assert_eq!(global_avg_pool(&t)[[0, 0]], 1.0);

        let mut rng = Rng::new(9);
        let t = random_tensor(&mut rng, 3, 4, 5);
        let pooled = global_avg_pool(&t);
        for f in 0..4 {
            for i in 0..5 {
                let mut acc = 0.0;
                for s in 0..3 {
                    acc += t.data()[[s, f, i]];
                }
                assert!((pooled[[f, i]] - acc / 3.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn padding_dilutes_pooled_mean_by_pad_ratio() {
        let ones = FeatureMatrix::new(Array2::ones((3, 4))).unwrap();
        let t = pad_stack(&[ones], 5).unwrap();
        assert!(global_avg_pool(&t).iter().all(|&v| (v - 0.6).abs() < 1e-15));
        assert!(masked_avg_pool(&t).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn tensor_rejects_bad_input() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(matches!(
            Tensor::new(vec![1], vec![f64::NAN]),
            Err(Error::Numeric { .. })
        ));
    }
}
