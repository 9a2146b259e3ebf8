//! Modality alignment and learnable self-attention recalibration.
//!
//! CT and PET stacks are normalized, the shorter one is extended with
//! all-zero rows, the normalized clinical matrix is broadcast across slices,
//! and everything is concatenated on the feature axis into a fused tensor of
//! shape `M × c × I`. The attention layer then reweights that tensor and
//! pools it over slices.

mod attention;

pub use attention::{
    attention_backward, attention_forward, pool, pool_weights, AttentionCache, AttentionConfig, AttentionGrads,
    FusionParams, PoolMode, DEFAULT_D_CAP,
};

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{concat_features, expand_clinical, fit_norm_stats, znormalize, FeatureTensor, NormStats};

/// Which inputs enter the fused tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Modalities {
    pub clinical: bool,
    pub ct: bool,
    pub pet: bool,
}

impl Modalities {
    pub const ALL: Modalities = Modalities {
        clinical: true,
        ct: true,
        pet: true,
    };

    pub const CLINICAL: Modalities = Modalities {
        clinical: true,
        ct: false,
        pet: false,
    };

    /// Parses a comma-separated subset such as `clinical,ct,pet`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut m = Modalities {
            clinical: false,
            ct: false,
            pet: false,
        };
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "clinical" => m.clinical = true,
                "ct" => m.ct = true,
                "pet" => m.pet = true,
                other => return Err(Error::Config(format!("unknown modality {other:?}"))),
            }
        }
        if m.is_empty() {
            return Err(Error::Config("at least one modality is required".into()));
        }
        Ok(m)
    }

    pub fn is_empty(&self) -> bool {
        !(self.clinical || self.ct || self.pet)
    }
}

impl std::fmt::Display for Modalities {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = [(self.clinical, "clinical"), (self.ct, "ct"), (self.pet, "pet")]
            .into_iter()
            .filter_map(|(on, name)| on.then_some(name))
            .collect();
        f.write_str(&names.join(","))
    }
}

/// Normalization statistics per modality, fit on training patients.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionStats {
    pub ct: NormStats,
    pub pet: NormStats,
    /// Per clinical feature, stored as a single-slice `1 × a` table.
    pub clinical: NormStats,
}

impl FusionStats {
    pub fn fit(ct: &FeatureTensor, pet: &FeatureTensor, clinical: ArrayView2<'_, f64>) -> Result<Self> {
        Ok(Self {
            ct: fit_norm_stats(ct)?,
            pet: fit_norm_stats(pet)?,
            clinical: fit_clinical_stats(clinical)?,
        })
    }
}

fn clinical_as_tensor(clinical: ArrayView2<'_, f64>) -> Result<FeatureTensor> {
    let (a, n) = clinical.dim();
    FeatureTensor::new(
        Array3::from_shape_fn((1, a, n), |(_, f, i)| clinical[[f, i]]),
        vec![1; n],
    )
}

/// Per-feature statistics across patients for an `a × I` matrix.
pub fn fit_clinical_stats(clinical: ArrayView2<'_, f64>) -> Result<NormStats> {
    fit_norm_stats(&clinical_as_tensor(clinical)?)
}

pub fn normalize_clinical(clinical: ArrayView2<'_, f64>, stats: &NormStats) -> Result<Array2<f64>> {
    let z = znormalize(&clinical_as_tensor(clinical)?, stats)?;
    Ok(z.into_inner().index_axis_move(Axis(0), 0))
}

/// The fused `M × c × I` tensor with its column layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedTensor {
    tensor: FeatureTensor,
    /// Column widths of the CT, PET and clinical blocks, in that order.
    widths: [usize; 3],
    /// Observed imaging slices per patient, used by masked pooling. The
    /// broadcast clinical block fills every row, so the tensor's own slice
    /// counts cannot carry this.
    observed: Vec<usize>,
}

impl FusedTensor {
    pub fn new(tensor: FeatureTensor, widths: [usize; 3]) -> Result<Self> {
        if widths.iter().sum::<usize>() != tensor.feat_dim() {
            return Err(Error::Shape(format!(
                "block widths {widths:?} do not add up to {} channels",
                tensor.feat_dim()
            )));
        }
        let observed = tensor.slice_counts().to_vec();
        Ok(Self {
            tensor,
            widths,
            observed,
        })
    }

    pub fn with_observed(mut self, observed: Vec<usize>) -> Result<Self> {
        if observed.len() != self.n_patients() || observed.iter().any(|&n| n == 0 || n > self.m_max()) {
            return Err(Error::Shape(format!(
                "observed slice counts must be {} values in 1..={}",
                self.n_patients(),
                self.m_max()
            )));
        }
        self.observed = observed;
        Ok(self)
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn m_max(&self) -> usize {
        self.tensor.s_max()
    }

    pub fn channels(&self) -> usize {
        self.tensor.feat_dim()
    }

    pub fn n_patients(&self) -> usize {
        self.tensor.n_patients()
    }

    pub fn widths(&self) -> [usize; 3] {
        self.widths
    }

    pub fn tensor(&self) -> &FeatureTensor {
        &self.tensor
    }

    pub fn select_patients(&self, indices: &[usize]) -> Self {
        Self {
            tensor: self.tensor.select_patients(indices),
            widths: self.widths,
            observed: indices.iter().map(|&i| self.observed[i]).collect(),
        }
    }
}

/// Normalizes each selected modality, pads CT and PET to the common slice
/// count, broadcasts the clinical matrix and concatenates CT, PET and
/// clinical columns in that order.
///
/// The common slice count is the larger of the selected imaging stacks, or
/// 1 when only clinical data is selected. Unselected modalities are left out
/// rather than zero-filled.
pub fn align_and_fuse(
    ct: &FeatureTensor,
    pet: &FeatureTensor,
    clinical: ArrayView2<'_, f64>,
    stats: &FusionStats,
    modalities: Modalities,
) -> Result<FusedTensor> {
    if modalities.is_empty() {
        return Err(Error::Config("no modality selected".into()));
    }
    let n = clinical.ncols();
    if ct.n_patients() != pet.n_patients() || ct.n_patients() != n {
        return Err(Error::Shape(format!(
            "patient counts differ: ct {}, pet {}, clinical {n}",
            ct.n_patients(),
            pet.n_patients()
        )));
    }
    if modalities.ct && modalities.pet && ct.feat_dim() != pet.feat_dim() {
        return Err(Error::Shape(format!(
            "CT width {} differs from PET width {}",
            ct.feat_dim(),
            pet.feat_dim()
        )));
    }
    let m_max = [(modalities.ct, ct.s_max()), (modalities.pet, pet.s_max())]
        .into_iter()
        .filter_map(|(on, s)| on.then_some(s))
        .max()
        .unwrap_or(1);

    let mut blocks = Vec::new();
    let mut widths = [0; 3];
    if modalities.ct {
        blocks.push(znormalize(ct, &stats.ct)?.extend_rows(m_max)?);
        widths[0] = ct.feat_dim();
    }
    if modalities.pet {
        blocks.push(znormalize(pet, &stats.pet)?.extend_rows(m_max)?);
        widths[1] = pet.feat_dim();
    }
    if modalities.clinical {
        let z = normalize_clinical(clinical, &stats.clinical)?;
        blocks.push(expand_clinical(z.view(), m_max)?);
        widths[2] = clinical.nrows();
    }
    let mut fused = blocks.remove(0);
    for b in &blocks {
        fused = concat_features(&fused, b)?;
    }
    let observed = (0..n)
        .map(|i| {
            let ct_n = if modalities.ct { ct.slice_counts()[i] } else { 0 };
            let pet_n = if modalities.pet { pet.slice_counts()[i] } else { 0 };
            ct_n.max(pet_n).max(1)
        })
        .collect();
    FusedTensor::new(fused, widths)?.with_observed(observed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Rng;
    use crate::tensor::{pad_stack, FeatureMatrix};
    use ndarray::s;

    fn stacks(rng: &mut Rng, counts: &[usize], width: usize) -> FeatureTensor {
        let mats: Vec<_> = counts
            .iter()
            .map(|&n| FeatureMatrix::new(Array2::from_shape_simple_fn((n, width), || rng.normal())).unwrap())
            .collect();
        pad_stack(&mats, *counts.iter().max().unwrap()).unwrap()
    }

    #[test]
    fn fused_shape_and_padding() {
        let mut rng = Rng::new(1);
        let ct = stacks(&mut rng, &[3, 2], 2);
        let pet = stacks(&mut rng, &[5, 4], 2);
        let clinical = Array2::from_shape_simple_fn((1, 2), || rng.normal());
        let stats = FusionStats::fit(&ct, &pet, clinical.view()).unwrap();
        let fused = align_and_fuse(&ct, &pet, clinical.view(), &stats, Modalities::ALL).unwrap();
        assert_eq!(fused.tensor().data().shape(), &[5, 5, 2]);
        assert_eq!(fused.widths(), [2, 2, 1]);
        assert_eq!(fused.observed(), &[5, 4]);
        let d = fused.tensor().data();
        // Patient 1 has two CT slices; rows 2..5 of the CT block are the zero mask.
        assert!(d.slice(s![2.., ..2, 1]).iter().all(|&v| v == 0.0));
        assert!(d.slice(s![3.., ..2, 0]).iter().all(|&v| v == 0.0));
        for i in 0..2usize {
            assert!((0..5).all(|r| d[[r, 4, i]] == d[[0, 4, i]]));
        }
    }

    #[test]
    fn subsets_shrink_channels() {
        let mut rng = Rng::new(2);
        let ct = stacks(&mut rng, &[3, 2, 1], 4);
        let pet = stacks(&mut rng, &[2, 2, 2], 4);
        let clinical = Array2::from_shape_simple_fn((3, 3), || rng.normal());
        let stats = FusionStats::fit(&ct, &pet, clinical.view()).unwrap();
        let only = |m: &str| align_and_fuse(&ct, &pet, clinical.view(), &stats, Modalities::parse(m).unwrap()).unwrap();
        assert_eq!(only("ct,pet").channels(), 8);
        assert_eq!(only("clinical,pet").channels(), 7);
        assert_eq!(only("clinical,pet").m_max(), 2);
        assert_eq!(only("clinical").m_max(), 1);
        assert_eq!(only("ct").channels(), 4);
    }

    #[test]
    fn mismatches_are_shape_errors() {
        let mut rng = Rng::new(3);
        let ct = stacks(&mut rng, &[2, 2], 3);
        let pet = stacks(&mut rng, &[2, 2], 4);
        let clinical = Array2::zeros((1, 2));
        let stats = FusionStats {
            ct: NormStats::identity(2, 3),
            pet: NormStats::identity(2, 4),
            clinical: NormStats::identity(1, 1),
        };
        assert!(matches!(
            align_and_fuse(&ct, &pet, clinical.view(), &stats, Modalities::ALL),
            Err(Error::Shape(_))
        ));
        let pet = stacks(&mut rng, &[2, 2, 2], 3);
        assert!(matches!(
            align_and_fuse(&ct, &pet, clinical.view(), &stats, Modalities::ALL),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn modality_parsing() {
        assert_eq!(Modalities::parse("clinical,ct,pet").unwrap(), Modalities::ALL);
        assert_eq!(Modalities::ALL.to_string(), "clinical,ct,pet");
        assert!(Modalities::parse("mri").is_err());
        assert!(Modalities::parse("").is_err());
    }
}
