//! Seeded synthetic multimodal cohorts.
//!
//! Class centroids come from a fixed internal stream, so cohorts generated
//! with different seeds share their geometry and differ only in patient
//! draws. In `cross_modal_xor` mode the malignant/benign label equals the
//! parity of a clinical sign bit and an imaging sign bit, which are each
//! independent of the label on their own.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::clinical::ClinicalTable;
use super::dataset::{write_dataset, Dataset};
use crate::error::{Error, Result};
use crate::etiology::Etiology;
use crate::nn::Rng;
use crate::tensor::FeatureMatrix;

const CENTROID_SEED: u64 = 0x4D4D_4654_C3A7_0001;
const PIXEL_NOISE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    Additive,
    CrossModalXor,
}

fn default_separation() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    /// `[b_ct, b_pet, a]`.
    pub feat_dims: [usize; 3],
    pub slice_range_ct: [usize; 2],
    pub slice_range_pet: [usize; 2],
    pub class_weights: BTreeMap<Etiology, f64>,
    pub interaction_mode: InteractionMode,
    pub noise_scale: f64,
    pub seed: u64,
    /// Distance between class centroids (additive) or between the two sign
    /// states (xor), in units of `noise_scale`.
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// When set, slices are emitted as `pixel_dim`-wide pixel vectors: the
    /// feature vector mixed through a fixed orthonormal map plus small noise.
    #[serde(default)]
    pub pixel_dim: Option<usize>,
    /// Probability that a clinical cell is left empty.
    #[serde(default)]
    pub missing_rate: f64,
}

impl SyntheticSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        let [b_ct, b_pet, a] = self.feat_dims;
        if b_ct == 0 || b_pet == 0 {
            return bad("imaging feature widths must be positive".into());
        }
        if self.interaction_mode == InteractionMode::CrossModalXor && a == 0 {
            return bad("cross_modal_xor needs at least one clinical feature".into());
        }
        for (name, [lo, hi]) in [("ct", self.slice_range_ct), ("pet", self.slice_range_pet)] {
            if lo == 0 || hi < lo {
                return bad(format!("invalid {name} slice range [{lo}, {hi}]"));
            }
        }
        if self.class_weights.values().any(|&w| !(w >= 0.0)) {
            return bad("class weights must be non-negative".into());
        }
        let total: f64 = self.class_weights.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("class weights sum to {total}, not 1"));
        }
        if !(self.noise_scale > 0.0) || !(self.separation >= 0.0) {
            return bad("noise_scale must be positive and separation non-negative".into());
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate must be in [0, 1)".into());
        }
        if let Some(p) = self.pixel_dim {
            if p < b_ct.max(b_pet) {
                return bad(format!("pixel_dim {p} is narrower than the feature widths"));
            }
        }
        Ok(())
    }

    fn weight(&self, e: Etiology) -> f64 {
        self.class_weights.get(&e).copied().unwrap_or(0.0)
    }
}

/// Largest-remainder apportionment of `n` patients over the etiologies.
/// Ties in the remainder go to the earlier etiology.
pub fn allocate_classes(n: usize, spec: &SyntheticSpec) -> [usize; 7] {
    let mut counts = [0usize; 7];
    let mut remainders = Vec::with_capacity(7);
    for (k, e) in Etiology::ALL.into_iter().enumerate() {
        let quota = spec.weight(e) * n as f64;
        counts[k] = quota.floor() as usize;
        remainders.push((quota - quota.floor(), k));
    }
    let assigned: usize = counts.iter().sum();
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite").then(a.1.cmp(&b.1)));
    for &(_, k) in remainders.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

struct Geometry {
    ct: Vec<Array1<f64>>,
    pet: Vec<Array1<f64>>,
    clinical: Vec<Array1<f64>>,
    mixing_ct: Option<Array2<f64>>,
    mixing_pet: Option<Array2<f64>>,
}

fn random_direction(rng: &mut Rng, dim: usize, radius: f64) -> Array1<f64> {
    let v = Array1::from_shape_simple_fn(dim, || rng.normal());
    let norm = v.dot(&v).sqrt().max(f64::MIN_POSITIVE);
    v * (radius / norm)
}

/// `b × p` with orthonormal rows.
fn mixing_matrix(rng: &mut Rng, b: usize, p: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_simple_fn((p, b), || rng.normal());
    crate::pca::orthonormalize(&mut m);
    m.reversed_axes()
}

impl Geometry {
    fn new(spec: &SyntheticSpec) -> Self {
        let [b_ct, b_pet, a] = spec.feat_dims;
        let mut rng = Rng::new(CENTROID_SEED);
        let radius = spec.separation * spec.noise_scale / std::f64::consts::SQRT_2;
        let mut draw =
            |dim: usize| -> Vec<Array1<f64>> { (0..7).map(|_| random_direction(&mut rng, dim, radius)).collect() };
        let ct = draw(b_ct);
        let pet = draw(b_pet);
        let clinical = draw(a);
        let (mixing_ct, mixing_pet) = match spec.pixel_dim {
            Some(p) => (
                Some(mixing_matrix(&mut rng, b_ct, p)),
                Some(mixing_matrix(&mut rng, b_pet, p)),
            ),
            None => (None, None),
        };
        Self {
            ct,
            pet,
            clinical,
            mixing_ct,
            mixing_pet,
        }
    }
}

fn sign(bit: bool) -> f64 {
    if bit {
        1.0
    } else {
        -1.0
    }
}

fn slices(
    rng: &mut Rng,
    n: usize,
    base: &Array1<f64>,
    noise: f64,
    mixing: Option<&Array2<f64>>,
) -> Result<FeatureMatrix> {
    let b = base.len();
    let features = Array2::from_shape_fn((n, b), |(_, f)| base[f] + noise * rng.normal());
    let values = match mixing {
        Some(m) => {
            let mut pixels = features.dot(m);
            pixels.mapv_inplace(|v| v + PIXEL_NOISE * noise * rng.normal());
            pixels
        }
        None => features,
    };
    FeatureMatrix::new(values.mapv(|v| v as f32 as f64))
}

/// Generates the cohort in memory. Image values are rounded to `f32` so the
/// result equals what [`crate::io::load_dataset`] reads back.
pub fn synth_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let geometry = Geometry::new(spec);
    let [_, _, a] = spec.feat_dims;
    let n = spec.n_patients;
    let xor = spec.interaction_mode == InteractionMode::CrossModalXor;
    let amplitude = spec.separation * spec.noise_scale / 2.0;
    let noise = spec.noise_scale;

    let mut rng = Rng::new(spec.seed);
    let counts = allocate_classes(n, spec);
    let mut etiologies: Vec<Etiology> = Etiology::ALL
        .into_iter()
        .zip(counts)
        .flat_map(|(e, c)| std::iter::repeat_n(e, c))
        .collect();
    rng.shuffle(&mut etiologies);

    let width = n.to_string().len().max(4);
    let mut ct = Vec::with_capacity(n);
    let mut pet = Vec::with_capacity(n);
    let mut values = Array2::zeros((a, n));
    let mut missing = Array2::from_elem((a, n), false);
    for (i, &e) in etiologies.iter().enumerate() {
        let k = e.index();
        let n_ct = rng.int_in(spec.slice_range_ct[0], spec.slice_range_ct[1]);
        let n_pet = rng.int_in(spec.slice_range_pet[0], spec.slice_range_pet[1]);
        let (ct_base, pet_base, clinical_base) = if xor {
            let clinical_bit = rng.bernoulli(0.5);
            let imaging_bit = clinical_bit ^ e.is_malignant();
            let signal = |dim: usize, bit: bool| {
                let mut v = Array1::zeros(dim);
                v[0] = sign(bit) * amplitude;
                v
            };
            (
                signal(spec.feat_dims[0], imaging_bit),
                signal(spec.feat_dims[1], imaging_bit),
                signal(a, clinical_bit),
            )
        } else {
            (
                geometry.ct[k].clone(),
                geometry.pet[k].clone(),
                geometry.clinical[k].clone(),
            )
        };
        ct.push(slices(&mut rng, n_ct, &ct_base, noise, geometry.mixing_ct.as_ref())?);
        pet.push(slices(&mut rng, n_pet, &pet_base, noise, geometry.mixing_pet.as_ref())?);
        for f in 0..a {
            values[[f, i]] = clinical_base[f] + noise * rng.normal();
            if rng.uniform() < spec.missing_rate {
                values[[f, i]] = 0.0;
                missing[[f, i]] = true;
            }
        }
    }
    let clinical = ClinicalTable {
        feature_names: (0..a).map(|f| format!("lab_{f:02}")).collect(),
        values,
        missing,
        etiologies,
        patient_ids: (0..n).map(|i| format!("P{:0width$}", i + 1)).collect(),
    };
    Ok(Dataset { ct, pet, clinical })
}

/// Writes the generated cohort as a dataset directory.
pub fn synth_generate(spec: &SyntheticSpec, out_dir: &Path) -> Result<()> {
    let dataset = synth_dataset(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_dataset(&dataset, out_dir)
}
