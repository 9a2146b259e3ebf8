//! PCA slice-feature extractor.
//!
//! Each slice is a flattened pixel vector. The model subtracts the per-pixel
//! mean and projects onto the top principal directions of the centered data,
//! obtained from a thin SVD of the data matrix rather than by forming the
//! `p × p` covariance. Eigenvalues use the population covariance
//! `X̃ᵀX̃ / n`, i.e. `σ² / n` for singular value `σ`.

use std::path::Path;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::io::mmft;
use crate::tensor::{FeatureMatrix, Tensor};

const ORTHO_TOL: f64 = 1e-10;

/// Default number of retained components.
pub const DEFAULT_COMPONENTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// Per-pixel mean, length `p`.
    pub mean: Array1<f64>,
    /// `p × b1`, orthonormal columns in descending eigenvalue order.
    pub components: Array2<f64>,
    pub eigenvalues: Array1<f64>,
}

impl PcaModel {
    pub fn n_pixels(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    /// `(slices − mean) · components`, one feature row per slice.
    pub fn transform(&self, slices: ArrayView2<'_, f64>) -> Result<FeatureMatrix> {
        if slices.ncols() != self.n_pixels() {
            return Err(Error::Shape(format!(
                "model expects {} pixels per slice, got {}",
                self.n_pixels(),
                slices.ncols()
            )));
        }
        let centered = &slices - &self.mean.view().insert_axis(Axis(0));
        FeatureMatrix::new(centered.dot(&self.components))
    }

    /// `mean + features · componentsᵀ`.
    pub fn reconstruct(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        features.dot(&self.components.t()) + &self.mean.view().insert_axis(Axis(0))
    }

    /// Writes `mean.mmft`, `components.mmft` and a `pca.csv` header into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        mmft::write_mmft(
            &Tensor::from_array(self.mean.clone().into_dyn())?,
            &dir.join("mean.mmft"),
        )?;
        mmft::write_mmft(
            &Tensor::from_array(self.components.clone().into_dyn())?,
            &dir.join("components.mmft"),
        )?;
        let eig: Vec<String> = self.eigenvalues.iter().map(|v| v.to_string()).collect();
        let header = format!(
            "b1,p,eigenvalues\n{},{},{}\n",
            self.n_components(),
            self.n_pixels(),
            eig.join(" ")
        );
        let path = dir.join("pca.csv");
        std::fs::write(&path, header).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("pca.csv");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let line = text.lines().nth(1).ok_or_else(|| Error::Format {
            path: path.clone(),
            reason: "missing data row".into(),
        })?;
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |s: &str, column: usize| -> Result<usize> {
            s.trim().parse().map_err(|_| Error::Parse {
                path: path.clone(),
                row: 2,
                column,
                reason: format!("expected a count, got {s:?}"),
            })
        };
        if fields.len() != 3 {
            return Err(Error::Format {
                path,
                reason: "expected columns b1,p,eigenvalues".into(),
            });
        }
        let b1 = parse(fields[0], 1)?;
        let p = parse(fields[1], 2)?;
        let eigenvalues = fields[2]
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.clone(),
                    row: 2,
                    column: 3,
                    reason: format!("bad eigenvalue {s:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mean = mmft::read_mmft(&dir.join("mean.mmft"))?;
        let components = mmft::read_mmft(&dir.join("components.mmft"))?;
        if mean.dims() != [p] || components.dims() != [p, b1] || eigenvalues.len() != b1 {
            return Err(Error::Consistency(format!(
                "pca header says p={p}, b1={b1} but files hold {:?} and {:?}",
                mean.dims(),
                components.dims()
            )));
        }
        Ok(Self {
            mean: Array1::from(mean.into_data()),
            components: Array2::from_shape_vec((p, b1), components.into_data()).expect("dims checked"),
            eigenvalues: Array1::from(eigenvalues),
        })
    }
}

/// Fits a PCA basis with `b1` components to `slices` (`n_samples × p`).
///
/// When the centered data has rank below `b1`, trailing eigenvalues are 0
/// and the basis is completed to an orthonormal set. Each component is
/// signed so that its largest-magnitude entry is non-negative.
pub fn pca_fit(slices: ArrayView2<'_, f64>, b1: usize) -> Result<PcaModel> {
    let (n, p) = slices.dim();
    if n < 2 {
        return Err(Error::InsufficientData(format!("PCA needs at least 2 slices, got {n}")));
    }
    if b1 == 0 || b1 > (n - 1).min(p) {
        return Err(Error::Parameter(format!(
            "component count {b1} outside 1..={} for {n} slices of {p} pixels",
            (n - 1).min(p)
        )));
    }
    crate::error::ensure_finite("pca input", slices.iter())?;

    let mean = slices.mean_axis(Axis(0)).expect("n ≥ 2");
    let centered = &slices - &mean.view().insert_axis(Axis(0));
    let data = DMatrix::from_row_iterator(n, p, centered.iter().copied());
    let svd = data.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .expect("finite singular values")
    });

    let mut components = Array2::zeros((p, b1));
    let mut eigenvalues = Array1::zeros(b1);
    for (k, &idx) in order.iter().take(b1).enumerate() {
        for j in 0..p {
            components[[j, k]] = v_t[(idx, j)];
        }
        let sigma = svd.singular_values[idx];
        eigenvalues[k] = (sigma * sigma / n as f64).max(0.0);
    }
    orthonormalize(&mut components);
    for mut col in components.columns_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
    })
}

/// One basis per patient, each fit on that patient's own slices.
pub fn pca_fit_per_patient(patients: &[ArrayView2<'_, f64>], b1: usize) -> Result<Vec<PcaModel>> {
    patients.iter().map(|slices| pca_fit(*slices, b1)).collect()
}

/// Gram–Schmidt with two projection passes per column; a column that
/// collapses is replaced by the next standard basis vector and retried.
pub(crate) fn orthonormalize(basis: &mut Array2<f64>) {
    let (p, k) = basis.dim();
    let mut next_axis = 0;
    for c in 0..k {
        loop {
            for _ in 0..2 {
                for prev in 0..c {
                    let prev_col = basis.column(prev).to_owned();
                    let dot = prev_col.dot(&basis.column(c));
                    basis.column_mut(c).scaled_add(-dot, &prev_col);
                }
            }
            let norm = basis.column(c).dot(&basis.column(c)).sqrt();
            if norm > ORTHO_TOL {
                basis.column_mut(c).mapv_inplace(|v| v / norm);
                break;
            }
            let mut e = Array1::zeros(p);
            e[next_axis % p] = 1.0;
            next_axis += 1;
            basis.column_mut(c).assign(&e);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Rng;
    use ndarray::array;

    fn random(rng: &mut Rng, n: usize, p: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, p), || rng.normal())
    }

    fn orthonormality_error(c: &Array2<f64>) -> f64 {
        let gram = c.t().dot(c);
        let eye = Array2::<f64>::eye(c.ncols());
        (&gram - &eye).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn identical_slices_have_no_variance() {
        let row = array![1.0, 2.0, 3.0, 4.0];
        let slices = Array2::from_shape_fn((5, 4), |(_, j)| row[j]);
        let model = pca_fit(slices.view(), 3).unwrap();
        assert!(model.eigenvalues.iter().all(|&v| v.abs() < 1e-12));
        assert!(orthonormality_error(&model.components) < 1e-8);
        let f = model.transform(slices.view()).unwrap();
        assert!(f.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn points_on_a_line() {
        let slices = array![[-2.0, -4.0], [-1.0, -2.0], [1.0, 2.0], [2.0, 4.0]];
        let model = pca_fit(slices.view(), 2).unwrap();
        let s5 = 5f64.sqrt();
        assert!((model.components[[0, 0]] - 1.0 / s5).abs() < 1e-12);
        assert!((model.components[[1, 0]] - 2.0 / s5).abs() < 1e-12);
        assert!(model.eigenvalues[1].abs() < 1e-12);
        // Population variance along (1,2)/√5: (4+1+1+4)·5/4.
        assert!((model.eigenvalues[0] - 12.5).abs() < 1e-10);
    }

    #[test]
    fn full_rank_reconstruction() {
        let mut rng = Rng::new(17);
        let x = random(&mut rng, 20, 16);
        let model = pca_fit(x.view(), 16).unwrap();
        let f = model.transform(x.view()).unwrap();
        let back = model.reconstruct(f.data());
        let err = (&back - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-8, "{err}");
        assert!(orthonormality_error(&model.components) < 1e-8);
    }

    #[test]
    fn projected_variances_equal_eigenvalues() {
        let mut rng = Rng::new(23);
        let x = random(&mut rng, 30, 12);
        let model = pca_fit(x.view(), 6).unwrap();
        let f = model.transform(x.view()).unwrap();
        for k in 0..6 {
            let var = f.data().column(k).var(0.0);
            assert!((var - model.eigenvalues[k]).abs() <= 1e-6 * model.eigenvalues[k]);
        }
        for w in model.eigenvalues.as_slice().unwrap().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn transform_is_centered_and_linear() {
        let mut rng = Rng::new(29);
        let x = random(&mut rng, 10, 6);
        let model = pca_fit(x.view(), 4).unwrap();
        let at_mean = model.transform(model.mean.view().insert_axis(Axis(0))).unwrap();
        assert!(at_mean.data().iter().all(|v| v.abs() < 1e-12));

        let row = x.row(0);
        let doubled = (&row - &model.mean) * 2.0 + &model.mean;
        let f1 = model.transform(row.insert_axis(Axis(0))).unwrap();
        let f2 = model.transform(doubled.view().insert_axis(Axis(0))).unwrap();
        for (a, b) in f1.data().iter().zip(f2.data()) {
            assert!((2.0 * a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rank_deficient_basis_is_completed() {
        let mut rng = Rng::new(31);
        // Rank 2 data in 6 pixels.
        let basis = random(&mut rng, 2, 6);
        let coef = random(&mut rng, 10, 2);
        let x = coef.dot(&basis);
        let model = pca_fit(x.view(), 5).unwrap();
        assert!(orthonormality_error(&model.components) < 1e-8);
        assert!(model.eigenvalues.iter().skip(2).all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn sign_convention() {
        let mut rng = Rng::new(37);
        let x = random(&mut rng, 15, 8);
        let model = pca_fit(x.view(), 5).unwrap();
        for col in model.components.columns() {
            let pivot = col
                .iter()
                .copied()
                .fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
            assert!(pivot >= 0.0);
        }
    }

    #[test]
    fn parameter_and_shape_errors() {
        let x = Array2::<f64>::zeros((4, 3));
        assert!(matches!(pca_fit(x.view(), 0), Err(Error::Parameter(_))));
        assert!(matches!(pca_fit(x.view(), 4), Err(Error::Parameter(_))));
        let model = pca_fit(x.view(), 2).unwrap();
        assert!(matches!(
            model.transform(Array2::zeros((1, 5)).view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn explained_variance_grows_with_components() {
        let mut rng = Rng::new(41);
        let x = random(&mut rng, 25, 10);
        let total: f64 = x.var_axis(Axis(0), 0.0).sum();
        let mut last = 0.0;
        for b1 in 1..=10 {
            let explained = pca_fit(x.view(), b1).unwrap().eigenvalues.sum();
            assert!(explained + 1e-12 >= last);
            assert!(explained <= total + 1e-6);
            last = explained;
        }
    }

    #[test]
    fn save_and_load() {
        let mut rng = Rng::new(43);
        let x = random(&mut rng, 12, 5);
        let model = pca_fit(x.view(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let back = PcaModel::load(dir.path()).unwrap();
        assert_eq!(back.components.dim(), (5, 3));
        for (a, b) in back.components.iter().zip(&model.components) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(back.eigenvalues, model.eigenvalues);
    }
}
