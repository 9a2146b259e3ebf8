use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::clinical::{csv_error, load_clinical_csv, write_clinical_csv, ClinicalTable};
use super::mmft::{read_mmft, write_mmft};
use crate::error::{Error, Result};
use crate::etiology::Etiology;
use crate::tensor::FeatureMatrix;

const MANIFEST_HEADER: [&str; 6] = ["patient_id", "ct_file", "pet_file", "n_ct", "n_pet", "etiology"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub patient_id: String,
    pub ct_file: PathBuf,
    pub pet_file: PathBuf,
    pub n_ct: usize,
    pub n_pet: usize,
    pub etiology: Etiology,
}

/// Per-patient CT and PET matrices plus the clinical table, all in manifest
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ct: Vec<FeatureMatrix>,
    pub pet: Vec<FeatureMatrix>,
    pub clinical: ClinicalTable,
}

impl Dataset {
    pub fn n_patients(&self) -> usize {
        self.ct.len()
    }

    pub fn patient_ids(&self) -> &[String] {
        &self.clinical.patient_ids
    }

    pub fn etiologies(&self) -> &[Etiology] {
        &self.clinical.etiologies
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Schema(format!(
            "{}: manifest header must be {}",
            path.display(),
            MANIFEST_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        let count = |column: usize| -> Result<usize> {
            record[column].parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: column + 1,
                reason: format!("expected a slice count, got {:?}", &record[column]),
            })
        };
        let entry = ManifestRow {
            patient_id: record[0].to_string(),
            ct_file: PathBuf::from(&record[1]),
            pet_file: PathBuf::from(&record[2]),
            n_ct: count(3)?,
            n_pet: count(4)?,
            etiology: record[5].parse()?,
        };
        if !seen.insert(entry.patient_id.clone()) {
            return Err(Error::Schema(format!(
                "duplicate patient_id {:?} in manifest",
                entry.patient_id
            )));
        }
        rows.push(entry);
    }
    Ok(rows)
}

fn load_matrix(dir: &Path, file: &Path, declared: usize, id: &str) -> Result<FeatureMatrix> {
    let path = dir.join(file);
    let m = FeatureMatrix::from_tensor(&read_mmft(&path)?)?;
    if m.n_slices() != declared {
        return Err(Error::Consistency(format!(
            "patient {id}: manifest declares {declared} slices but {} holds {}",
            path.display(),
            m.n_slices()
        )));
    }
    Ok(m)
}

/// Loads `manifest.csv`, `clinical.csv` and every referenced MMFT file.
/// The clinical table is reordered to manifest order.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(&dir.join("manifest.csv"))?;
    let clinical = load_clinical_csv(&dir.join("clinical.csv"))?;

    let by_id: HashMap<&str, usize> = clinical
        .patient_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    if clinical.n_patients() != manifest.len() {
        return Err(Error::Consistency(format!(
            "manifest lists {} patients, clinical.csv {}",
            manifest.len(),
            clinical.n_patients()
        )));
    }
    let order = manifest
        .iter()
        .map(|row| {
            let i = *by_id
                .get(row.patient_id.as_str())
                .ok_or_else(|| Error::Consistency(format!("patient {} missing from clinical.csv", row.patient_id)))?;
            if clinical.etiologies[i] != row.etiology {
                return Err(Error::Consistency(format!(
                    "patient {}: etiology {} in manifest but {} in clinical.csv",
                    row.patient_id, row.etiology, clinical.etiologies[i]
                )));
            }
            Ok(i)
        })
        .collect::<Result<Vec<_>>>()?;
    let clinical = clinical.select(&order);

    let pairs = manifest
        .par_iter()
        .map(|row| {
            let ct = load_matrix(dir, &row.ct_file, row.n_ct, &row.patient_id)?;
            let pet = load_matrix(dir, &row.pet_file, row.n_pet, &row.patient_id)?;
            Ok((ct, pet))
        })
        .collect::<Result<Vec<_>>>()?;
    let (ct, pet) = pairs.into_iter().unzip();
    Ok(Dataset { ct, pet, clinical })
}

/// Writes a dataset directory: `manifest.csv`, `clinical.csv`,
/// `ct/<id>.mmft` and `pet/<id>.mmft`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    for sub in ["ct", "pet"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let manifest_path = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest_path).map_err(|e| csv_error(&manifest_path, e))?;
    w.write_record(MANIFEST_HEADER)
        .map_err(|e| csv_error(&manifest_path, e))?;
    for (i, id) in dataset.patient_ids().iter().enumerate() {
        let ct_file = format!("ct/{id}.mmft");
        let pet_file = format!("pet/{id}.mmft");
        write_mmft(&dataset.ct[i].to_tensor(), &dir.join(&ct_file))?;
        write_mmft(&dataset.pet[i].to_tensor(), &dir.join(&pet_file))?;
        w.write_record([
            id.as_str(),
            &ct_file,
            &pet_file,
            &dataset.ct[i].n_slices().to_string(),
            &dataset.pet[i].n_slices().to_string(),
            dataset.clinical.etiologies[i].as_str(),
        ])
        .map_err(|e| csv_error(&manifest_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&manifest_path, e))?;
    write_clinical_csv(&dataset.clinical, &dir.join("clinical.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::mmft::write_mmft;
    use crate::tensor::Tensor;

    fn two_patient_fixture(n_ct_declared: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        std::fs::create_dir_all(d.join("img")).unwrap();
        let write = |name: &str, rows: usize| {
            let t = Tensor::new(vec![rows, 3], (0..rows * 3).map(|v| v as f64).collect()).unwrap();
            write_mmft(&t, &d.join("img").join(name)).unwrap();
        };
        write("a_ct.mmft", 2);
        write("a_pet.mmft", 4);
        write("b_ct.mmft", 3);
        write("b_pet.mmft", 1);
        std::fs::write(
            d.join("manifest.csv"),
            format!(
                "patient_id,ct_file,pet_file,n_ct,n_pet,etiology\n\
                 a,img/a_ct.mmft,img/a_pet.mmft,{n_ct_declared},4,immune\n\
                 b,img/b_ct.mmft,img/b_pet.mmft,3,1,hematologic\n"
            ),
        )
        .unwrap();
        // Clinical rows deliberately in a different order.
        std::fs::write(
            d.join("clinical.csv"),
            "patient_id,etiology,age\nb,hematologic,61\na,immune,35\n",
        )
        .unwrap();
        dir
    }

    #[test]
    fn loads_minimal_fixture_in_manifest_order() {
        let dir = two_patient_fixture(2);
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.n_patients(), 2);
        assert_eq!(ds.ct[0].n_slices(), 2);
        assert_eq!(ds.pet[0].n_slices(), 4);
        assert_eq!(ds.ct[1].n_slices(), 3);
        assert_eq!(ds.patient_ids(), &["a", "b"]);
        assert_eq!(ds.clinical.values[[0, 0]], 35.0);
    }

    #[test]
    fn declared_count_must_match_header() {
        let dir = two_patient_fixture(10);
        assert!(matches!(load_dataset(dir.path()), Err(Error::Consistency(_))));
    }

    #[test]
    fn missing_file_and_unknown_etiology() {
        let dir = two_patient_fixture(2);
        std::fs::remove_file(dir.path().join("img/b_pet.mmft")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::NotFound(_))));

        let dir = two_patient_fixture(2);
        let m = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        std::fs::write(dir.path().join("manifest.csv"), m.replace("immune", "allergy")).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Schema(_))));
    }

    #[test]
    fn write_then_load() {
        let dir = two_patient_fixture(2);
        let ds = load_dataset(dir.path()).unwrap();
        let out = tempfile::tempdir().unwrap();
        write_dataset(&ds, out.path()).unwrap();
        assert_eq!(load_dataset(out.path()).unwrap(), ds);
    }
}
