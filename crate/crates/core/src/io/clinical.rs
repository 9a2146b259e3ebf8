use std::collections::HashSet;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::etiology::Etiology;

/// Clinical feature matrix, `a × I`, with a missing-value mask.
///
/// Missing cells hold 0 until [`ClinicalTable::impute`] fills them with
/// means taken from a training subset.
#[derive(Debug, Clone, PartialEq)]
pub struct ClinicalTable {
    pub feature_names: Vec<String>,
    pub values: Array2<f64>,
    pub missing: Array2<bool>,
    pub etiologies: Vec<Etiology>,
    pub patient_ids: Vec<String>,
}

impl ClinicalTable {
    pub fn n_features(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_patients(&self) -> usize {
        self.values.ncols()
    }

    /// Patients in `indices` order.
    pub fn select(&self, indices: &[usize]) -> Self {
        use ndarray::Axis;
        Self {
            feature_names: self.feature_names.clone(),
            values: self.values.select(Axis(1), indices),
            missing: self.missing.select(Axis(1), indices),
            etiologies: indices.iter().map(|&i| self.etiologies[i]).collect(),
            patient_ids: indices.iter().map(|&i| self.patient_ids[i].clone()).collect(),
        }
    }

    /// Per-feature mean of the observed entries among `train` patients.
    /// A feature with no observed training entry gets mean 0.
    pub fn training_means(&self, train: &[usize]) -> Vec<f64> {
        (0..self.n_features())
            .map(|f| {
                let observed: Vec<f64> = train
                    .iter()
                    .filter(|&&i| !self.missing[[f, i]])
                    .map(|&i| self.values[[f, i]])
                    .collect();
                if observed.is_empty() {
                    0.0
                } else {
                    observed.iter().sum::<f64>() / observed.len() as f64
                }
            })
            .collect()
    }

    /// All patients' values with missing cells replaced by training means.
    pub fn impute(&self, train: &[usize]) -> Array2<f64> {
        let means = self.training_means(train);
        let mut out = self.values.clone();
        for ((f, i), v) in out.indexed_iter_mut() {
            if self.missing[[f, i]] {
                *v = means[f];
            }
        }
        out
    }
}

/// Reads `patient_id,etiology,<feature...>`; empty feature cells are
/// recorded as missing.
pub fn load_clinical_csv(path: &Path) -> Result<ClinicalTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 || &header[0] != "patient_id" || &header[1] != "etiology" {
        return Err(Error::Schema(format!(
            "{}: header must start with patient_id,etiology",
            path.display()
        )));
    }
    let feature_names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let a = feature_names.len();

    let mut ids = Vec::new();
    let mut etiologies = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut masks: Vec<Vec<bool>> = Vec::new();
    let mut seen = HashSet::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != a + 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                column: record.len().min(a + 2),
                reason: format!("expected {} fields, got {}", a + 2, record.len()),
            });
        }
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Schema(format!("duplicate patient_id {id:?}")));
        }
        etiologies.push(record[1].parse::<Etiology>()?);
        ids.push(id);
        let mut values = Vec::with_capacity(a);
        let mut mask = Vec::with_capacity(a);
        for (c, cell) in record.iter().enumerate().skip(2) {
            if cell.is_empty() {
                values.push(0.0);
                mask.push(true);
                continue;
            }
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    column: c + 1,
                    reason: format!("non-numeric value {cell:?} for {}", &header[c]),
                })?;
            values.push(v);
            mask.push(false);
        }
        columns.push(values);
        masks.push(mask);
    }
    let n = ids.len();
    let values = Array2::from_shape_fn((a, n), |(f, i)| columns[i][f]);
    let missing = Array2::from_shape_fn((a, n), |(f, i)| masks[i][f]);
    Ok(ClinicalTable {
        feature_names,
        values,
        missing,
        etiologies,
        patient_ids: ids,
    })
}

pub fn write_clinical_csv(table: &ClinicalTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["patient_id".to_string(), "etiology".to_string()];
    header.extend(table.feature_names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for i in 0..table.n_patients() {
        let mut row = vec![table.patient_ids[i].clone(), table.etiologies[i].to_string()];
        for f in 0..table.n_features() {
            row.push(if table.missing[[f, i]] {
                String::new()
            } else {
                table.values[[f, i]].to_string()
            });
        }
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let (row, column) = e.position().map(|p| (p.line() as usize, 0)).unwrap_or((0, 0));
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            row,
            column,
            reason: format!("{other:?}"),
        },
    }
}
