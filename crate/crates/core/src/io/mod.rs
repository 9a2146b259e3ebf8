//! On-disk formats and dataset assembly.
//!
//! A dataset directory holds `manifest.csv`, `clinical.csv` and one MMFT
//! file per patient per modality.

mod clinical;
mod dataset;
pub mod mmft;
mod synth;

pub(crate) use clinical::csv_error;
pub use clinical::{load_clinical_csv, write_clinical_csv, ClinicalTable};
pub use dataset::{load_dataset, read_manifest, write_dataset, Dataset, ManifestRow};
pub use mmft::{read_mmft, write_mmft, MmftHeader};
pub use synth::{synth_dataset, synth_generate, InteractionMode, SyntheticSpec};
