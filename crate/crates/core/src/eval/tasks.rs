use crate::error::{Error, Result};
use crate::etiology::Etiology;

/// One of the seven diagnostic labelings of the etiology taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub task_id: u8,
    pub title: &'static str,
    pub class_names: Vec<&'static str>,
    /// Class index per etiology, in [`Etiology::ALL`] order.
    pub mapping: [usize; 7],
}

impl TaskSpec {
    pub fn new(task_id: u8) -> Result<Self> {
        use Etiology::*;
        let (title, class_names, map): (&str, Vec<&str>, fn(Etiology) -> usize) = match task_id {
            1 => ("benign vs malignant", vec!["benign", "malignant"], |e| {
                e.is_malignant() as usize
            }),
            2 => ("immune vs non-immune", vec!["non_immune", "immune"], |e| {
                (e == Immune) as usize
            }),
            3 => (
                "infectious vs non-infectious",
                vec!["non_infectious", "infectious"],
                |e| e.is_infectious() as usize,
            ),
            4 => (
                "malignant / infectious / immune",
                vec!["malignant", "infectious", "immune"],
                |e| {
                    if e.is_malignant() {
                        0
                    } else if e.is_infectious() {
                        1
                    } else {
                        2
                    }
                },
            ),
            5 => (
                "solid tumor / hematologic / non-malignant",
                vec!["solid_tumor", "hematologic", "non_malignant"],
                |e| match e {
                    SolidTumor => 0,
                    Hematologic => 1,
                    _ => 2,
                },
            ),
            6 => (
                "bacterial / other infection / non-infectious",
                vec!["bacterial", "non_bacterial_infectious", "non_infectious"],
                |e| match e {
                    Bacterial => 0,
                    _ if e.is_infectious() => 1,
                    _ => 2,
                },
            ),
            7 => (
                "viral / other infection / non-infectious",
                vec!["viral", "non_viral_infectious", "non_infectious"],
                |e| match e {
                    Viral => 0,
                    _ if e.is_infectious() => 1,
                    _ => 2,
                },
            ),
            other => return Err(Error::Config(format!("task must be 1..=7, got {other}"))),
        };
        Ok(Self {
            task_id,
            title,
            class_names,
            mapping: Etiology::ALL.map(map),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn label(&self, e: Etiology) -> usize {
        self.mapping[e.index()]
    }
}

pub fn task_labels(etiologies: &[Etiology], task_id: u8) -> Result<Vec<usize>> {
    let task = TaskSpec::new(task_id)?;
    Ok(etiologies.iter().map(|&e| task.label(e)).collect())
}
