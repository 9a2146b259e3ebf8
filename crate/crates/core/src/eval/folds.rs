use crate::error::{Error, Result};
use crate::nn::Rng;

/// Assignment of every patient to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn n_patients(&self) -> usize {
        self.assignments.len()
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n_patients())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n_patients())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

fn check(n: usize, k: usize) -> Result<()> {
    if k < 2 || n < k {
        return Err(Error::Parameter(format!("need n ≥ k ≥ 2 for folds, got n={n}, k={k}")));
    }
    Ok(())
}

/// Seeded shuffle, then contiguous chunks; the first `n mod k` folds take
/// one extra patient.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    check(n, k)?;
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let mut assignments = vec![0; n];
    let (base, extra) = (n / k, n % k);
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &order[pos..pos + size] {
            assignments[i] = fold;
        }
        pos += size;
    }
    Ok(FoldPlan { k, seed, assignments })
}

/// Shuffles within each class and deals patients to folds in turn, class
/// after class, so fold sizes still differ by at most one.
pub fn make_stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    check(labels.len(), k)?;
    let mut rng = Rng::new(seed);
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut assignments = vec![0; labels.len()];
    let mut next = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        rng.shuffle(&mut members);
        for i in members {
            assignments[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan { k, seed, assignments })
}
