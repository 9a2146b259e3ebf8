use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Area under the ROC curve from the Mann–Whitney rank statistic, with
/// tied scores sharing their average rank.
///
/// Ranks are tracked doubled so every sum stays an integer until the final
/// division.
pub fn auroc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric {
            layer: "auroc scores".into(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateClass(format!(
            "need both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum2 = 0u64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // Ranks start..end (1-based start+1..=end) share their mean; doubled
        // that is start + 1 + end.
        let rank2 = (start + 1 + end) as u64;
        let tied_pos = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        pos_rank_sum2 += rank2 * tied_pos;
        start = end;
    }
    let u2 = pos_rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

/// One-vs-rest AUROC per class plus their mean over the classes present.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroAuroc {
    pub value: f64,
    /// `None` for classes absent from the labels.
    pub per_class: Vec<Option<f64>>,
}

impl MacroAuroc {
    pub fn skipped(&self) -> Vec<usize> {
        (0..self.per_class.len())
            .filter(|&c| self.per_class[c].is_none())
            .collect()
    }
}

/// `probs` is `C × B`; row `c` scores class `c` against the rest.
pub fn macro_auroc(probs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<MacroAuroc> {
    let (n_classes, batch) = probs.dim();
    if batch != labels.len() {
        return Err(Error::Shape(format!("{batch} predictions for {} labels", labels.len())));
    }
    if batch < 2 {
        return Err(Error::InsufficientData(format!(
            "macro AUROC needs at least 2 samples, got {batch}"
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Label(format!("label {bad} outside 0..{n_classes}")));
    }
    let present: Vec<bool> = (0..n_classes).map(|c| labels.contains(&c)).collect();
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::DegenerateClass("all labels belong to one class".into()));
    }
    let mut per_class = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        if !present[c] {
            per_class.push(None);
            continue;
        }
        let scores: Vec<f64> = probs.row(c).to_vec();
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        per_class.push(Some(auroc_binary(&scores, &positive)?));
    }
    let values: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(MacroAuroc {
        value: values.iter().sum::<f64>() / values.len() as f64,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    /// Pairwise comparison over every (positive, negative) pair; ties count ½.
    fn brute_force(scores: &[f64], labels: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn worked_cases() {
        assert_eq!(
            auroc_binary(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(),
            1.0
        );
        assert_eq!(
            auroc_binary(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(),
            0.5
        );
        assert_eq!(
            auroc_binary(&[0.8, 0.7, 0.6, 0.2], &[true, false, true, false]).unwrap(),
            0.75
        );
        assert_eq!(brute_force(&[0.8, 0.7, 0.6, 0.2], &[true, false, true, false]), 0.75);
    }

    #[test]
    fn single_class_is_degenerate() {
        assert!(matches!(
            auroc_binary(&[0.1, 0.2], &[true, true]),
            Err(Error::DegenerateClass(_))
        ));
        assert!(matches!(
            macro_auroc(array![[0.5, 0.5], [0.5, 0.5]].view(), &[1, 1]),
            Err(Error::DegenerateClass(_))
        ));
    }

    #[test]
    fn macro_cases() {
        let perfect = array![[0.8, 0.1, 0.1], [0.1, 0.7, 0.2], [0.1, 0.2, 0.7]];
        assert_eq!(macro_auroc(perfect.view(), &[0, 1, 2]).unwrap().value, 1.0);
        let uniform = Array2::from_elem((3, 5), 1.0 / 3.0);
        assert_eq!(macro_auroc(uniform.view(), &[0, 1, 2, 0, 1]).unwrap().value, 0.5);

        let m = macro_auroc(
            array![[0.6, 0.3, 0.2], [0.2, 0.5, 0.6], [0.2, 0.2, 0.2]].view(),
            &[0, 1, 1],
        )
        .unwrap();
        assert_eq!(m.per_class[2], None);
        assert_eq!(m.skipped(), vec![2]);
        assert_eq!(m.value, 1.0);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..50).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..6).prop_map(|v| v as f64 / 5.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn rank_form_equals_pairwise((scores, mut labels) in instance()) {
            labels[0] = true;
            labels[1] = false;
            let fast = auroc_binary(&scores, &labels).unwrap();
            prop_assert!((fast - brute_force(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn complement_sums_to_one((scores, mut labels) in instance()) {
            labels[0] = true;
            labels[1] = false;
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let sum = auroc_binary(&scores, &labels).unwrap() + auroc_binary(&scores, &flipped).unwrap();
            prop_assert_eq!(sum, 1.0);
        }

        #[test]
        fn monotone_transform_invariance((scores, mut labels) in instance()) {
            labels[0] = true;
            labels[1] = false;
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auroc_binary(&scores, &labels).unwrap(), auroc_binary(&warped, &labels).unwrap());
        }

        #[test]
        fn binary_macro_equals_either_side(
            (p, mut labels) in (2usize..40).prop_flat_map(|n| (
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(0usize..2, n),
            ))
        ) {
            labels[0] = 0;
            labels[1] = 1;
            let probs = Array2::from_shape_fn((2, p.len()), |(c, i)| if c == 1 { p[i] } else { 1.0 - p[i] });
            let m = macro_auroc(probs.view(), &labels).unwrap();
            let a = m.per_class[0].unwrap();
            let b = m.per_class[1].unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((m.value - b).abs() < 1e-12);
        }
    }
}
