//! Precision-recall and fix-correctness accounting against known bugs.

use std::collections::BTreeSet;

use crate::bench::SimulatedCorpus;
use crate::error::{DutiError, Result};
use crate::types::{DebugReport, Fix, Labels};

/// `(recall, precision)` after each prefix of `ranking`.
pub fn pr_curve(ranking: &[usize], bug_indices: &[usize]) -> Result<Vec<(f64, f64)>> {
    let bugs: BTreeSet<usize> = bug_indices.iter().copied().collect();
    if bugs.is_empty() {
        return Err(DutiError::UndefinedMetric("recall is undefined without bugs".into()));
    }
    let total = bugs.len() as f64;
    let mut hits = 0usize;
    Ok(ranking
        .iter()
        .enumerate()
        .map(|(j, i)| {
            if bugs.contains(i) {
                hits += 1;
            }
            (hits as f64 / total, hits as f64 / (j + 1) as f64)
        })
        .collect())
}

/// Recall grid `0.05, 0.10, ..., 1.00`.
pub fn recall_grid() -> Vec<f64> {
    (1..=20).map(|s| s as f64 * 0.05).collect()
}

/// Precision at recall `r`: the best precision at any recall `>= r`, or 0
/// if the curve never reaches `r`.
pub fn interpolated_precision(curve: &[(f64, f64)], r: f64) -> f64 {
    curve
        .iter()
        .filter(|(rec, _)| *rec >= r - 1e-12)
        .map(|&(_, p)| p)
        .fold(0.0, f64::max)
}

/// Pointwise mean of the interpolated curves on [`recall_grid`].
pub fn average_pr(curves: &[Vec<(f64, f64)>]) -> Result<Vec<(f64, f64)>> {
    if curves.is_empty() {
        return Err(DutiError::UndefinedMetric("no curves to average".into()));
    }
    Ok(recall_grid()
        .into_iter()
        .map(|r| {
            let mean = curves.iter().map(|c| interpolated_precision(c, r)).sum::<f64>() / curves.len() as f64;
            (r, mean)
        })
        .collect())
}

/// Trapezoid area under a `(recall, precision)` curve.
pub fn auc(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// `(flags examined, correct fixes so far)` along a ranking of
/// `(index, suggested fix)` pairs. A fix is correct when the item is a bug
/// and the suggestion equals its true label.
pub fn fix_curve(flags: &[(usize, Option<Fix>)], bug_indices: &[usize], truth: &Labels) -> Result<Vec<(usize, usize)>> {
    let bugs: BTreeSet<usize> = bug_indices.iter().copied().collect();
    let classes = truth.as_classes().ok_or_else(|| {
        DutiError::UnsupportedTask("fix correctness is defined for class labels".into())
    })?;
    let mut correct = 0;
    flags
        .iter()
        .enumerate()
        .map(|(j, &(i, fix))| {
            let fix = fix.ok_or_else(|| DutiError::InvalidData(format!("flag {i} has no suggested fix")))?;
            let &t = classes
                .get(i)
                .ok_or_else(|| DutiError::InvalidData(format!("flag {i} out of range")))?;
            if bugs.contains(&i) && fix == Fix::Class(t) {
                correct += 1;
            }
            Ok((j + 1, correct))
        })
        .collect()
}

/// [`fix_curve`] of a debugger report against a simulated corpus.
pub fn report_fix_curve(report: &DebugReport, corpus: &SimulatedCorpus) -> Result<Vec<(usize, usize)>> {
    let truth = corpus
        .dataset
        .true_labels()
        .ok_or_else(|| DutiError::InvalidData("corpus has no true labels".into()))?;
    let flags: Vec<(usize, Option<Fix>)> = report.ranking.iter().map(|r| (r.index, Some(r.fix))).collect();
    fix_curve(&flags, &corpus.bug_indices, truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking() {
        let c = pr_curve(&[3, 1, 4], &[1, 3, 4]).unwrap();
        assert!(c.iter().all(|&(_, p)| p == 1.0));
        assert_eq!(c.last().unwrap().0, 1.0);
    }

    #[test]
    fn no_bugs_found() {
        let c = pr_curve(&[0, 2], &[5]).unwrap();
        assert!(c.iter().all(|&(r, p)| r == 0.0 && p == 0.0));
    }

    #[test]
    fn hand_counted_curve() {
        let c = pr_curve(&[7, 0, 9], &[7, 9]).unwrap();
        assert_eq!(c[0], (0.5, 1.0));
        assert_eq!(c[1], (0.5, 0.5));
        assert_eq!(c[2].0, 1.0);
        assert!((c[2].1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_bug_set_is_undefined() {
        assert!(matches!(pr_curve(&[1], &[]), Err(DutiError::UndefinedMetric(_))));
    }

    #[test]
    fn averaging() {
        let a = pr_curve(&[7, 0, 9], &[7, 9]).unwrap();
        let single = average_pr(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.len(), 20);
        assert_eq!(single[9], (0.5, 1.0));
        assert!((single[19].1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(average_pr(&[a.clone(), a.clone()]).unwrap(), single);
        let b = pr_curve(&[0, 7, 9], &[7, 9]).unwrap();
        let avg = average_pr(&[a, b]).unwrap();
        // at recall 0.5: 1.0 and max(0.5, 2/3)
        assert!((avg[9].1 - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn fix_curve_hand_count() {
        let truth = Labels::classification(vec![1, 0, 2, 0], 3).unwrap();
        let flags = [(0, Some(Fix::Class(1))), (1, Some(Fix::Class(2))), (2, Some(Fix::Class(1)))];
        let c = fix_curve(&flags, &[0, 2], &truth).unwrap();
        assert_eq!(c, vec![(1, 1), (2, 1), (3, 1)]);
        assert!(fix_curve(&[(0, None)], &[0], &truth).is_err());
    }

    #[test]
    fn trapezoid_area() {
        assert!((auc(&[(0.0, 1.0), (1.0, 1.0)]) - 1.0).abs() < 1e-15);
        assert!((auc(&[(0.0, 1.0), (0.5, 0.5), (1.0, 0.5)]) - 0.625).abs() < 1e-15);
    }
}
