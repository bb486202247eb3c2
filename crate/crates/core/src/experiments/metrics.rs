use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// F1 with `true` as the positive (shouted) class. Zero when there are
/// neither actual nor predicted positives.
pub fn binary_f1(truth: &[bool], predicted: &[bool]) -> Result<f64> {
    check_lengths(truth.len(), predicted.len())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t, p) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

/// Per-class F1 averaged with class-support weights.
pub fn weighted_f1(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<f64> {
    let cm = confusion_matrix(truth, predicted, n_classes)?;
    let total = truth.len() as f64;
    let mut score = 0.0;
    for c in 0..n_classes {
        let tp = cm.counts[c][c];
        let support: usize = cm.counts[c].iter().sum();
        let predicted_c: usize = (0..n_classes).map(|r| cm.counts[r][c]).sum();
        score += support as f64 / total * f1_from_counts(tp, predicted_c - tp, support - tp);
    }
    Ok(score)
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_lengths(actual.len(), predicted.len())?;
    let mse = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum::<f64>() / actual.len() as f64;
    Ok(mse.sqrt())
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{a} labels against {b} predictions")));
    }
    if a == 0 {
        return Err(Error::Config("no predictions to score".into()));
    }
    Ok(())
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
    /// Row-normalized percentages; all-zero rows stay zero.
    pub row_percent: Vec<Vec<f64>>,
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    check_lengths(truth.len(), predicted.len())?;
    let mut counts = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::Range(format!("label pair ({t}, {p}) outside {n_classes} classes")));
        }
        counts[t][p] += 1;
    }
    let row_percent = counts
        .iter()
        .map(|row| {
            let n: usize = row.iter().sum();
            row.iter()
                .map(|&c| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 })
                .collect()
        })
        .collect();
    Ok(ConfusionMatrix { counts, row_percent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn f1_example() {
        let mut truth = vec![true; 50];
        truth.extend(vec![false; 50]);
        // 45 TP, 5 FN, 5 FP, 45 TN
        let mut pred = vec![true; 45];
        pred.extend(vec![false; 5]);
        pred.extend(vec![true; 5]);
        pred.extend(vec![false; 45]);
        assert!((binary_f1(&truth, &pred).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn weighted_f1_example() {
        let w = weighted_f1(&[0, 0, 1, 1], &[0, 0, 1, 0], 2).unwrap();
        assert!((w - (2.0 * 0.8 + 2.0 * (2.0 / 3.0)) / 4.0).abs() < 1e-12);
        assert_eq!(format!("{w:.4}"), "0.7333");
    }

    #[test]
    fn rmse_example() {
        let r = rmse(&[1.0, 7.0], &[2.0, 5.0]).unwrap();
        assert_eq!(r, 2.5f64.sqrt());
        assert_eq!(format!("{r:.4}"), "1.5811");
    }

    #[test]
    fn confusion_examples() {
        let cm = confusion_matrix(&[0, 1, 2, 3], &[0, 1, 2, 3], 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(cm.counts[i][j], usize::from(i == j));
            }
        }
        let cm = confusion_matrix(&[0, 1, 2, 3, 3], &[0; 5], 4).unwrap();
        assert!(cm.counts.iter().all(|r| r[1..].iter().all(|&c| c == 0)));
        assert_eq!(cm.counts[3][0], 2);
        assert!(matches!(confusion_matrix(&[4], &[0], 4), Err(Error::Range(_))));
        assert!(matches!(binary_f1(&[], &[]), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn confusion_rows_sum_to_support(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let cm = confusion_matrix(&t, &p, 4).unwrap();
            for c in 0..4 {
                let support = t.iter().filter(|&&x| x == c).count();
                prop_assert_eq!(cm.counts[c].iter().sum::<usize>(), support);
                let pct: f64 = cm.row_percent[c].iter().sum();
                prop_assert!(support == 0 || (pct - 100.0).abs() < 1e-9);
            }
            let w = weighted_f1(&t, &p, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&w));
        }
    }
}
