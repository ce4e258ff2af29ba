//! Classification metrics: accuracy, macro-averaged F1, confusion matrix.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// confusion[true_class][predicted_class]
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy is the fraction of exact matches. Per-class F1 is 2PR/(P+R),
/// defined as 0 when P+R is 0; macro-F1 averages over all classes, so a
/// class absent from both truth and prediction still contributes a zero.
pub fn metrics(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::config(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::config("metrics of an empty prediction set"));
    }
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= num_classes || l >= num_classes {
            return Err(Error::config(format!(
                "class index out of range: prediction {p}, label {l}, {num_classes} classes"
            )));
        }
        confusion[l][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / labels.len() as f64;

    let mut f1_sum = 0.0;
    for c in 0..num_classes {
        let tp = confusion[c][c];
        let fp: usize = (0..num_classes).filter(|&t| t != c).map(|t| confusion[t][c]).sum();
        let fn_: usize = (0..num_classes).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        f1_sum += f1;
    }
    let macro_f1 = f1_sum / num_classes as f64;

    Ok(Metrics {
        accuracy,
        macro_f1,
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = metrics(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn all_one_class_on_balanced_binary() {
        // Predicting all zeros on a balanced binary set: class-0 F1 is
        // 2*(1/2*1)/(3/2) = 2/3, class-1 F1 is 0, macro 1/3.
        let m = metrics(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_contributes_zero() {
        let m = metrics(&[0, 0], &[0, 0], 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn confusion_rows_sum_to_support() {
        let m = metrics(&[0, 1, 1, 2, 0], &[0, 1, 2, 2, 1], 3).unwrap();
        let support: Vec<usize> = m.confusion.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(support, vec![1, 2, 2]);
    }

    #[test]
    fn rejects_mismatched_lengths() {
        assert!(metrics(&[0], &[0, 1], 2).is_err());
        assert!(metrics(&[], &[], 2).is_err());
        assert!(metrics(&[5], &[0], 2).is_err());
    }
}
