//! Classification metrics, macro-averaged over the two classes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Macro-averaged accuracy/precision/recall/F1 from predictions and labels
/// in {0, 1}. Per-class precision and recall with a zero denominator are
/// defined as 0, and F1 is the per-class harmonic mean before averaging.
pub fn evaluate_metrics(predictions: &[usize], labels: &[usize]) -> Result<Metrics> {
    if predictions.is_empty() {
        return Err(Error::arg("evaluate_metrics", "empty input".to_string()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::arg(
            "evaluate_metrics",
            format!("{} predictions vs {} labels", predictions.len(), labels.len()),
        ));
    }
    for (&p, &y) in predictions.iter().zip(labels) {
        if p > 1 || y > 1 {
            return Err(Error::arg("evaluate_metrics", format!("class out of range: pred {p}, label {y}")));
        }
    }

    let mut correct = 0usize;
    // counts[pred][label]
    let mut counts = [[0usize; 2]; 2];
    for (&p, &y) in predictions.iter().zip(labels) {
        counts[p][y] += 1;
        if p == y {
            correct += 1;
        }
    }

    let per_class = |c: usize| -> (f64, f64, f64) {
        let tp = counts[c][c];
        let fp = counts[c][1 - c];
        let fneg = counts[1 - c][c];
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        (precision, recall, f1)
    };
    let (p0, r0, f0) = per_class(0);
    let (p1, r1, f1) = per_class(1);
    Ok(Metrics {
        accuracy: correct as f64 / predictions.len() as f64,
        precision: 0.5 * (p0 + p1),
        recall: 0.5 * (r0 + r1),
        f1: 0.5 * (f0 + f1),
    })
}

/// Per-class view for one positive class, used by tests against hand-built
/// confusion counts.
pub fn class_metrics(predictions: &[usize], labels: &[usize], positive: usize) -> (f64, f64, f64) {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for (&p, &y) in predictions.iter().zip(labels) {
        if p == positive && y == positive {
            tp += 1;
        } else if p == positive {
            fp += 1;
        } else if y == positive {
            fneg += 1;
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let labels = vec![0, 1, 1, 0, 1];
        let m = evaluate_metrics(&labels, &labels).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.f1, 1.0);
    }

    #[test]
    fn all_mild_predictor_on_balanced_set_scores_half_accuracy() {
        let labels = vec![0, 1, 0, 1, 0, 1];
        let preds = vec![0; 6];
        let m = evaluate_metrics(&preds, &labels).unwrap();
        assert_eq!(m.accuracy, 0.5);
        // Severe precision/recall are 0 by the zero-denominator rule.
        let (p1, r1, f1) = class_metrics(&preds, &labels, 1);
        assert_eq!((p1, r1, f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn documented_confusion_counts_reproduce_exactly() {
        // TP=3, FP=1, FN=2, TN=4 with severe (1) as the positive class.
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..3 {
            preds.push(1);
            labels.push(1);
        }
        preds.push(1);
        labels.push(0);
        for _ in 0..2 {
            preds.push(0);
            labels.push(1);
        }
        for _ in 0..4 {
            preds.push(0);
            labels.push(0);
        }
        let (p, r, f1) = class_metrics(&preds, &labels, 1);
        assert_eq!(p, 0.75);
        assert_eq!(r, 0.6);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_confusion_matrix_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 1000;
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let m = evaluate_metrics(&preds, &labels).unwrap();

        // Brute-force oracle: count the four cells directly, then apply the
        // formulas for each class and average.
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fneg = 0.0;
        let mut tn = 0.0;
        for (&p, &y) in preds.iter().zip(&labels) {
            match (p, y) {
                (1, 1) => tp += 1.0,
                (1, 0) => fp += 1.0,
                (0, 1) => fneg += 1.0,
                (0, 0) => tn += 1.0,
                _ => unreachable!(),
            }
        }
        let acc = (tp + tn) / n as f64;
        let p1 = tp / (tp + fp);
        let r1 = tp / (tp + fneg);
        let p0 = tn / (tn + fneg);
        let r0 = tn / (tn + fp);
        let f1c = 2.0 * p1 * r1 / (p1 + r1);
        let f0c = 2.0 * p0 * r0 / (p0 + r0);
        assert_eq!(m.accuracy, acc);
        assert_eq!(m.precision, 0.5 * (p0 + p1));
        assert_eq!(m.recall, 0.5 * (r0 + r1));
        assert_eq!(m.f1, 0.5 * (f0c + f1c));
        assert!(m.accuracy >= 0.0 && m.accuracy <= 1.0);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(evaluate_metrics(&[], &[]).is_err());
    }
}
