//! Accuracy and per-class precision, recall and F1 from confusion counts.

use serde::Serialize;

/// Confusion counts with class 1 (rumor) as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub true_rumor: usize,
    pub false_rumor: usize,
    pub true_nonrumor: usize,
    pub false_nonrumor: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[u8], labels: &[u8]) -> Self {
        assert_eq!(predicted.len(), labels.len(), "prediction count");
        let mut c = Confusion::default();
        for (&p, &y) in predicted.iter().zip(labels) {
            match (p, y) {
                (1, 1) => c.true_rumor += 1,
                (1, _) => c.false_rumor += 1,
                (_, 0) => c.true_nonrumor += 1,
                _ => c.false_nonrumor += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.true_rumor + self.false_rumor + self.true_nonrumor + self.false_nonrumor
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassScores {
    fn new(tp: usize, fp: usize, fneg: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fneg);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub rumor: ClassScores,
    pub nonrumor: ClassScores,
    pub confusion: Confusion,
}

impl Metrics {
    pub fn from_confusion(c: Confusion) -> Self {
        let total = c.total();
        let accuracy = if total == 0 {
            0.0
        } else {
            (c.true_rumor + c.true_nonrumor) as f64 / total as f64
        };
        Self {
            accuracy,
            rumor: ClassScores::new(c.true_rumor, c.false_rumor, c.false_nonrumor),
            nonrumor: ClassScores::new(c.true_nonrumor, c.false_nonrumor, c.false_rumor),
            confusion: c,
        }
    }

    pub fn from_predictions(predicted: &[u8], labels: &[u8]) -> Self {
        Self::from_confusion(Confusion::from_predictions(predicted, labels))
    }
}
