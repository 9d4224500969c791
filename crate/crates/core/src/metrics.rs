//! Accuracy and macro-F1 over the fixed three-class label set.

use serde::{Deserialize, Serialize};

use crate::sample::Sentiment;

/// Counts indexed `[gold][predicted]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; 3]; 3]);

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (Sentiment, Sentiment)>>(pairs: I) -> Self {
        let mut m = Self::new();
        for (gold, pred) in pairs {
            m.add(gold, pred);
        }
        m
    }

    pub fn add(&mut self, gold: Sentiment, predicted: Sentiment) {
        self.0[gold.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..3).map(|i| self.0[i][i]).sum()
    }

    /// `correct / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.correct() as f64 / total as f64
    }

    /// F1 of one class, taking `0/0` as 0 wherever it appears.
    pub fn f1(&self, class: Sentiment) -> f64 {
        let c = class.index();
        let tp = self.0[c][c] as f64;
        let predicted: u64 = (0..3).map(|g| self.0[g][c]).sum();
        let gold: u64 = self.0[c].iter().sum();
        let precision = ratio(tp, predicted as f64);
        let recall = ratio(tp, gold as f64);
        ratio(2.0 * precision * recall, precision + recall)
    }

    /// Unweighted mean of the three per-class F1 scores.
    pub fn macro_f1(&self) -> f64 {
        Sentiment::ALL.iter().map(|&c| self.f1(c)).sum::<f64>() / 3.0
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            accuracy: self.accuracy(),
            macro_f1: self.macro_f1(),
            per_class_f1: Sentiment::ALL.map(|c| self.f1(c)),
            confusion_matrix: *self,
            total: self.total(),
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// In `[negative, positive, neutral]` order.
    pub per_class_f1: [f64; 3],
    pub confusion_matrix: ConfusionMatrix,
    pub total: u64,
}
