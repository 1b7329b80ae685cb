//! Binary classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Decision rule for probabilities: exactly 0.5 is negative.
pub fn classify(probability: f64) -> bool {
    probability > 0.5
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn from_predictions(predictions: &[bool], labels: &[bool]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut c = Confusion::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            c.record(p, y);
        }
        Ok(c)
    }

    pub fn record(&mut self, prediction: bool, label: bool) {
        match (prediction, label) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `2TP / (2TP + FP + FN)`, 0 when nothing is positive.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            (self.tp + self.tn) as f64 / self.total() as f64
        }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-seed results for one task summarized across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: String,
    pub seeds: Vec<u64>,
    pub f1_mean: f64,
    pub f1_std: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
    /// One confusion matrix per seed, in seed order.
    pub confusion: Vec<Confusion>,
    pub config_hash: String,
}

impl MetricReport {
    pub fn new(task: impl Into<String>, seeds: Vec<u64>, confusion: Vec<Confusion>, config_hash: String) -> Self {
        let f1: Vec<f64> = confusion.iter().map(Confusion::f1).collect();
        let acc: Vec<f64> = confusion.iter().map(Confusion::accuracy).collect();
        let (f1_mean, f1_std) = mean_std(&f1);
        let (acc_mean, acc_std) = mean_std(&acc);
        MetricReport {
            task: task.into(),
            seeds,
            f1_mean,
            f1_std,
            acc_mean,
            acc_std,
            confusion,
            config_hash,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_is_negative() {
        assert!(!classify(0.5));
        assert!(classify(0.5000001));
    }

    #[test]
    fn empty_positive_class() {
        let c = Confusion::from_predictions(&[false; 4], &[false; 4]).unwrap();
        assert_eq!((c.f1(), c.accuracy()), (0.0, 1.0));
    }

    #[test]
    fn std_of_constant_is_zero() {
        assert_eq!(mean_std(&[0.7; 5]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
