//! Forecast verification: MSE and the Critical Success Index.

use crate::{Error, Result};

/// CSI = TP/(TP+FN+FP) with events `value ≥ threshold`; 1 when no events are
/// predicted or observed.
pub fn csi(predictions: &[f64], truth: &[f64], threshold: f64) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::invalid(format!(
            "shape mismatch: {} predictions vs {} truth values",
            predictions.len(),
            truth.len()
        )));
    }
    let mut acc = CsiAccumulator::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        acc.add(p, t, threshold);
    }
    Ok(acc.value())
}

pub fn mse(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.len() != truth.len() || predictions.is_empty() {
        return Err(Error::invalid("shape mismatch or empty input"));
    }
    let sum: f64 = predictions
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// Streaming CSI counts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CsiAccumulator {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

impl CsiAccumulator {
    pub fn add(&mut self, prediction: f64, truth: f64, threshold: f64) {
        let p = prediction >= threshold;
        let t = truth >= threshold;
        match (p, t) {
            (true, true) => self.true_positives += 1,
            (true, false) => self.false_positives += 1,
            (false, true) => self.false_negatives += 1,
            (false, false) => {}
        }
    }

    pub fn value(&self) -> f64 {
        let denom = self.true_positives + self.false_positives + self.false_negatives;
        if denom == 0 {
            1.0
        } else {
            self.true_positives as f64 / denom as f64
        }
    }
}

/// Streaming mean squared error.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MseAccumulator {
    pub sum: f64,
    pub count: u64,
}

impl MseAccumulator {
    pub fn add(&mut self, prediction: f64, truth: f64) {
        let d = prediction - truth;
        self.sum += d * d;
        self.count += 1;
    }

    pub fn value(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}
