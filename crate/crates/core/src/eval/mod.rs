//! Accuracy, linear probes, and the size/accuracy sweep.

mod probe;
mod tradeoff;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::merging::{ensemble_forward, EnsembleMode};
use crate::network::NetworkCheckpoint;
use crate::tensor::{argmax, Matrix};

pub use probe::{linear_probe, ProbeHyper};
pub use tradeoff::{
    run_tradeoff, TradeoffConfig, TradeoffMeta, TradeoffResult, TradeoffRow, TRADEOFF_HEADER, TRADEOFF_META_FILE,
};

/// Anything that maps a `d x n` input batch to `classes x n` logits.
pub trait Classifier: Sync {
    fn logits(&self, x: &Matrix) -> Result<Matrix>;
}

impl Classifier for NetworkCheckpoint {
    fn logits(&self, x: &Matrix) -> Result<Matrix> {
        NetworkCheckpoint::logits(self, x)
    }
}

/// Logit average of two networks.
pub struct Ensemble<'a> {
    pub a: &'a NetworkCheckpoint,
    pub b: &'a NetworkCheckpoint,
}

impl Classifier for Ensemble<'_> {
    fn logits(&self, x: &Matrix) -> Result<Matrix> {
        ensemble_forward(self.a, self.b, x, EnsembleMode::LogitAverage)
    }
}

/// Fraction of columns whose largest logit is the label; ties go to the
/// lower class index.
pub fn logits_accuracy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if logits.cols() != labels.len() {
        return Err(Error::shape("logits", format!("{} samples", labels.len()), logits.cols()));
    }
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.rows()) {
        return Err(Error::invalid(format!("label {bad} outside the {} model outputs", logits.rows())));
    }
    let hits = (0..logits.cols())
        .filter(|&t| argmax((0..logits.rows()).map(|c| logits.get(c, t))) == labels[t])
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn accuracy(model: &impl Classifier, data: &Dataset) -> Result<f64> {
    logits_accuracy(&model.logits(&data.inputs)?, &data.labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_to_class_zero() {
        let logits = Matrix::zeros(2, 4);
        assert_eq!(logits_accuracy(&logits, &[0, 1, 0, 0]).unwrap(), 0.75);
    }

    #[test]
    fn perfect_logits() {
        let labels = [2, 0, 1, 2];
        let logits = Matrix::from_fn(3, 4, |c, t| if c == labels[t] { 1.0 } else { -1.0 });
        assert_eq!(logits_accuracy(&logits, &labels).unwrap(), 1.0);
    }

    #[test]
    fn label_out_of_range() {
        assert!(logits_accuracy(&Matrix::zeros(2, 1), &[2]).is_err());
        assert!(logits_accuracy(&Matrix::zeros(2, 2), &[0]).is_err());
    }
}
