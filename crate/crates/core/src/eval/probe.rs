use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeHyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        ProbeHyper {
            lr: 0.1,
            epochs: 30,
            batch_size: 32,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// Trains a multinomial logistic regression on standardized frozen features
/// (`f x n`, one sample per column) and returns its test accuracy.
pub fn linear_probe(
    train: &Matrix,
    train_labels: &[usize],
    test: &Matrix,
    test_labels: &[usize],
    hyper: ProbeHyper,
) -> Result<f64> {
    if train.cols() != train_labels.len() || test.cols() != test_labels.len() {
        return Err(Error::invalid("probe features and labels disagree on the sample count"));
    }
    if train.rows() != test.rows() {
        return Err(Error::shape("probe test features", train.rows(), test.rows()));
    }
    if test_labels.is_empty() {
        return Err(Error::invalid("probe needs test samples"));
    }
    let first = *train_labels.first().ok_or_else(|| Error::invalid("probe needs training samples"))?;
    if train_labels.iter().all(|&l| l == first) {
        return Err(Error::invalid("probe training labels contain a single class"));
    }
    if hyper.batch_size == 0 || !(hyper.lr > 0.0) {
        return Err(Error::invalid("probe needs a positive batch size and learning rate"));
    }
    let f = train.rows();
    let n = train.cols();
    let classes = train_labels.iter().chain(test_labels).max().copied().unwrap_or(0) + 1;

    let mut mean = vec![0.0f64; f];
    let mut scale = vec![1.0f64; f];
    for k in 0..f {
        let row = train.row(k);
        let mu = row.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
        let var = row.iter().map(|&v| (f64::from(v) - mu).powi(2)).sum::<f64>() / n as f64;
        mean[k] = mu;
        if var > 1e-12 {
            scale[k] = 1.0 / var.sqrt();
        }
    }
    let standardize = |m: &Matrix, t: usize| -> Vec<f64> { (0..f).map(|k| (f64::from(m.get(k, t)) - mean[k]) * scale[k]).collect() };
    let xs: Vec<Vec<f64>> = (0..n).map(|t| standardize(train, t)).collect();

    let mut w = vec![vec![0.0f64; f]; classes];
    let mut b = vec![0.0f64; classes];
    let scores = |w: &[Vec<f64>], b: &[f64], x: &[f64]| -> Vec<f64> {
        w.iter().zip(b).map(|(row, bias)| bias + row.iter().zip(x).map(|(p, q)| p * q).sum::<f64>()).collect()
    };
    let mut rng = seeded_rng(hyper.seed).fork(7);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..hyper.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(hyper.batch_size) {
            let mut gw = vec![vec![0.0f64; f]; classes];
            let mut gb = vec![0.0f64; classes];
            for &t in batch {
                let s = scores(&w, &b, &xs[t]);
                let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for c in 0..classes {
                    let g = exps[c] / total - if c == train_labels[t] { 1.0 } else { 0.0 };
                    gb[c] += g;
                    for k in 0..f {
                        gw[c][k] += g * xs[t][k];
                    }
                }
            }
            let m = batch.len() as f64;
            for c in 0..classes {
                b[c] -= hyper.lr * gb[c] / m;
                for k in 0..f {
                    w[c][k] -= hyper.lr * (gw[c][k] / m + hyper.l2 * w[c][k]);
                }
            }
        }
    }
    if w.iter().flatten().chain(&b).any(|v| !v.is_finite()) {
        return Err(Error::Divergence { step: hyper.epochs });
    }
    let hits = (0..test.cols())
        .filter(|&t| {
            let s = scores(&w, &b, &standardize(test, t));
            let best = s.iter().enumerate().fold(0, |best, (c, &v)| if v > s[best] { c } else { best });
            best == test_labels[t]
        })
        .count();
    Ok(hits as f64 / test.cols() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_features_are_separable() {
        let labels: Vec<usize> = (0..60).map(|t| t % 3).collect();
        let feats = Matrix::from_fn(3, 60, |c, t| if labels[t] == c { 1.0 } else { 0.0 });
        let acc = linear_probe(&feats, &labels, &feats, &labels, ProbeHyper::default()).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let feats = Matrix::zeros(2, 4);
        assert!(linear_probe(&feats, &[1, 1, 1, 1], &feats, &[1, 1, 1, 1], ProbeHyper::default()).is_err());
    }
}
