//! Plain mini-batch SGD on softmax cross-entropy.
//!
//! Batch-norm layers train on batch statistics; after the last step their
//! running statistics are recomputed exactly over the training inputs.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{seeded_rng, CounterRng};
use crate::tensor::Matrix;

use super::{relu, BatchNorm, Block, Linear, NetworkCheckpoint, NetworkSpec, BN_EPS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainHyper {
    pub lr: f32,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 0.05,
            steps: 1000,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: NetworkCheckpoint,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// He-normal weights (`N(0, 2 / fan_in)` from the documented stream), zero
/// biases, identity batch norm.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<NetworkCheckpoint> {
    let mut rng = seeded_rng(seed).fork(1);
    let depth = spec.depth();
    let mut blocks = Vec::with_capacity(depth);
    for j in 0..depth {
        let (fan_in, fan_out) = (spec.widths[j], spec.widths[j + 1]);
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = Matrix::from_fn(fan_out, fan_in, |_, _| (rng.normal() * std) as f32);
        let hidden = j + 1 < depth;
        blocks.push(Block {
            name: format!("fc{j}"),
            linear: Linear {
                weight,
                bias: vec![0.0; fan_out],
            },
            batchnorm: (hidden && spec.batchnorm).then(|| BatchNorm::identity(fan_out)),
            relu: hidden,
        });
    }
    NetworkCheckpoint::new(blocks)
}

/// Mean cross-entropy of `logits` (`C x n`) against `labels`, and the
/// gradient with respect to the logits.
pub(crate) fn softmax_xent(logits: &Matrix, labels: &[usize]) -> (f64, Matrix) {
    let (classes, n) = logits.shape();
    let mut grad = Matrix::zeros(classes, n);
    let mut loss = 0.0f64;
    for (t, &label) in labels.iter().enumerate() {
        let col: Vec<f64> = (0..classes).map(|c| f64::from(logits.get(c, t))).collect();
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = col.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        loss += total.ln() + max - col[label];
        for c in 0..classes {
            let p = exps[c] / total;
            let g = p - if c == label { 1.0 } else { 0.0 };
            grad.set(c, t, (g / n as f64) as f32);
        }
    }
    (loss / n as f64, grad)
}

fn full_loss(net: &NetworkCheckpoint, data: &Dataset) -> Result<f64> {
    let logits = net.logits(&data.inputs)?;
    Ok(softmax_xent(&logits, &data.labels).0)
}

struct BlockCache {
    input: Matrix,
    normalized: Option<Matrix>,
    inv_std: Vec<f32>,
    activated: Matrix,
}

fn train_step(net: &mut NetworkCheckpoint, x: Matrix, labels: &[usize], lr: f32) -> Result<f64> {
    let n = x.cols() as f32;
    let mut caches = Vec::with_capacity(net.depth());
    let mut z = x;
    for block in &net.blocks {
        let h = block.linear.weight.affine(&z, &block.linear.bias)?;
        let (u, normalized, inv_std) = match &block.batchnorm {
            Some(bn) => {
                let mut xhat = h.clone();
                let mut inv_std = Vec::with_capacity(h.rows());
                let mut u = h.clone();
                for r in 0..h.rows() {
                    let row = h.row(r);
                    let mean = row.iter().sum::<f32>() / n;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
                    let inv = 1.0 / (var + BN_EPS).sqrt();
                    inv_std.push(inv);
                    for (t, v) in xhat.row_mut(r).iter_mut().enumerate() {
                        *v = (row[t] - mean) * inv;
                    }
                    for (t, v) in u.row_mut(r).iter_mut().enumerate() {
                        *v = bn.gain[r] * xhat.get(r, t) + bn.shift[r];
                    }
                }
                (u, Some(xhat), inv_std)
            }
            None => (h, None, Vec::new()),
        };
        let next = if block.relu { u.map(relu) } else { u.clone() };
        caches.push(BlockCache {
            input: std::mem::replace(&mut z, next),
            normalized,
            inv_std,
            activated: u,
        });
    }
    let (loss, mut grad) = softmax_xent(&z, labels);
    if !loss.is_finite() {
        return Ok(loss);
    }
    for (block, cache) in net.blocks.iter_mut().zip(caches).rev() {
        if block.relu {
            for (g, &u) in grad.data_mut().iter_mut().zip(cache.activated.data()) {
                if u <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        if let (Some(bn), Some(xhat)) = (&mut block.batchnorm, &cache.normalized) {
            for r in 0..grad.rows() {
                let g = grad.row(r).to_vec();
                let xr = xhat.row(r);
                let dshift: f32 = g.iter().sum();
                let dgain: f32 = g.iter().zip(xr).map(|(a, b)| a * b).sum();
                let gamma = bn.gain[r];
                // d xhat = g * gamma; dh = inv/n * (n dxhat - sum dxhat - xhat sum(dxhat xhat))
                let sum_dx = gamma * dshift;
                let sum_dx_x = gamma * dgain;
                let scale = cache.inv_std[r] / n;
                for (t, v) in grad.row_mut(r).iter_mut().enumerate() {
                    *v = scale * (n * gamma * g[t] - sum_dx - xr[t] * sum_dx_x);
                }
                bn.gain[r] -= lr * dgain;
                bn.shift[r] -= lr * dshift;
            }
        }
        let dinput = block.linear.weight.transpose().matmul(&grad)?;
        let dweight = grad.matmul(&cache.input.transpose())?;
        for (w, d) in block.linear.weight.data_mut().iter_mut().zip(dweight.data()) {
            *w -= lr * d;
        }
        for (r, b) in block.linear.bias.iter_mut().enumerate() {
            *b -= lr * grad.row(r).iter().sum::<f32>();
        }
        grad = dinput;
    }
    Ok(loss)
}

pub fn train_toy(task: &Dataset, spec: &NetworkSpec, hyper: TrainHyper) -> Result<TrainOutcome> {
    if spec.widths[0] != task.input_dim() {
        return Err(Error::shape("network input width", task.input_dim(), spec.widths[0]));
    }
    if *spec.widths.last().expect("nonempty") != task.classes {
        return Err(Error::shape("network output width", task.classes, spec.widths.last().unwrap()));
    }
    if hyper.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut net = init_network(spec, hyper.seed)?;
    let initial_loss = full_loss(&net, task)?;
    if hyper.steps == 0 {
        return Ok(TrainOutcome {
            net,
            initial_loss,
            final_loss: initial_loss,
        });
    }
    let mut order_rng: CounterRng = seeded_rng(hyper.seed).fork(2);
    let n = task.len();
    let mut order = order_rng.permutation(n);
    let mut cursor = 0;
    for step in 0..hyper.steps {
        let mut idx = Vec::with_capacity(hyper.batch_size);
        while idx.len() < hyper.batch_size.min(n) {
            if cursor == n {
                order_rng.shuffle(&mut order);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let x = task.inputs.select_cols(&idx);
        let labels: Vec<usize> = idx.iter().map(|&i| task.labels[i]).collect();
        let loss = train_step(&mut net, x, &labels, hyper.lr)?;
        let weights_ok = net.blocks.iter().all(|b| b.linear.weight.is_finite());
        if !loss.is_finite() || !weights_ok {
            return Err(Error::Divergence { step });
        }
    }
    let net = net.reset_batchnorm(&task.inputs, n, 1)?;
    let final_loss = full_loss(&net, task)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence { step: hyper.steps });
    }
    Ok(TrainOutcome {
        net,
        initial_loss,
        final_loss,
    })
}
