//! Sequential `Linear(+BatchNorm)(+ReLU)` networks.
//!
//! Boundaries are numbered from 0: boundary `b` is the input of block `b`,
//! so a network with `L` blocks has boundary widths `d_0..=d_L`, with `d_0`
//! the input width and `d_L` the number of logits.

mod train;

use std::path::Path;

use crate::checkpoint::{Bundle, LayerEntry, LayerKind, Tensor, ACTIVATIONS_FORMAT, CHECKPOINT_FORMAT};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tensor::Matrix;

pub use train::{init_network, train_toy, TrainHyper, TrainOutcome};

pub const BN_EPS: f32 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `out x in`.
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gain: Vec<f32>,
    pub shift: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl BatchNorm {
    pub fn identity(width: usize) -> Self {
        BatchNorm {
            gain: vec![1.0; width],
            shift: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.gain.len()
    }

    /// Inference-mode normalization with the running statistics.
    pub fn apply(&self, h: &Matrix) -> Matrix {
        let mut out = h.clone();
        for r in 0..h.rows() {
            let inv = 1.0 / (self.running_var[r] + BN_EPS).sqrt();
            let (g, s, m) = (self.gain[r], self.shift[r], self.running_mean[r]);
            for v in out.row_mut(r) {
                *v = g * ((*v - m) * inv) + s;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub linear: Linear,
    pub batchnorm: Option<BatchNorm>,
    pub relu: bool,
}

impl Block {
    pub fn in_dim(&self) -> usize {
        self.linear.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.linear.weight.rows()
    }

    /// BatchNorm (if any) followed by ReLU (if any).
    fn activate(&self, h: &Matrix) -> Matrix {
        let u = match &self.batchnorm {
            Some(bn) => bn.apply(h),
            None => h.clone(),
        };
        if self.relu {
            u.map(relu)
        } else {
            u
        }
    }
}

#[inline]
pub fn relu(v: f32) -> f32 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Architecture of a plain network: boundary widths and whether hidden
/// blocks carry batch norm.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub widths: Vec<usize>,
    pub batchnorm: bool,
}

impl NetworkSpec {
    pub fn new(widths: Vec<usize>, batchnorm: bool) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!(
                "network needs at least two nonzero boundary widths, got {widths:?}"
            )));
        }
        Ok(NetworkSpec { widths, batchnorm })
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkCheckpoint {
    blocks: Vec<Block>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Capture {
    None,
    Inputs,
    PreActivations,
    Both,
}

impl Capture {
    fn inputs(self) -> bool {
        matches!(self, Capture::Inputs | Capture::Both)
    }

    fn pre(self) -> bool {
        matches!(self, Capture::PreActivations | Capture::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    InputToLayer,
    PreActivationOutput,
}

/// Activations of one batch at every boundary.
///
/// `inputs[b]` is `Z_b`, the `d_b x n` input of block `b` (post BN/ReLU of
/// the previous block); `inputs[L]` is the logits. `pre_activations[j]` is
/// `W_j Z_j + b_j`. Either list is empty when not captured.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub inputs: Vec<Matrix>,
    pub pre_activations: Vec<Matrix>,
    pub samples: usize,
}

impl ActivationTrace {
    pub fn boundary_kind(&self, boundary: usize) -> BoundaryKind {
        if boundary + 1 == self.inputs.len() {
            BoundaryKind::PreActivationOutput
        } else {
            BoundaryKind::InputToLayer
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut bundle = Bundle::new(ACTIVATIONS_FORMAT, vec![]);
        for (b, z) in self.inputs.iter().enumerate() {
            bundle.push(format!("Z{b}"), Tensor::from_matrix(z));
        }
        for (j, h) in self.pre_activations.iter().enumerate() {
            bundle.push(format!("H{j}"), Tensor::from_matrix(h));
        }
        bundle.save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let bundle = Bundle::load(dir)?;
        if bundle.format_version != ACTIVATIONS_FORMAT {
            return Err(Error::Manifest {
                path: dir.to_path_buf(),
                message: format!("expected format {ACTIVATIONS_FORMAT}, got {}", bundle.format_version),
            });
        }
        let mut map = bundle.into_map();
        let take = |map: &mut std::collections::HashMap<String, Tensor>, prefix: &str| -> Result<Vec<Matrix>> {
            let mut out = Vec::new();
            while let Some(t) = map.remove(&format!("{prefix}{}", out.len())) {
                out.push(t.into_matrix(prefix)?);
            }
            Ok(out)
        };
        let inputs = take(&mut map, "Z")?;
        let pre_activations = take(&mut map, "H")?;
        let samples = inputs
            .first()
            .or(pre_activations.first())
            .map_or(0, Matrix::cols);
        if inputs.iter().chain(&pre_activations).any(|m| m.cols() != samples) {
            return Err(Error::Manifest {
                path: dir.to_path_buf(),
                message: "activation tensors disagree on sample count".into(),
            });
        }
        Ok(ActivationTrace {
            inputs,
            pre_activations,
            samples,
        })
    }
}

impl NetworkCheckpoint {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        let net = NetworkCheckpoint { blocks };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::invalid("network has no linear layers"));
        }
        let last = self.blocks.len() - 1;
        for (j, block) in self.blocks.iter().enumerate() {
            let lin = &block.linear;
            if lin.bias.len() != lin.weight.rows() {
                return Err(Error::shape(
                    format!("bias of `{}`", block.name),
                    lin.weight.rows(),
                    lin.bias.len(),
                ));
            }
            if !lin.weight.is_finite() {
                return Err(Error::NonFinite(format!("{}.weight", block.name)));
            }
            if lin.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{}.bias", block.name)));
            }
            if let Some(bn) = &block.batchnorm {
                if j == last {
                    return Err(Error::invalid("batch norm after the output layer is not supported"));
                }
                let w = block.out_dim();
                for (field, v) in [
                    ("gain", &bn.gain),
                    ("shift", &bn.shift),
                    ("running_mean", &bn.running_mean),
                    ("running_var", &bn.running_var),
                ] {
                    if v.len() != w {
                        return Err(Error::shape(format!("{}_bn.{field}", block.name), w, v.len()));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NonFinite(format!("{}_bn.{field}", block.name)));
                    }
                }
                if bn.running_var.iter().any(|&v| v <= 0.0) {
                    return Err(Error::invalid(format!(
                        "`{}_bn.running_var` must be strictly positive",
                        block.name
                    )));
                }
            }
            if block.relu == (j == last) {
                return Err(Error::invalid(format!(
                    "block `{}`: hidden blocks need a ReLU and the output block must not have one",
                    block.name
                )));
            }
            if j > 0 {
                let prev = &self.blocks[j - 1];
                if prev.out_dim() != block.in_dim() {
                    return Err(Error::DimChain {
                        prev: prev.name.clone(),
                        out_dim: prev.out_dim(),
                        next: block.name.clone(),
                        in_dim: block.in_dim(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }

    /// Number of linear layers `L`.
    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Boundary widths `d_0..=d_L`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.blocks[0].in_dim()];
        w.extend(self.blocks.iter().map(Block::out_dim));
        w
    }

    pub fn has_batchnorm(&self) -> bool {
        self.blocks.iter().any(|b| b.batchnorm.is_some())
    }

    /// True when both networks have the same widths and BN placement.
    pub fn same_architecture(&self, other: &NetworkCheckpoint) -> bool {
        self.widths() == other.widths()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.batchnorm.is_some() == b.batchnorm.is_some())
    }

    pub fn forward(&self, x: &Matrix, capture: Capture) -> Result<(Matrix, Option<ActivationTrace>)> {
        if x.rows() != self.blocks[0].in_dim() {
            return Err(Error::shape("network input", self.blocks[0].in_dim(), x.rows()));
        }
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let mut z = x.clone();
        for block in &self.blocks {
            let h = block.linear.weight.affine(&z, &block.linear.bias)?;
            if !h.is_finite() {
                return Err(Error::Numeric(block.name.clone()));
            }
            let next = block.activate(&h);
            if !next.is_finite() {
                return Err(Error::Numeric(block.name.clone()));
            }
            if capture.inputs() {
                inputs.push(std::mem::replace(&mut z, next));
            } else {
                z = next;
            }
            if capture.pre() {
                pre.push(h);
            }
        }
        let trace = (capture != Capture::None).then(|| {
            if capture.inputs() {
                inputs.push(z.clone());
            }
            ActivationTrace {
                inputs,
                pre_activations: pre,
                samples: x.cols(),
            }
        });
        Ok((z, trace))
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x, Capture::None)?.0)
    }

    /// Features entering the output layer, `d_{L-1} x n`.
    pub fn penultimate(&self, x: &Matrix) -> Result<Matrix> {
        let (_, trace) = self.forward(x, Capture::Inputs)?;
        let mut inputs = trace.expect("captured").inputs;
        inputs.truncate(self.depth());
        Ok(inputs.pop().expect("depth >= 1"))
    }

    /// Recomputes every batch-norm layer's running statistics as the exact
    /// mean and (population) variance of its input over the first
    /// `batches * batch_size` samples of `inputs`. Layers are processed in
    /// order, so later layers see the already-updated earlier ones.
    pub fn reset_batchnorm(&self, inputs: &Matrix, batch_size: usize, batches: usize) -> Result<NetworkCheckpoint> {
        if inputs.cols() == 0 || batch_size == 0 || batches == 0 {
            return Err(Error::invalid("batch-norm reset needs a non-empty dataset"));
        }
        if !self.has_batchnorm() {
            return Ok(self.clone());
        }
        let n = inputs.cols().min(batch_size.saturating_mul(batches));
        let mut z = if n == inputs.cols() {
            inputs.clone()
        } else {
            inputs.select_cols(&(0..n).collect::<Vec<_>>())
        };
        if z.rows() != self.blocks[0].in_dim() {
            return Err(Error::shape("network input", self.blocks[0].in_dim(), z.rows()));
        }
        let mut out = self.clone();
        for block in &mut out.blocks {
            let h = block.linear.weight.affine(&z, &block.linear.bias)?;
            if let Some(bn) = &mut block.batchnorm {
                for r in 0..h.rows() {
                    let row = h.row(r);
                    let mean = row.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
                    let var = row.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n as f64;
                    bn.running_mean[r] = mean as f32;
                    // A dead unit has zero variance; keep the stored statistic valid.
                    bn.running_var[r] = (var as f32).max(f32::MIN_POSITIVE);
                }
            }
            z = block.activate(&h);
        }
        Ok(out)
    }

    /// Relabels hidden units: at every boundary `b`, new unit `a` is old unit
    /// `src[b][a]`. Boundaries 0 and `L` must map to themselves. The returned
    /// network computes the same function.
    pub fn gather_units(&self, src: &[Vec<usize>]) -> Result<NetworkCheckpoint> {
        let widths = self.widths();
        if src.len() != widths.len() {
            return Err(Error::shape("unit relabeling", widths.len(), src.len()));
        }
        for (b, (map, &w)) in src.iter().zip(&widths).enumerate() {
            if !is_permutation(map, w) {
                return Err(Error::invalid(format!("relabeling at boundary {b} is not a bijection on {w} units")));
            }
            if (b == 0 || b + 1 == widths.len()) && map.iter().enumerate().any(|(i, &j)| i != j) {
                return Err(Error::invalid(format!("boundary {b} cannot be permuted")));
            }
        }
        let mut blocks = self.blocks.clone();
        for (j, block) in blocks.iter_mut().enumerate() {
            let (rows, cols) = (&src[j + 1], &src[j]);
            let w = &self.blocks[j].linear.weight;
            block.linear.weight = Matrix::from_fn(w.rows(), w.cols(), |r, c| w.get(rows[r], cols[c]));
            block.linear.bias = rows.iter().map(|&r| self.blocks[j].linear.bias[r]).collect();
            if let Some(bn) = &mut block.batchnorm {
                let old = self.blocks[j].batchnorm.as_ref().expect("same layout");
                let pick = |v: &[f32]| rows.iter().map(|&r| v[r]).collect::<Vec<f32>>();
                bn.gain = pick(&old.gain);
                bn.shift = pick(&old.shift);
                bn.running_mean = pick(&old.running_mean);
                bn.running_var = pick(&old.running_var);
            }
        }
        NetworkCheckpoint::new(blocks)
    }

    /// Copy whose hidden unit `sigma[b][a]` is this network's unit `a`.
    pub fn permuted_copy(&self, sigma: &[Vec<usize>]) -> Result<NetworkCheckpoint> {
        let inverse: Vec<Vec<usize>> = sigma.iter().map(|s| invert_permutation(s)).collect();
        self.gather_units(&inverse)
    }

    pub fn to_bundle(&self) -> Bundle {
        let mut layers = Vec::new();
        let mut bundle_tensors = Vec::new();
        for block in &self.blocks {
            let (out, inp) = (block.out_dim(), block.in_dim());
            layers.push(LayerEntry {
                name: block.name.clone(),
                kind: LayerKind::Linear,
                in_dim: inp,
                out_dim: out,
            });
            bundle_tensors.push((format!("{}.weight", block.name), Tensor::from_matrix(&block.linear.weight)));
            bundle_tensors.push((format!("{}.bias", block.name), Tensor::from_vector(&block.linear.bias)));
            if let Some(bn) = &block.batchnorm {
                let name = format!("{}_bn", block.name);
                layers.push(LayerEntry {
                    name: name.clone(),
                    kind: LayerKind::Batchnorm,
                    in_dim: out,
                    out_dim: out,
                });
                for (field, v) in [
                    ("gain", &bn.gain),
                    ("shift", &bn.shift),
                    ("running_mean", &bn.running_mean),
                    ("running_var", &bn.running_var),
                ] {
                    bundle_tensors.push((format!("{name}.{field}"), Tensor::from_vector(v)));
                }
            }
            if block.relu {
                layers.push(LayerEntry {
                    name: format!("{}_relu", block.name),
                    kind: LayerKind::Relu,
                    in_dim: out,
                    out_dim: out,
                });
            }
        }
        let mut bundle = Bundle::new(CHECKPOINT_FORMAT, layers);
        for (name, t) in bundle_tensors {
            bundle.push(name, t);
        }
        bundle
    }

    pub fn from_bundle(bundle: Bundle, origin: &Path) -> Result<Self> {
        if bundle.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Manifest {
                path: origin.to_path_buf(),
                message: format!("expected format {CHECKPOINT_FORMAT}, got {}", bundle.format_version),
            });
        }
        for pair in bundle.layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimChain {
                    prev: pair[0].name.clone(),
                    out_dim: pair[0].out_dim,
                    next: pair[1].name.clone(),
                    in_dim: pair[1].in_dim,
                });
            }
        }
        let layers = bundle.layers.clone();
        let mut tensors = bundle.into_map();
        let mut take = |name: String| -> Result<Tensor> {
            tensors.remove(&name).ok_or_else(|| Error::Manifest {
                path: origin.to_path_buf(),
                message: format!("missing tensor `{name}`"),
            })
        };
        let mut blocks: Vec<Block> = Vec::new();
        for layer in &layers {
            let malformed = |message: String| Error::Manifest {
                path: origin.to_path_buf(),
                message,
            };
            match layer.kind {
                LayerKind::Linear => {
                    let wname = format!("{}.weight", layer.name);
                    let weight = take(wname.clone())?.into_matrix(&wname)?;
                    if weight.shape() != (layer.out_dim, layer.in_dim) {
                        return Err(Error::shape(
                            format!("tensor `{wname}`"),
                            format!("{}x{}", layer.out_dim, layer.in_dim),
                            format!("{}x{}", weight.rows(), weight.cols()),
                        ));
                    }
                    let bname = format!("{}.bias", layer.name);
                    let bias = take(bname.clone())?.into_vector(&bname)?;
                    blocks.push(Block {
                        name: layer.name.clone(),
                        linear: Linear { weight, bias },
                        batchnorm: None,
                        relu: false,
                    });
                }
                LayerKind::Batchnorm | LayerKind::Relu if layer.in_dim != layer.out_dim => {
                    return Err(malformed(format!("layer `{}` must preserve width", layer.name)));
                }
                LayerKind::Batchnorm => {
                    let mut field = |f: &str| -> Result<Vec<f32>> {
                        let n = format!("{}.{f}", layer.name);
                        take(n.clone())?.into_vector(&n)
                    };
                    let bn = BatchNorm {
                        gain: field("gain")?,
                        shift: field("shift")?,
                        running_mean: field("running_mean")?,
                        running_var: field("running_var")?,
                    };
                    match blocks.last_mut() {
                        Some(b) if b.batchnorm.is_none() && !b.relu => b.batchnorm = Some(bn),
                        _ => return Err(malformed(format!("batchnorm `{}` must directly follow a linear layer", layer.name))),
                    }
                }
                LayerKind::Relu => match blocks.last_mut() {
                    Some(b) if !b.relu => b.relu = true,
                    _ => return Err(malformed(format!("relu `{}` must follow a linear or batchnorm layer", layer.name))),
                },
            }
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Manifest {
                path: origin.to_path_buf(),
                message: format!("tensor `{extra}` does not belong to any layer"),
            });
        }
        NetworkCheckpoint::new(blocks)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.to_bundle().save(dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let bundle = Bundle::load(dir)?;
        NetworkCheckpoint::from_bundle(bundle, dir)
    }

    pub fn content_hash(&self) -> Result<String> {
        crate::checkpoint::content_hash(&self.to_bundle())
    }
}

pub fn is_permutation(map: &[usize], n: usize) -> bool {
    if map.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    map.iter().all(|&j| j < n && !std::mem::replace(&mut seen[j], true))
}

pub fn invert_permutation(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &j) in p.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

/// Random hidden-unit permutations for every boundary of a network with the
/// given widths; boundaries 0 and `L` stay fixed.
pub fn random_hidden_permutations(widths: &[usize], rng: &mut CounterRng) -> Vec<Vec<usize>> {
    let last = widths.len() - 1;
    widths
        .iter()
        .enumerate()
        .map(|(b, &w)| {
            if b == 0 || b == last {
                (0..w).collect()
            } else {
                rng.permutation(w)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn single_linear(weight: Matrix) -> NetworkCheckpoint {
        let bias = vec![0.0; weight.rows()];
        NetworkCheckpoint::new(vec![Block {
            name: "fc0".into(),
            linear: Linear { weight, bias },
            batchnorm: None,
            relu: false,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single_linear(Matrix::identity(3));
        let x = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 4.0], vec![-3.0, 0.0]]);
        assert_eq!(net.logits(&x).unwrap(), x);
    }

    #[test]
    fn relu_boundary_zeroes_negative_inputs() {
        let net = NetworkCheckpoint::new(vec![
            Block {
                name: "fc0".into(),
                linear: Linear {
                    weight: Matrix::identity(2),
                    bias: vec![0.0; 2],
                },
                batchnorm: None,
                relu: true,
            },
            Block {
                name: "fc1".into(),
                linear: Linear {
                    weight: Matrix::identity(2),
                    bias: vec![0.0; 2],
                },
                batchnorm: None,
                relu: false,
            },
        ])
        .unwrap();
        let x = Matrix::from_rows(&[vec![-1.0], vec![2.0]]);
        let (_, trace) = net.forward(&x, Capture::Inputs).unwrap();
        let trace = trace.unwrap();
        assert_eq!(trace.inputs[0], x);
        assert_eq!(trace.inputs[1].data(), &[0.0, 2.0]);
        assert_eq!(trace.boundary_kind(2), BoundaryKind::PreActivationOutput);
        assert_eq!(trace.boundary_kind(1), BoundaryKind::InputToLayer);
    }

    #[test]
    fn width_mismatch_is_a_shape_error() {
        let net = single_linear(Matrix::identity(3));
        assert!(matches!(net.logits(&Matrix::zeros(2, 4)), Err(Error::Shape { .. })));
    }

    #[test]
    fn structural_validation() {
        let mk = |relu| Block {
            name: "x".into(),
            linear: Linear {
                weight: Matrix::identity(2),
                bias: vec![0.0; 2],
            },
            batchnorm: None,
            relu,
        };
        assert!(NetworkCheckpoint::new(vec![mk(true)]).is_err());
        assert!(NetworkCheckpoint::new(vec![mk(false), mk(false)]).is_err());
        let mut bad_bn = mk(true);
        bad_bn.batchnorm = Some(BatchNorm {
            running_var: vec![1.0, 0.0],
            ..BatchNorm::identity(2)
        });
        assert!(NetworkCheckpoint::new(vec![bad_bn, mk(false)]).is_err());
    }

    #[test]
    fn gather_units_preserves_function() {
        let spec = NetworkSpec::new(vec![3, 5, 4, 2], true).unwrap();
        let net = init_network(&spec, 11).unwrap();
        let mut rng = seeded_rng(5);
        let sigma = random_hidden_permutations(&net.widths(), &mut rng);
        let copy = net.permuted_copy(&sigma).unwrap();
        let x = Matrix::from_fn(3, 7, |r, c| (r as f32 - c as f32) * 0.3);
        let ya = net.logits(&x).unwrap();
        let yb = copy.logits(&x).unwrap();
        for (a, b) in ya.data().iter().zip(yb.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        // unit sigma[b][a] of the copy is unit a of the original
        let (_, ta) = net.forward(&x, Capture::Inputs).unwrap();
        let (_, tb) = copy.forward(&x, Capture::Inputs).unwrap();
        let (ta, tb) = (ta.unwrap(), tb.unwrap());
        for a in 0..5 {
            let ra = ta.inputs[1].row(a);
            let rb = tb.inputs[1].row(sigma[1][a]);
            for (u, v) in ra.iter().zip(rb) {
                assert!((u - v).abs() < 1e-5);
            }
        }
    }
}
