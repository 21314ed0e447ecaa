use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::ActivationTrace;
use crate::tensor::Matrix;

use super::{lap::solve_lap, BoundaryMatch, MatchMode, PermutationSet, PERM_FORMAT};

/// Which recorded features stand for a hidden boundary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MatchFeature {
    /// `Z_b`, the post-nonlinearity input of block `b`.
    #[default]
    Inputs,
    /// `H_{b-1}`, the pre-activation output of block `b - 1`.
    PreActivations,
}

fn boundary_features(trace: &ActivationTrace, boundary: usize, feature: MatchFeature) -> Result<&Matrix> {
    let found = match feature {
        MatchFeature::Inputs => trace.inputs.get(boundary),
        MatchFeature::PreActivations => boundary.checked_sub(1).and_then(|j| trace.pre_activations.get(j)),
    };
    found.ok_or_else(|| Error::invalid(format!("trace has no {feature:?} features for boundary {boundary}")))
}

/// `sum_t x[a, t] * y[c, t]` for every pair of rows, in f64.
fn cross_products(x: &Matrix, y: &Matrix) -> DMatrix<f64> {
    let to64 = |m: &Matrix| DMatrix::from_row_slice(m.rows(), m.cols(), &m.data().iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
    let (x, y) = (to64(x), to64(y));
    &x * y.transpose()
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&u, &v)| {
            let d = f64::from(u) - f64::from(v);
            d * d
        })
        .sum()
}

/// For every hidden boundary, the permutation minimizing
/// `sum_a ||Z_A[a] - Z_B[sigma(a)]||^2`. Expanding the square leaves only the
/// cross term `<Z_A[a], Z_B[sigma(a)]>` dependent on `sigma`, so each
/// boundary is one maximum-profit assignment over cross inner products.
pub fn activation_match(trace_a: &ActivationTrace, trace_b: &ActivationTrace, feature: MatchFeature) -> Result<PermutationSet> {
    if trace_a.inputs.is_empty() || trace_b.inputs.is_empty() {
        return Err(Error::invalid("activation matching needs traces captured with boundary inputs"));
    }
    let boundaries = trace_a.inputs.len();
    let boundaries_b = trace_b.inputs.len();
    if boundaries != boundaries_b {
        return Err(Error::Architecture(format!("traces cover {boundaries} and {boundaries_b} boundaries")));
    }
    if trace_a.samples != trace_b.samples {
        return Err(Error::shape("activation traces", format!("{} samples", trace_a.samples), trace_b.samples));
    }
    let last = boundaries - 1;
    let matched: Vec<BoundaryMatch> = (0..boundaries)
        .into_par_iter()
        .map(|b| -> Result<BoundaryMatch> {
            if b == 0 || b == last {
                let width = trace_a.inputs[b].rows();
                return Ok(BoundaryMatch {
                    sigma: (0..width).collect(),
                    score: vec![0.0; width],
                });
            }
            let za = boundary_features(trace_a, b, feature)?;
            let zb = boundary_features(trace_b, b, feature)?;
            if za.shape() != zb.shape() {
                return Err(Error::shape(
                    format!("features at boundary {b}"),
                    format!("{}x{}", za.rows(), za.cols()),
                    format!("{}x{}", zb.rows(), zb.cols()),
                ));
            }
            let assignment = solve_lap(&cross_products(za, zb))?;
            let score = assignment
                .sigma
                .iter()
                .enumerate()
                .map(|(a, &s)| squared_distance(za.row(a), zb.row(s)))
                .collect();
            Ok(BoundaryMatch {
                sigma: assignment.sigma,
                score,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PermutationSet {
        format_version: PERM_FORMAT.into(),
        mode: MatchMode::Activation,
        boundaries: matched,
    })
}
