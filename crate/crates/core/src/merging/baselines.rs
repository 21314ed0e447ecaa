use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matching::{MatchMode, PermutationSet};
use crate::network::{ActivationTrace, Capture, NetworkCheckpoint};
use crate::tensor::Matrix;

use super::construct::{build_merged_weights, MergedCheckpoint};
use super::lstsq::{self, Solver};
use super::plan::MergePlan;

/// Plain parameter average, `W = (W_A + W_B) / 2`.
pub fn merge_simple_average(a: &NetworkCheckpoint, b: &NetworkCheckpoint) -> Result<MergedCheckpoint> {
    let identity = PermutationSet::identity(&a.widths(), MatchMode::Weight);
    let mut merged = build_merged_weights(a, b, &identity, &MergePlan::full(&identity)?)?;
    merged.meta.method = "simple_avg".into();
    merged.meta.perms_hash = None;
    merged.meta.plan = None;
    merged.perms = None;
    Ok(merged)
}

fn augmented(z: &Matrix) -> DMatrix<f64> {
    let mut out = DMatrix::<f64>::from_element(z.rows() + 1, z.cols(), 1.0);
    for r in 0..z.rows() {
        for (c, &v) in z.row(r).iter().enumerate() {
            out[(r, c)] = f64::from(v);
        }
    }
    out
}

fn as_f64(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |r, c| f64::from(m.get(r, c)))
}

/// Per layer, one weight matrix fitted to both models' own input/output
/// pairs without any alignment: `min ||W Z_A - H_A||^2 + ||W Z_B - H_B||^2`
/// with a ridge toward zero. Batch-norm parameters are averaged.
pub fn merge_regmean(
    a: &NetworkCheckpoint,
    b: &NetworkCheckpoint,
    data_a: &Dataset,
    data_b: &Dataset,
    ridge: Option<f64>,
) -> Result<MergedCheckpoint> {
    let mut merged = merge_simple_average(a, b)?;
    let (_, ta) = a.forward(&data_a.inputs, Capture::Both)?;
    let (_, tb) = b.forward(&data_b.inputs, Capture::Both)?;
    let (ta, tb): (ActivationTrace, ActivationTrace) = (ta.expect("captured"), tb.expect("captured"));
    let fitted: Vec<(Matrix, Vec<f32>)> = (0..a.depth())
        .into_par_iter()
        .map(|j| -> Result<(Matrix, Vec<f32>)> {
            let design = DMatrix::from_columns(
                &augmented(&ta.inputs[j])
                    .column_iter()
                    .chain(augmented(&tb.inputs[j]).column_iter())
                    .map(|c| c.into_owned())
                    .collect::<Vec<_>>(),
            );
            let targets = DMatrix::from_columns(
                &as_f64(&ta.pre_activations[j])
                    .column_iter()
                    .chain(as_f64(&tb.pre_activations[j]).column_iter())
                    .map(|c| c.into_owned())
                    .collect::<Vec<_>>(),
            );
            let anchor = DMatrix::zeros(targets.nrows(), design.nrows());
            let fit = lstsq::solve(&design, &targets, &anchor, ridge, Solver::ClosedForm)?;
            let d_in = design.nrows() - 1;
            let weight = Matrix::from_fn(targets.nrows(), d_in, |r, c| fit.theta[(r, c)] as f32);
            let bias = (0..targets.nrows()).map(|r| fit.theta[(r, d_in)] as f32).collect();
            Ok((weight, bias))
        })
        .collect::<Result<_>>()?;
    let mut blocks = merged.net.blocks().to_vec();
    for (block, (weight, bias)) in blocks.iter_mut().zip(fitted) {
        block.linear.weight = weight;
        block.linear.bias = bias;
    }
    merged.net = NetworkCheckpoint::new(blocks)?;
    merged.meta.method = "regmean".into();
    merged.meta.lambda = ridge;
    merged.meta.solver = Some(Solver::ClosedForm.describe());
    merged.meta.target_mode = Some("pre_activation".into());
    merged.meta.data_source = "task".into();
    Ok(merged)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// `(f_A(x) + f_B(x)) / 2`.
    #[default]
    LogitAverage,
    /// Penultimate features of A stacked over those of B.
    FeatureConcat,
}

pub fn ensemble_forward(a: &NetworkCheckpoint, b: &NetworkCheckpoint, x: &Matrix, mode: EnsembleMode) -> Result<Matrix> {
    if a.widths()[0] != b.widths()[0] {
        return Err(Error::shape("ensemble input width", a.widths()[0], b.widths()[0]));
    }
    match mode {
        EnsembleMode::LogitAverage => a.logits(x)?.zip_map(&b.logits(x)?, |p, q| 0.5 * (p + q)),
        EnsembleMode::FeatureConcat => Matrix::vcat(&[&a.penultimate(x)?, &b.penultimate(x)?]),
    }
}
