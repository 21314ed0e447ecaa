//! Permuted least squares: refit every fused layer so that it maps the
//! merged-layout features of the original models at its input boundary to
//! the merged-layout features at its output boundary.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{ActivationTrace, Capture, NetworkCheckpoint};
use crate::tensor::Matrix;

use super::construct::MergedCheckpoint;
use super::lstsq::{self, Solver};
use super::plan::{MergePlan, UnitSource};

/// Which features at the output boundary the layer is fitted to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Inputs of the next block, after batch norm and ReLU.
    PostActivation,
    /// Outputs of the linear map itself, before batch norm and ReLU.
    #[default]
    PreActivation,
}

named_enum!(TargetMode {
    PostActivation => "post_activation",
    PreActivation => "pre_activation",
});

/// Which model's features stand in for a shared unit, on the design side and
/// on the target side. Unmerged units always come from their own model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveVariant {
    /// Averaged inputs to averaged targets.
    #[default]
    Pleas,
    /// A's inputs and B's inputs, each to averaged targets.
    SeparateInputsSharedTarget,
    /// A's inputs to A's targets and B's inputs to B's targets.
    SeparateBoth,
    /// Averaged inputs to A's targets and to B's targets.
    SharedInputSeparateTargets,
}

named_enum!(ObjectiveVariant {
    Pleas => "pleas",
    SeparateInputsSharedTarget => "separate_inputs_shared_target",
    SeparateBoth => "separate_both",
    SharedInputSeparateTargets => "shared_input_separate_targets",
});

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    A,
    B,
    Avg,
}

impl ObjectiveVariant {
    /// `(design, target)` sources, stacked along the sample axis.
    fn pairs(self) -> &'static [(Source, Source)] {
        match self {
            ObjectiveVariant::Pleas => &[(Source::Avg, Source::Avg)],
            ObjectiveVariant::SeparateInputsSharedTarget => &[(Source::A, Source::Avg), (Source::B, Source::Avg)],
            ObjectiveVariant::SeparateBoth => &[(Source::A, Source::A), (Source::B, Source::B)],
            ObjectiveVariant::SharedInputSeparateTargets => &[(Source::Avg, Source::A), (Source::Avg, Source::B)],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LsScope {
    /// Refit shared output units; unmerged outputs keep their copied weights.
    #[default]
    MergedRowsOnly,
    AllRows,
}

named_enum!(LsScope {
    MergedRowsOnly => "merged_rows_only",
    AllRows => "all_rows",
});

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MergeOptions {
    pub target_mode: TargetMode,
    pub objective_variant: ObjectiveVariant,
    pub ls_scope: LsScope,
    pub solver: Solver,
    /// Ridge penalty toward the constructed weights; `None` picks
    /// `1e-6 * tr(D D^T) / p` per row group.
    pub ridge: Option<f64>,
}

impl MergeOptions {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if let Some(l) = self.ridge {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("ridge penalty must be finite and >= 0, got {l}")));
            }
        }
        Ok(())
    }
}

/// Per-layer outcome. Residuals are summed squared errors over the refit
/// rows, evaluated with the weights as stored (f32).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFit {
    pub layer: usize,
    pub rows_refit: usize,
    /// Rows where the stored fit was no better than construction and the
    /// constructed row was kept.
    pub rows_kept: usize,
    pub lambda: Vec<f64>,
    /// Ridge objective of the constructed and the solved weights, in f64.
    pub objective_constructed: f64,
    pub objective_fitted: f64,
    pub residual_constructed: f64,
    pub residual_fitted: f64,
    /// Whole-layer residual against averaged features on both sides.
    pub ensemble_residual_constructed: f64,
    pub ensemble_residual_fitted: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefitReport {
    pub layers: Vec<LayerFit>,
}

/// Features of the merged boundary for every sample, `units x n`.
fn layout_features(units: &[UnitSource], za: &Matrix, zb: &Matrix, source: Source) -> DMatrix<f64> {
    let n = za.cols();
    let mut out = DMatrix::<f64>::zeros(units.len(), n);
    for (r, &u) in units.iter().enumerate() {
        let (ra, rb) = (u.a().map(|a| za.row(a)), u.b().map(|b| zb.row(b)));
        let row: Vec<f64> = match (u, source, ra, rb) {
            (UnitSource::Shared { .. }, Source::Avg, Some(x), Some(y)) => {
                x.iter().zip(y).map(|(&p, &q)| 0.5 * (f64::from(p) + f64::from(q))).collect()
            }
            (UnitSource::Shared { .. }, Source::B, _, Some(y)) | (UnitSource::BOnly(_), _, _, Some(y)) => {
                y.iter().map(|&v| f64::from(v)).collect()
            }
            (_, _, Some(x), _) => x.iter().map(|&v| f64::from(v)).collect(),
            _ => unreachable!("every unit reads at least one model"),
        };
        out.row_mut(r).copy_from_slice(&row);
    }
    out
}

fn stacked(pieces: Vec<DMatrix<f64>>) -> DMatrix<f64> {
    let rows = pieces[0].nrows();
    let cols = pieces.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::<f64>::zeros(rows, cols);
    let mut at = 0;
    for p in pieces {
        out.columns_mut(at, p.ncols()).copy_from(&p);
        at += p.ncols();
    }
    out
}

/// Selected rows of `features` with a constant row appended.
fn with_bias(features: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let n = features.ncols();
    let mut out = DMatrix::<f64>::from_element(rows.len() + 1, n, 1.0);
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from(&features.row(r));
    }
    out
}

struct RowGroup {
    rows: Vec<usize>,
    cols: Vec<usize>,
}

/// Output rows that share a structural support, with that support.
fn row_groups(d_in: usize, k_in: usize, d_out: usize, k_out: usize, scope: LsScope) -> Vec<RowGroup> {
    let in_width = 2 * d_in - k_in;
    let mut groups = vec![RowGroup {
        rows: (0..k_out).collect(),
        cols: (0..in_width).collect(),
    }];
    if scope == LsScope::AllRows {
        groups.push(RowGroup {
            rows: (k_out..d_out).collect(),
            cols: (0..d_in).collect(),
        });
        groups.push(RowGroup {
            rows: (d_out..2 * d_out - k_out).collect(),
            cols: (0..k_in).chain(d_in..in_width).collect(),
        });
    }
    groups.retain(|g| !g.rows.is_empty());
    groups
}

struct LayerData<'a> {
    z_in: [&'a Matrix; 2],
    target: [&'a Matrix; 2],
}

fn layer_data<'a>(trace_a: &'a ActivationTrace, trace_b: &'a ActivationTrace, layer: usize, mode: TargetMode) -> Result<LayerData<'a>> {
    let pick = |t: &'a ActivationTrace| -> Result<(&'a Matrix, &'a Matrix)> {
        let z = t.inputs.get(layer).ok_or_else(|| Error::invalid(format!("trace lacks the input of layer {layer}")))?;
        let y = match mode {
            TargetMode::PostActivation => t.inputs.get(layer + 1),
            TargetMode::PreActivation => t.pre_activations.get(layer),
        }
        .ok_or_else(|| Error::invalid(format!("trace lacks {mode} targets of layer {layer}")))?;
        Ok((z, y))
    };
    let (za, ya) = pick(trace_a)?;
    let (zb, yb) = pick(trace_b)?;
    Ok(LayerData {
        z_in: [za, zb],
        target: [ya, yb],
    })
}

fn fit_layer(
    layer: usize,
    net: &NetworkCheckpoint,
    plan: &MergePlan,
    data: LayerData<'_>,
    opts: &MergeOptions,
) -> Result<(Matrix, Vec<f32>, LayerFit)> {
    let (bi, bo) = (&plan.boundaries[layer], &plan.boundaries[layer + 1]);
    let (ui, uo) = (bi.units(), bo.units());
    let [za, zb] = data.z_in;
    let [ya, yb] = data.target;
    let pairs = opts.objective_variant.pairs();
    let design = stacked(pairs.iter().map(|&(s, _)| layout_features(&ui, za, zb, s)).collect());
    let targets = stacked(pairs.iter().map(|&(_, s)| layout_features(&uo, ya, yb, s)).collect());

    let block = &net.blocks()[layer];
    let mut weight = block.linear.weight.clone();
    let mut bias = block.linear.bias.clone();
    let mut fit = LayerFit {
        layer,
        rows_refit: 0,
        rows_kept: 0,
        lambda: Vec::new(),
        objective_constructed: 0.0,
        objective_fitted: 0.0,
        residual_constructed: 0.0,
        residual_fitted: 0.0,
        ensemble_residual_constructed: 0.0,
        ensemble_residual_fitted: 0.0,
    };
    for group in row_groups(bi.width(), bi.merged_count(), bo.width(), bo.merged_count(), opts.ls_scope) {
        let x = with_bias(&design, &group.cols);
        let y = DMatrix::from_fn(group.rows.len(), targets.ncols(), |i, t| targets[(group.rows[i], t)]);
        let anchor = DMatrix::from_fn(group.rows.len(), group.cols.len() + 1, |i, c| {
            let r = group.rows[i];
            f64::from(if c < group.cols.len() { weight.get(r, group.cols[c]) } else { bias[r] })
        });
        let solved = lstsq::solve(&x, &y, &anchor, opts.ridge, opts.solver)?;
        fit.lambda.push(solved.lambda);
        fit.objective_constructed += lstsq::residual(&x, &y, &anchor);
        fit.objective_fitted += lstsq::objective(&x, &y, &solved.theta, &anchor, solved.lambda);
        let stored = solved.theta.map(|v| f64::from(v as f32));
        for (i, &r) in group.rows.iter().enumerate() {
            let before = lstsq::residual(&x, &y.rows(i, 1).into_owned(), &anchor.rows(i, 1).into_owned());
            let after = lstsq::residual(&x, &y.rows(i, 1).into_owned(), &stored.rows(i, 1).into_owned());
            fit.rows_refit += 1;
            fit.residual_constructed += before;
            if after < before {
                fit.residual_fitted += after;
                for (c, &col) in group.cols.iter().enumerate() {
                    weight.set(r, col, stored[(i, c)] as f32);
                }
                bias[r] = stored[(i, group.cols.len())] as f32;
            } else {
                fit.rows_kept += 1;
                fit.residual_fitted += before;
            }
        }
    }

    let all_in: Vec<usize> = (0..ui.len()).collect();
    let avg_design = with_bias(&layout_features(&ui, za, zb, Source::Avg), &all_in);
    let avg_targets = layout_features(&uo, ya, yb, Source::Avg);
    let augmented = |w: &Matrix, b: &[f32]| {
        DMatrix::from_fn(w.rows(), w.cols() + 1, |r, c| f64::from(if c < w.cols() { w.get(r, c) } else { b[r] }))
    };
    fit.ensemble_residual_constructed =
        lstsq::residual(&avg_design, &avg_targets, &augmented(&block.linear.weight, &block.linear.bias));
    fit.ensemble_residual_fitted = lstsq::residual(&avg_design, &avg_targets, &augmented(&weight, &bias));
    if !weight.is_finite() || bias.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("refit of {}", block.name)));
    }
    Ok((weight, bias, fit))
}

/// Refits `merged` against traces of both source models recorded on the same
/// inputs with [`Capture::Both`].
pub fn refit_with_traces(
    merged: &MergedCheckpoint,
    plan: &MergePlan,
    trace_a: &ActivationTrace,
    trace_b: &ActivationTrace,
    opts: &MergeOptions,
) -> Result<(MergedCheckpoint, RefitReport)> {
    opts.validate()?;
    plan.validate()?;
    if merged.net.widths() != plan.merged_widths() {
        return Err(Error::shape(
            "merged network widths",
            format!("{:?}", plan.merged_widths()),
            format!("{:?}", merged.net.widths()),
        ));
    }
    if trace_a.samples != trace_b.samples || trace_a.samples == 0 {
        return Err(Error::shape("trace samples", trace_a.samples, trace_b.samples));
    }
    let widths = plan.widths();
    for t in [trace_a, trace_b] {
        let traced: Vec<usize> = t.inputs.iter().map(Matrix::rows).collect();
        if traced != widths {
            return Err(Error::shape("traced widths", format!("{widths:?}"), format!("{traced:?}")));
        }
    }
    let layers: Vec<(Matrix, Vec<f32>, LayerFit)> = (0..merged.net.depth())
        .into_par_iter()
        .map(|j| fit_layer(j, &merged.net, plan, layer_data(trace_a, trace_b, j, opts.target_mode)?, opts))
        .collect::<Result<_>>()?;
    let mut blocks = merged.net.blocks().to_vec();
    let mut report = RefitReport::default();
    for (block, (weight, bias, fit)) in blocks.iter_mut().zip(layers) {
        block.linear.weight = weight;
        block.linear.bias = bias;
        report.layers.push(fit);
    }
    let mut out = merged.clone();
    out.net = NetworkCheckpoint::new(blocks)?;
    out.meta.lambda = opts.ridge;
    out.meta.solver = Some(opts.solver.describe());
    out.meta.target_mode = Some(opts.target_mode.to_string());
    out.meta.objective_variant = Some(opts.objective_variant.to_string());
    out.meta.ls_scope = Some(opts.ls_scope.to_string());
    Ok((out, report))
}

/// Runs both models on `data_a` and `data_b` together and refits.
#[allow(clippy::too_many_arguments)]
pub fn least_squares_refit(
    merged: &MergedCheckpoint,
    a: &NetworkCheckpoint,
    b: &NetworkCheckpoint,
    plan: &MergePlan,
    data_a: &Dataset,
    data_b: &Dataset,
    opts: &MergeOptions,
) -> Result<(MergedCheckpoint, RefitReport)> {
    let inputs = Matrix::hcat(&[&data_a.inputs, &data_b.inputs])?;
    let (_, ta) = a.forward(&inputs, Capture::Both)?;
    let (_, tb) = b.forward(&inputs, Capture::Both)?;
    refit_with_traces(merged, plan, &ta.expect("captured"), &tb.expect("captured"), opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for v in ObjectiveVariant::ALL {
            assert_eq!(v.as_str().parse::<ObjectiveVariant>().unwrap(), *v);
        }
        assert_eq!("pre-activation".parse::<TargetMode>().unwrap(), TargetMode::PreActivation);
        assert!("sideways".parse::<LsScope>().is_err());
    }

    #[test]
    fn groups_follow_structural_support() {
        let g = row_groups(4, 2, 5, 3, LsScope::AllRows);
        assert_eq!(g[0].rows, vec![0, 1, 2]);
        assert_eq!(g[0].cols, (0..6).collect::<Vec<_>>());
        assert_eq!(g[1].rows, vec![3, 4]);
        assert_eq!(g[1].cols, vec![0, 1, 2, 3]);
        assert_eq!(g[2].rows, vec![5, 6]);
        assert_eq!(g[2].cols, vec![0, 1, 4, 5]);
        assert_eq!(row_groups(4, 4, 5, 5, LsScope::AllRows).len(), 1);
        assert_eq!(row_groups(4, 2, 5, 0, LsScope::MergedRowsOnly).len(), 0);
    }
}
