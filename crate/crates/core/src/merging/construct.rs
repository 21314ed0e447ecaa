use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::PermutationSet;
use crate::network::{BatchNorm, Block, Linear, NetworkCheckpoint};
use crate::tensor::Matrix;

use super::plan::{MergePlan, UnitSource};

pub const MERGE_META_FILE: &str = "merge_meta.json";
pub const PERMS_FILE: &str = "perms.json";

/// Reproducibility record written next to a merged checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeMeta {
    pub method: String,
    /// Content hashes of checkpoints A and B.
    pub source_hashes: [String; 2],
    pub perms_hash: Option<String>,
    /// Original boundary widths `d_b`.
    pub widths: Vec<usize>,
    /// Per-boundary `k_b / d_b`.
    pub ratios: Vec<f64>,
    pub merged_counts: Vec<usize>,
    pub footprint: f64,
    pub plan: Option<MergePlan>,
    pub lambda: Option<f64>,
    pub solver: Option<String>,
    pub target_mode: Option<String>,
    pub objective_variant: Option<String>,
    pub ls_scope: Option<String>,
    /// Which data fed matching and refitting (`task`, `proxy:<id>`, or `none`).
    pub data_source: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergedCheckpoint {
    pub net: NetworkCheckpoint,
    pub meta: MergeMeta,
    pub perms: Option<PermutationSet>,
}

impl MergedCheckpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.net.save(dir)?;
        let meta = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::invalid(e.to_string()))?;
        let path = dir.join(MERGE_META_FILE);
        std::fs::write(&path, meta + "\n").map_err(|e| Error::io(&path, e))?;
        if let Some(perms) = &self.perms {
            perms.save(&dir.join(PERMS_FILE))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let net = NetworkCheckpoint::load(dir)?;
        let path = dir.join(MERGE_META_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let perms_path = dir.join(PERMS_FILE);
        let perms = if perms_path.exists() {
            Some(PermutationSet::load(&perms_path)?)
        } else {
            None
        };
        Ok(MergedCheckpoint { net, meta, perms })
    }
}

/// True unless the entry would connect A-only and B-only units.
pub fn in_support(out: UnitSource, input: UnitSource) -> bool {
    !matches!(
        (out, input),
        (UnitSource::AOnly(_), UnitSource::BOnly(_)) | (UnitSource::BOnly(_), UnitSource::AOnly(_))
    )
}

/// `sum_j k_{j+1}(2 d_j - k_j) + 2 (d_{j+1} - k_{j+1}) d_j`: the entries of the
/// fused weights that may be nonzero.
pub fn structural_nonzeros(widths: &[usize], merged_counts: &[usize]) -> u64 {
    (0..widths.len().saturating_sub(1))
        .map(|j| {
            let (d_in, d_out) = (widths[j] as u64, widths[j + 1] as u64);
            let (k_in, k_out) = (merged_counts[j] as u64, merged_counts[j + 1] as u64);
            k_out * (2 * d_in - k_in) + 2 * (d_out - k_out) * d_in
        })
        .sum()
}

/// Parameter count of the unmerged network, `sum_j d_j d_{j+1}`.
pub fn single_model_weights(widths: &[usize]) -> u64 {
    widths.windows(2).map(|w| w[0] as u64 * w[1] as u64).sum()
}

/// Averages a shared unit's two values; copies the value of an unmerged one.
fn fuse(unit: UnitSource, a: &[f32], b: &[f32]) -> f32 {
    match unit {
        UnitSource::Shared { a: ia, b: ib } => 0.5 * (a[ia] + b[ib]),
        UnitSource::AOnly(ia) => a[ia],
        UnitSource::BOnly(ib) => b[ib],
    }
}

pub(crate) fn fuse_vector(units: &[UnitSource], a: &[f32], b: &[f32]) -> Vec<f32> {
    units.iter().map(|&u| fuse(u, a, b)).collect()
}

/// The linear map taking merged-layout inputs to merged-layout outputs that
/// runs both layers on their reconstructed inputs and averages the paired
/// outputs.
pub(crate) fn fuse_weight(out_units: &[UnitSource], in_units: &[UnitSource], wa: &Matrix, wb: &Matrix) -> Matrix {
    Matrix::from_fn(out_units.len(), in_units.len(), |r, c| {
        let (o, i) = (out_units[r], in_units[c]);
        match o {
            UnitSource::Shared { a: oa, b: ob } => {
                let x = i.a().map_or(0.0, |ia| wa.get(oa, ia));
                let y = i.b().map_or(0.0, |ib| wb.get(ob, ib));
                0.5 * (x + y)
            }
            UnitSource::AOnly(oa) => i.a().map_or(0.0, |ia| wa.get(oa, ia)),
            UnitSource::BOnly(ob) => i.b().map_or(0.0, |ib| wb.get(ob, ib)),
        }
    })
}

fn fuse_batchnorm(units: &[UnitSource], a: &BatchNorm, b: &BatchNorm) -> BatchNorm {
    BatchNorm {
        gain: fuse_vector(units, &a.gain, &b.gain),
        shift: fuse_vector(units, &a.shift, &b.shift),
        running_mean: fuse_vector(units, &a.running_mean, &b.running_mean),
        running_var: fuse_vector(units, &a.running_var, &b.running_var),
    }
}

/// Builds the partially merged network of `plan` without looking at data.
pub fn build_merged_weights(
    a: &NetworkCheckpoint,
    b: &NetworkCheckpoint,
    perms: &PermutationSet,
    plan: &MergePlan,
) -> Result<MergedCheckpoint> {
    if !a.same_architecture(b) {
        return Err(Error::Architecture(format!("widths {:?} vs {:?}", a.widths(), b.widths())));
    }
    plan.validate()?;
    plan.check_against(perms)?;
    if plan.widths() != a.widths() {
        return Err(Error::shape("merge plan widths", format!("{:?}", a.widths()), format!("{:?}", plan.widths())));
    }
    let units: Vec<Vec<UnitSource>> = plan.boundaries.iter().map(|p| p.units()).collect();
    let blocks = a
        .blocks()
        .iter()
        .zip(b.blocks())
        .enumerate()
        .map(|(j, (ba, bb))| {
            let (ui, uo) = (&units[j], &units[j + 1]);
            Block {
                name: ba.name.clone(),
                linear: Linear {
                    weight: fuse_weight(uo, ui, &ba.linear.weight, &bb.linear.weight),
                    bias: fuse_vector(uo, &ba.linear.bias, &bb.linear.bias),
                },
                batchnorm: match (&ba.batchnorm, &bb.batchnorm) {
                    (Some(x), Some(y)) => Some(fuse_batchnorm(uo, x, y)),
                    _ => None,
                },
                relu: ba.relu,
            }
        })
        .collect();
    let net = NetworkCheckpoint::new(blocks)?;
    let widths = a.widths();
    let counts = plan.merged_counts();
    let meta = MergeMeta {
        method: "permute_avg".into(),
        source_hashes: [a.content_hash()?, b.content_hash()?],
        perms_hash: Some(perms.content_hash()),
        ratios: plan.ratios(),
        footprint: structural_nonzeros(&widths, &counts) as f64 / single_model_weights(&widths) as f64,
        merged_counts: counts,
        widths,
        plan: Some(plan.clone()),
        lambda: None,
        solver: None,
        target_mode: None,
        objective_variant: None,
        ls_scope: None,
        data_source: "none".into(),
    };
    Ok(MergedCheckpoint {
        net,
        meta,
        perms: Some(perms.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merging::BoundaryPlan;

    #[test]
    fn figure_shape_seven_by_six() {
        // d_in = 4 with k = 2, d_out = 5 with k = 3.
        let ui = BoundaryPlan {
            sigma: vec![0, 1, 2, 3],
            merged: vec![0, 1],
            unmerged: vec![2, 3],
        }
        .units();
        let uo = BoundaryPlan {
            sigma: vec![0, 1, 2, 3, 4],
            merged: vec![0, 1, 2],
            unmerged: vec![3, 4],
        }
        .units();
        let wa = Matrix::from_fn(5, 4, |r, c| (r * 4 + c + 1) as f32);
        let wb = Matrix::from_fn(5, 4, |r, c| (100 + r * 4 + c) as f32);
        let w = fuse_weight(&uo, &ui, &wa, &wb);
        assert_eq!(w.shape(), (7, 6));
        assert_eq!(w.count_nonzero() as u64, structural_nonzeros(&[4, 5], &[2, 3]));
        assert_eq!(w.count_nonzero(), 34);
        // A-only output row reads A-only inputs but never B-only ones.
        assert_eq!(w.get(3, 2), wa.get(3, 2));
        assert_eq!(w.get(3, 4), 0.0);
        assert_eq!(w.get(5, 4), wb.get(3, 2));
        assert_eq!(w.get(5, 2), 0.0);
    }

    #[test]
    fn nonzero_count_formula() {
        assert_eq!(structural_nonzeros(&[4, 5, 3], &[4, 5, 3]), 35);
        assert_eq!(structural_nonzeros(&[4, 5, 3], &[4, 0, 3]), 70);
        assert_eq!(structural_nonzeros(&[4, 5, 3], &[4, 2, 3]), 56);
    }
}
