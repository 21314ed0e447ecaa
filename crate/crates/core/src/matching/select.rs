use crate::error::{Error, Result};
use crate::merging::{BoundaryPlan, MergePlan};

use super::{MatchMode, PermutationSet};

/// `round(r * d)` with halves rounded up.
pub fn merged_count(ratio: f64, width: usize) -> usize {
    // The epsilon keeps products like 0.3 * 5 = 1.4999999999999998 on the
    // intended side of the half.
    ((ratio * width as f64 + 0.5 + 1e-9).floor() as usize).min(width)
}

/// Picks the `k_b = round(r_b d_b)` best-matched units at every boundary:
/// smallest distances in activation mode, largest profits in weight mode,
/// lowest index first among equal scores. `ratios` has one entry per
/// boundary; the input and output boundaries are always fully merged.
pub fn select_merge_sets(perms: &PermutationSet, ratios: &[f64], mode: MatchMode) -> Result<MergePlan> {
    let n = perms.boundaries.len();
    if ratios.len() != n {
        return Err(Error::shape("merge ratios", n, ratios.len()));
    }
    if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::invalid(format!("merge ratio {r} outside [0,1]")));
    }
    perms.validate()?;
    let boundaries = perms
        .boundaries
        .iter()
        .zip(ratios)
        .enumerate()
        .map(|(b, (m, &r))| {
            let d = m.sigma.len();
            let k = if b == 0 || b + 1 == n { d } else { merged_count(r, d) };
            let mut order: Vec<usize> = (0..d).collect();
            match mode {
                MatchMode::Activation => order.sort_by(|&x, &y| m.score[x].total_cmp(&m.score[y]).then(x.cmp(&y))),
                MatchMode::Weight => order.sort_by(|&x, &y| m.score[y].total_cmp(&m.score[x]).then(x.cmp(&y))),
            }
            let mut merged = order[..k].to_vec();
            let mut unmerged = order[k..].to_vec();
            merged.sort_unstable();
            unmerged.sort_unstable();
            BoundaryPlan {
                sigma: m.sigma.clone(),
                merged,
                unmerged,
            }
        })
        .collect();
    MergePlan::new(boundaries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perms(scores: Vec<f64>, mode: MatchMode) -> PermutationSet {
        let mut p = PermutationSet::identity(&[2, scores.len(), 2], mode);
        p.boundaries[1].score = scores;
        p
    }

    #[test]
    fn hand_sorted_selection() {
        let p = perms(vec![0.1, 0.5, 0.2, 0.9], MatchMode::Activation);
        let plan = select_merge_sets(&p, &[0.0, 0.5, 0.0], MatchMode::Activation).unwrap();
        assert_eq!(plan.boundaries[1].merged, vec![0, 2]);
        assert_eq!(plan.boundaries[1].unmerged, vec![1, 3]);
        assert_eq!(plan.boundaries[0].merged, vec![0, 1]);
        assert_eq!(plan.boundaries[2].merged, vec![0, 1]);

        let p = perms(vec![0.1, 0.5, 0.2, 0.9], MatchMode::Weight);
        let plan = select_merge_sets(&p, &[1.0, 0.5, 1.0], MatchMode::Weight).unwrap();
        assert_eq!(plan.boundaries[1].merged, vec![1, 3]);
    }

    #[test]
    fn ties_prefer_low_indices() {
        let p = perms(vec![1.0, 1.0, 1.0, 0.5], MatchMode::Activation);
        let plan = select_merge_sets(&p, &[1.0, 0.5, 1.0], MatchMode::Activation).unwrap();
        assert_eq!(plan.boundaries[1].merged, vec![0, 3]);
    }

    #[test]
    fn rounding_and_validation() {
        assert_eq!(merged_count(0.5, 5), 3);
        assert_eq!(merged_count(0.3, 5), 2);
        assert_eq!(merged_count(0.4, 5), 2);
        assert_eq!(merged_count(0.1, 5), 1);
        assert_eq!(merged_count(1.0, 7), 7);
        assert_eq!(merged_count(0.0, 7), 0);
        let p = perms(vec![0.0; 4], MatchMode::Activation);
        assert!(select_merge_sets(&p, &[1.0, 1.5, 1.0], MatchMode::Activation).is_err());
        assert!(select_merge_sets(&p, &[1.0, -0.1, 1.0], MatchMode::Activation).is_err());
        assert!(select_merge_sets(&p, &[1.0, 0.5], MatchMode::Activation).is_err());
    }
}
