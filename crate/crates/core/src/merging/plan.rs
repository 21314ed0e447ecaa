use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::PermutationSet;
use crate::network::is_permutation;

/// Where a merged unit reads its value from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitSource {
    /// A unit `a` averaged with its match `sigma(a)` in B.
    Shared { a: usize, b: usize },
    AOnly(usize),
    BOnly(usize),
}

impl UnitSource {
    pub fn a(self) -> Option<usize> {
        match self {
            UnitSource::Shared { a, .. } | UnitSource::AOnly(a) => Some(a),
            UnitSource::BOnly(_) => None,
        }
    }

    pub fn b(self) -> Option<usize> {
        match self {
            UnitSource::Shared { b, .. } | UnitSource::BOnly(b) => Some(b),
            UnitSource::AOnly(_) => None,
        }
    }
}

/// One boundary of a partial merge. Indices in `merged` and `unmerged` are in
/// A's unit space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPlan {
    pub sigma: Vec<usize>,
    pub merged: Vec<usize>,
    pub unmerged: Vec<usize>,
}

impl BoundaryPlan {
    pub fn width(&self) -> usize {
        self.sigma.len()
    }

    pub fn merged_count(&self) -> usize {
        self.merged.len()
    }

    pub fn ratio(&self) -> f64 {
        self.merged.len() as f64 / self.width() as f64
    }

    /// `2d - k`.
    pub fn merged_width(&self) -> usize {
        2 * self.width() - self.merged.len()
    }

    /// Layout of the merged boundary: shared units in ascending A order, then
    /// A-only units, then their B partners in the same order.
    pub fn units(&self) -> Vec<UnitSource> {
        let shared = self.merged.iter().map(|&a| UnitSource::Shared { a, b: self.sigma[a] });
        let a_only = self.unmerged.iter().map(|&a| UnitSource::AOnly(a));
        let b_only = self.unmerged.iter().map(|&a| UnitSource::BOnly(self.sigma[a]));
        shared.chain(a_only).chain(b_only).collect()
    }

    fn validate(&self, boundary: usize) -> Result<()> {
        let d = self.width();
        if !is_permutation(&self.sigma, d) {
            return Err(Error::invalid(format!("plan sigma at boundary {boundary} is not a bijection")));
        }
        let mut seen = vec![false; d];
        let ascending = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !ascending(&self.merged) || !ascending(&self.unmerged) {
            return Err(Error::invalid(format!("plan sets at boundary {boundary} must be strictly ascending")));
        }
        for &u in self.merged.iter().chain(&self.unmerged) {
            if u >= d || std::mem::replace(&mut seen[u], true) {
                return Err(Error::invalid(format!("plan sets at boundary {boundary} do not partition {d} units")));
            }
        }
        if seen.contains(&false) {
            return Err(Error::invalid(format!("plan sets at boundary {boundary} do not cover {d} units")));
        }
        Ok(())
    }
}

/// Per-boundary merged sets and pairings for a partial merge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergePlan {
    pub boundaries: Vec<BoundaryPlan>,
}

impl MergePlan {
    pub fn new(boundaries: Vec<BoundaryPlan>) -> Result<Self> {
        let plan = MergePlan { boundaries };
        plan.validate()?;
        Ok(plan)
    }

    /// Every unit merged with its match.
    pub fn full(perms: &PermutationSet) -> Result<Self> {
        MergePlan::new(
            perms
                .boundaries
                .iter()
                .map(|m| BoundaryPlan {
                    sigma: m.sigma.clone(),
                    merged: (0..m.sigma.len()).collect(),
                    unmerged: Vec::new(),
                })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.boundaries.len() < 2 {
            return Err(Error::invalid("a merge plan needs at least two boundaries"));
        }
        let last = self.boundaries.len() - 1;
        for (b, p) in self.boundaries.iter().enumerate() {
            p.validate(b)?;
            if (b == 0 || b == last) && !p.unmerged.is_empty() {
                return Err(Error::invalid(format!("boundary {b} must be fully merged")));
            }
            if (b == 0 || b == last) && p.sigma.iter().enumerate().any(|(i, &j)| i != j) {
                return Err(Error::invalid(format!("boundary {b} must keep the identity permutation")));
            }
        }
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        self.boundaries.iter().map(BoundaryPlan::width).collect()
    }

    pub fn merged_widths(&self) -> Vec<usize> {
        self.boundaries.iter().map(BoundaryPlan::merged_width).collect()
    }

    pub fn merged_counts(&self) -> Vec<usize> {
        self.boundaries.iter().map(BoundaryPlan::merged_count).collect()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.boundaries.iter().map(BoundaryPlan::ratio).collect()
    }

    /// Checks that the plan pairs units exactly as `perms` does.
    pub fn check_against(&self, perms: &PermutationSet) -> Result<()> {
        if perms.boundaries.len() != self.boundaries.len() {
            return Err(Error::shape("merge plan boundaries", perms.boundaries.len(), self.boundaries.len()));
        }
        for (b, (p, m)) in self.boundaries.iter().zip(&perms.boundaries).enumerate() {
            if p.sigma != m.sigma {
                return Err(Error::invalid(format!("merge plan and permutations disagree at boundary {b}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_orders_blocks() {
        let p = BoundaryPlan {
            sigma: vec![2, 0, 3, 1],
            merged: vec![1, 3],
            unmerged: vec![0, 2],
        };
        assert_eq!(p.merged_width(), 6);
        assert_eq!(
            p.units(),
            vec![
                UnitSource::Shared { a: 1, b: 0 },
                UnitSource::Shared { a: 3, b: 1 },
                UnitSource::AOnly(0),
                UnitSource::AOnly(2),
                UnitSource::BOnly(2),
                UnitSource::BOnly(3),
            ]
        );
    }

    #[test]
    fn rejects_bad_partitions() {
        let end = |d: usize| BoundaryPlan {
            sigma: (0..d).collect(),
            merged: (0..d).collect(),
            unmerged: vec![],
        };
        let mid = |merged: Vec<usize>, unmerged: Vec<usize>| BoundaryPlan {
            sigma: vec![0, 1, 2],
            merged,
            unmerged,
        };
        assert!(MergePlan::new(vec![end(2), mid(vec![0], vec![1, 2]), end(2)]).is_ok());
        assert!(MergePlan::new(vec![end(2), mid(vec![0], vec![1]), end(2)]).is_err());
        assert!(MergePlan::new(vec![end(2), mid(vec![0, 1], vec![1, 2]), end(2)]).is_err());
        assert!(MergePlan::new(vec![end(2), mid(vec![1, 0], vec![2]), end(2)]).is_err());
        let mut open_end = end(2);
        open_end.merged = vec![0];
        open_end.unmerged = vec![1];
        assert!(MergePlan::new(vec![open_end, mid(vec![0, 1, 2], vec![]), end(2)]).is_err());
    }
}
