//! Aligning model B's hidden units to model A's.
//!
//! Convention: at boundary `b`, `sigma[b][a]` is the B unit matched to A unit
//! `a`, i.e. the permutation matrix acts as `(P z_B)[a] = z_B[sigma[b][a]]`.
//! Boundaries 0 and `L` are always the identity.

mod activation;
pub mod lap;
mod select;
mod weight;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::is_permutation;

pub use activation::{activation_match, MatchFeature};
pub use lap::{solve_lap, Assignment};
pub use select::{merged_count, select_merge_sets};
pub use weight::{weight_match, weight_match_objective, WeightMatchReport, MAX_SWEEPS};

pub const PERM_FORMAT: &str = "pleas-perm/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Scores are squared feature distances; smaller is better.
    Activation,
    /// Scores are assignment profits; larger is better.
    Weight,
}

named_enum!(MatchMode {
    Activation => "activation",
    Weight => "weight",
});

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMatch {
    pub sigma: Vec<usize>,
    pub score: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationSet {
    pub format_version: String,
    pub mode: MatchMode,
    pub boundaries: Vec<BoundaryMatch>,
}

impl PermutationSet {
    /// Identity alignment with zero scores.
    pub fn identity(widths: &[usize], mode: MatchMode) -> Self {
        PermutationSet {
            format_version: PERM_FORMAT.into(),
            mode,
            boundaries: widths
                .iter()
                .map(|&w| BoundaryMatch {
                    sigma: (0..w).collect(),
                    score: vec![0.0; w],
                })
                .collect(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.boundaries.iter().map(|b| b.sigma.len()).collect()
    }

    pub fn sigma(&self, boundary: usize) -> &[usize] {
        &self.boundaries[boundary].sigma
    }

    pub fn sigmas(&self) -> Vec<Vec<usize>> {
        self.boundaries.iter().map(|b| b.sigma.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != PERM_FORMAT {
            return Err(Error::invalid(format!(
                "permutation set has format {}, expected {PERM_FORMAT}",
                self.format_version
            )));
        }
        let last = self.boundaries.len().saturating_sub(1);
        for (b, m) in self.boundaries.iter().enumerate() {
            let w = m.sigma.len();
            if !is_permutation(&m.sigma, w) {
                return Err(Error::invalid(format!("sigma at boundary {b} is not a bijection")));
            }
            if m.score.len() != w {
                return Err(Error::shape(format!("scores at boundary {b}"), w, m.score.len()));
            }
            if (b == 0 || b == last) && m.sigma.iter().enumerate().any(|(i, &j)| i != j) {
                return Err(Error::invalid(format!("boundary {b} must keep the identity permutation")));
            }
            if m.score.iter().any(|s| !s.is_finite()) {
                return Err(Error::invalid(format!("non-finite score at boundary {b}")));
            }
            if self.mode == MatchMode::Activation && m.score.iter().any(|&s| s < 0.0) {
                return Err(Error::invalid(format!("negative distance score at boundary {b}")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: PermutationSet = serde_json::from_str(text).map_err(|e| Error::invalid(format!("permutation set: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PermutationSet::from_json(&text)
    }

    /// SHA-256 of the serialized set.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("serializable");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_validation() {
        let mut p = PermutationSet::identity(&[2, 3, 2], MatchMode::Activation);
        p.boundaries[1].sigma = vec![2, 0, 1];
        p.boundaries[1].score = vec![0.5, 0.0, 1.5];
        let back = PermutationSet::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
        assert!(p.to_json().unwrap().contains("\"format_version\": \"pleas-perm/1\""));

        let mut bad = p.clone();
        bad.boundaries[0].sigma = vec![1, 0];
        assert!(bad.validate().is_err());
        let mut bad = p.clone();
        bad.boundaries[1].sigma = vec![0, 0, 1];
        assert!(bad.validate().is_err());
        let mut bad = p;
        bad.boundaries[1].score[0] = -1.0;
        assert!(bad.validate().is_err());
    }
}
