//! Merging two same-architecture feed-forward networks trained from different
//! initializations into one network of tunable width.
//!
//! The pipeline has three stages:
//!
//! 1. [`matching`]: align model B's hidden units to model A's with
//!    per-boundary permutations (activation or weight matching) and pick
//!    which matched pairs to merge.
//! 2. [`merging`]: build the partially merged network, whose boundary `b`
//!    has `2 d_b - k_b` units, and refit each merged layer by least squares
//!    against the permuted ensemble of the original features.
//! 3. [`budget`]: choose per-boundary merge ratios under a footprint budget
//!    between 1x (one model) and 2x (the ensemble).
//!
//! [`eval`] measures accuracy, runs linear probes, and sweeps the
//! size/accuracy trade-off.

/// String names for option enums: `as_str`, `Display`, and a `FromStr` that
/// also accepts dashes for underscores.
macro_rules! named_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub const ALL: &'static [$ty] = &[$($ty::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl std::str::FromStr for $ty {
            type Err = $crate::Error;

            fn from_str(s: &str) -> $crate::Result<Self> {
                let key = s.replace('-', "_");
                $ty::ALL
                    .iter()
                    .copied()
                    .find(|v| v.as_str() == key)
                    .ok_or_else(|| $crate::Error::Invalid(format!(
                        "unknown {} '{s}' (expected one of: {})",
                        stringify!($ty),
                        $ty::ALL.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(", ")
                    )))
            }
        }
    };
}

pub mod budget;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod matching;
pub mod merging;
pub mod network;
pub mod pipeline;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Matrix;
