//! Building and refitting partially merged networks.
//!
//! Each boundary `b` of the merged network holds `2 d_b - k_b` units:
//! `k_b` shared units (an A unit averaged with its matched B unit), then the
//! `d_b - k_b` unmatched A units, then their B partners. Only the input and
//! output boundaries are forced to be fully shared.

mod baselines;
mod construct;
pub mod lstsq;
mod plan;
mod refit;

pub use baselines::{ensemble_forward, merge_regmean, merge_simple_average, EnsembleMode};
pub use construct::{
    build_merged_weights, in_support, single_model_weights, structural_nonzeros, MergeMeta, MergedCheckpoint,
    MERGE_META_FILE, PERMS_FILE,
};
pub use lstsq::Solver;
pub use plan::{BoundaryPlan, MergePlan, UnitSource};
pub use refit::{
    least_squares_refit, refit_with_traces, LayerFit, LsScope, MergeOptions, ObjectiveVariant, RefitReport, TargetMode,
};
