//! End-to-end merges: matching, ratio selection, construction, refitting and
//! batch-norm reset for each supported method.

use serde::{Deserialize, Serialize};

use crate::budget::{
    measure_loo_accuracies, solve_budget, BudgetPlan, BudgetSurrogate, Orientation, SurrogateOptions, DEFAULT_GRID,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matching::{activation_match, select_merge_sets, weight_match, MatchFeature, MatchMode, PermutationSet};
use crate::merging::{
    build_merged_weights, merge_regmean, merge_simple_average, refit_with_traces, MergeOptions, MergePlan,
    MergedCheckpoint, RefitReport,
};
use crate::network::{ActivationTrace, Capture, NetworkCheckpoint};
use crate::rng::seeded_rng;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Activation matching, partial merge, least-squares refit.
    Pleas,
    /// Weight matching, partial merge, least-squares refit.
    PleasWeight,
    /// Weight matching and partial merge without refitting.
    PermuteAvg,
    SimpleAvg,
    Regmean,
    Ensemble,
}

named_enum!(Method {
    Pleas => "pleas",
    PleasWeight => "pleas_weight",
    PermuteAvg => "permute_avg",
    SimpleAvg => "simple_avg",
    Regmean => "regmean",
    Ensemble => "ensemble",
});

impl Method {
    /// Whether the method can trade size for accuracy.
    pub fn budget_capable(self) -> bool {
        matches!(self, Method::Pleas | Method::PleasWeight | Method::PermuteAvg)
    }

    pub fn fixed_footprint(self) -> Option<f64> {
        match self {
            Method::SimpleAvg | Method::Regmean => Some(1.0),
            Method::Ensemble => Some(2.0),
            _ => None,
        }
    }

    fn match_mode(self) -> MatchMode {
        match self {
            Method::Pleas => MatchMode::Activation,
            _ => MatchMode::Weight,
        }
    }

    fn refits(self) -> bool {
        matches!(self, Method::Pleas | Method::PleasWeight)
    }
}

/// How large the merged network may be.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sizing {
    /// Interior merge ratios, one per hidden boundary.
    Ratios(Vec<f64>),
    /// Ratios chosen by the budget solver.
    Budget { budget: f64, q: usize, orientation: Orientation },
}

impl Sizing {
    pub fn budget(budget: f64) -> Self {
        Sizing::Budget {
            budget,
            q: DEFAULT_GRID,
            orientation: Orientation::default(),
        }
    }
}

/// Data that drives matching, refitting, the surrogate and the batch-norm
/// reset.
#[derive(Clone, Copy, Debug)]
pub enum MergeData<'a> {
    /// The two models' own training sets.
    Task { a: &'a Dataset, b: &'a Dataset },
    /// A single stand-in dataset replacing both.
    Proxy(&'a Dataset),
}

impl MergeData<'_> {
    pub fn is_proxy(&self) -> bool {
        matches!(self, MergeData::Proxy(_))
    }

    pub fn tag(&self) -> String {
        match self {
            MergeData::Task { .. } => "task".into(),
            MergeData::Proxy(d) => format!("proxy:{}", d.task_id),
        }
    }

    /// All samples, A's first.
    pub fn combined(&self) -> Result<Dataset> {
        match *self {
            MergeData::Task { a, b } => Dataset::concat(&[a, b], "combined"),
            MergeData::Proxy(d) => Ok(d.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub method: Method,
    pub sizing: Sizing,
    pub options: MergeOptions,
    pub match_feature: MatchFeatureName,
    pub seed: u64,
    pub bn_batches: usize,
    pub bn_batch_size: usize,
    /// Refit every leave-one-out configuration before scoring it.
    pub surrogate_refit: bool,
}

impl PipelineConfig {
    pub fn new(method: Method, sizing: Sizing) -> Self {
        PipelineConfig {
            method,
            sizing,
            options: MergeOptions::default(),
            match_feature: MatchFeatureName::Inputs,
            seed: 0,
            bn_batches: 100,
            bn_batch_size: 32,
            surrogate_refit: false,
        }
    }
}

/// Serializable mirror of [`MatchFeature`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchFeatureName {
    #[default]
    Inputs,
    PreActivations,
}

named_enum!(MatchFeatureName {
    Inputs => "inputs",
    PreActivations => "pre_activations",
});

impl From<MatchFeatureName> for MatchFeature {
    fn from(f: MatchFeatureName) -> Self {
        match f {
            MatchFeatureName::Inputs => MatchFeature::Inputs,
            MatchFeatureName::PreActivations => MatchFeature::PreActivations,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MergeOutcome {
    /// Merged network, batch norm already reset.
    pub merged: MergedCheckpoint,
    pub plan: Option<MergePlan>,
    pub budget: Option<BudgetPlan>,
    pub refit: Option<RefitReport>,
}

impl MergeOutcome {
    pub fn footprint(&self) -> f64 {
        self.merged.meta.footprint
    }
}

fn traces(a: &NetworkCheckpoint, b: &NetworkCheckpoint, inputs: &Matrix) -> Result<(ActivationTrace, ActivationTrace)> {
    let (_, ta) = a.forward(inputs, Capture::Both)?;
    let (_, tb) = b.forward(inputs, Capture::Both)?;
    Ok((ta.expect("captured"), tb.expect("captured")))
}

/// Inputs for the batch-norm reset: the merge data in a seeded order, so a
/// reset that only reads a prefix still sees both sources.
fn reset_inputs(data: &Dataset, seed: u64) -> Matrix {
    let order = seeded_rng(seed).fork(11).permutation(data.len());
    data.inputs.select_cols(&order)
}

/// The permutations a method would compute for `a` and `b` on `data`.
pub fn match_models(
    a: &NetworkCheckpoint,
    b: &NetworkCheckpoint,
    method: Method,
    data: MergeData<'_>,
    feature: MatchFeature,
    seed: u64,
) -> Result<PermutationSet> {
    match method.match_mode() {
        MatchMode::Activation => {
            let (ta, tb) = traces(a, b, &data.combined()?.inputs)?;
            activation_match(&ta, &tb, feature)
        }
        MatchMode::Weight => Ok(weight_match(a, b, seed)?.perms),
    }
}

/// Runs `cfg.method` end to end. `perms` replaces the method's own matching
/// when given.
pub fn merge_models(
    a: &NetworkCheckpoint,
    b: &NetworkCheckpoint,
    data: MergeData<'_>,
    cfg: &PipelineConfig,
    perms: Option<&PermutationSet>,
) -> Result<MergeOutcome> {
    if !a.same_architecture(b) {
        return Err(Error::Architecture(format!("widths {:?} vs {:?}", a.widths(), b.widths())));
    }
    cfg.options.validate()?;
    let combined = data.combined()?;
    let tag = if data.is_proxy() {
        format!("{}_free", cfg.method)
    } else {
        cfg.method.to_string()
    };
    let widths = a.widths();
    let interior = widths.len() - 2;

    let mut plan = None;
    let mut budget = None;
    let mut refit = None;
    let mut merged = match cfg.method {
        Method::SimpleAvg => merge_simple_average(a, b)?,
        Method::Regmean => match data {
            MergeData::Task { a: da, b: db } => merge_regmean(a, b, da, db, cfg.options.ridge)?,
            MergeData::Proxy(p) => merge_regmean(a, b, p, p, cfg.options.ridge)?,
        },
        Method::Ensemble => {
            let identity = PermutationSet::identity(&widths, MatchMode::Weight);
            let p = select_merge_sets(&identity, &vec![0.0; widths.len()], MatchMode::Weight)?;
            let mut m = build_merged_weights(a, b, &identity, &p)?;
            m.perms = None;
            m.meta.perms_hash = None;
            m
        }
        Method::Pleas | Method::PleasWeight | Method::PermuteAvg => {
            let needs_traces = cfg.method.refits() || (perms.is_none() && cfg.method.match_mode() == MatchMode::Activation);
            let tr = if needs_traces {
                Some(traces(a, b, &combined.inputs)?)
            } else {
                None
            };
            let perms = match perms {
                Some(p) => {
                    p.validate()?;
                    if p.widths() != widths {
                        return Err(Error::shape("permutation widths", format!("{widths:?}"), format!("{:?}", p.widths())));
                    }
                    p.clone()
                }
                None => match (cfg.method.match_mode(), &tr) {
                    (MatchMode::Activation, Some((ta, tb))) => activation_match(ta, tb, cfg.match_feature.into())?,
                    _ => weight_match(a, b, cfg.seed)?.perms,
                },
            };
            let ratios = match &cfg.sizing {
                Sizing::Ratios(r) => {
                    if r.len() != interior {
                        return Err(Error::shape("interior merge ratios", interior, r.len()));
                    }
                    r.clone()
                }
                Sizing::Budget { budget: target, q, orientation } => {
                    if !(1.0..=2.0).contains(target) {
                        return Err(Error::invalid(format!("budget must be in [1,2], got {target}")));
                    }
                    let opts = SurrogateOptions {
                        refit: cfg.surrogate_refit.then_some(cfg.options),
                        bn_batch_size: cfg.bn_batch_size,
                        bn_batches: cfg.bn_batches,
                    };
                    let accs = measure_loo_accuracies(a, b, &perms, &combined, &opts)?;
                    let surrogate = BudgetSurrogate::new(accs, *target, *orientation)?;
                    let config = solve_budget(&surrogate, &widths, *target, *q)?;
                    let bp = BudgetPlan::new(surrogate, &widths, &config)?;
                    let r = bp.interior_ratios();
                    budget = Some(bp);
                    r
                }
            };
            let full: Vec<f64> = std::iter::once(1.0).chain(ratios).chain(std::iter::once(1.0)).collect();
            let p = select_merge_sets(&perms, &full, perms.mode)?;
            let mut m = build_merged_weights(a, b, &perms, &p)?;
            if let (true, Some((ta, tb))) = (cfg.method.refits(), &tr) {
                let (fitted, report) = refit_with_traces(&m, &p, ta, tb, &cfg.options)?;
                m = fitted;
                refit = Some(report);
            }
            plan = Some(p);
            m
        }
    };
    merged.net = merged
        .net
        .reset_batchnorm(&reset_inputs(&combined, cfg.seed), cfg.bn_batch_size, cfg.bn_batches)?;
    merged.meta.method = tag;
    merged.meta.data_source = match cfg.method {
        Method::SimpleAvg | Method::Ensemble if !a.has_batchnorm() => "none".into(),
        _ => data.tag(),
    };
    Ok(MergeOutcome {
        merged,
        plan,
        budget,
        refit,
    })
}
