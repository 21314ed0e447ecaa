//! Choosing per-boundary merge ratios under a size budget.
//!
//! The footprint of a merge is the number of structurally nonzero fused
//! weights relative to one model: 1.0 when every unit is shared, 2.0 when no
//! hidden unit is. Accuracy is approximated by a linear surrogate built from
//! leave-one-out merges, and the ratios maximizing it on a grid are found
//! exactly by dynamic programming along the boundary chain.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::matching::{merged_count, select_merge_sets, PermutationSet};
use crate::merging::{build_merged_weights, refit_with_traces, single_model_weights, structural_nonzeros, MergeOptions};
use crate::network::{Capture, NetworkCheckpoint};

pub const BUDGET_FORMAT: &str = "pleas-budget/1";
/// Slack on the budget comparison.
pub const BUDGET_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_GRID: usize = 10;

/// Per-boundary merged counts: the ends are fully merged, interior boundary
/// `b` keeps `round(r_b d_b)` shared units.
pub fn merged_counts(widths: &[usize], interior_ratios: &[f64]) -> Result<Vec<usize>> {
    let n = widths.len();
    if n < 2 || interior_ratios.len() != n - 2 {
        return Err(Error::shape("interior ratios", n.saturating_sub(2), interior_ratios.len()));
    }
    if let Some(r) = interior_ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::invalid(format!("merge ratio {r} outside [0,1]")));
    }
    Ok((0..n)
        .map(|b| if b == 0 || b == n - 1 { widths[b] } else { merged_count(interior_ratios[b - 1], widths[b]) })
        .collect())
}

/// Relative size of the merged network.
pub fn footprint(widths: &[usize], interior_ratios: &[f64]) -> Result<f64> {
    let counts = merged_counts(widths, interior_ratios)?;
    Ok(structural_nonzeros(widths, &counts) as f64 / single_model_weights(widths) as f64)
}

fn within_budget(nonzeros: u64, single: u64, budget: f64) -> bool {
    nonzeros as f64 / single as f64 <= budget + BUDGET_TOLERANCE
}

/// Grid-aligned interior ratios: boundary `b` has ratio `steps[b - 1] / q`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioConfig {
    pub q: usize,
    pub steps: Vec<usize>,
}

impl RatioConfig {
    pub fn all_merged(interior: usize, q: usize) -> Self {
        RatioConfig { q, steps: vec![q; interior] }
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.steps.iter().map(|&s| s as f64 / self.q as f64).collect()
    }

    /// Ratios for every boundary, ends included.
    pub fn boundary_ratios(&self) -> Vec<f64> {
        std::iter::once(1.0).chain(self.ratios()).chain(std::iter::once(1.0)).collect()
    }
}

/// What a ratio `r_b` multiplies in the surrogate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// `sum_b r_b c_b`, the formula taken literally. With the usual ordering
    /// of leave-one-out accuracies every `c_b >= 0`, so every budget selects
    /// the fully merged model.
    MergedFraction,
    /// `sum_b (1 - r_b) c_b`: `c_b` is the payoff of keeping boundary `b`
    /// unmerged.
    #[default]
    UnmergedFraction,
}

named_enum!(Orientation {
    MergedFraction => "merged_fraction",
    UnmergedFraction => "unmerged_fraction",
});

/// `c = (2 - B)(Acc(K^1) - Acc(K_b^0)) - (1 - B)(Acc(K_b^0) - Acc(K^0))`.
pub fn surrogate_coefficient(acc_ensemble: f64, acc_loo_merged: f64, acc_full: f64, budget: f64) -> f64 {
    (2.0 - budget) * (acc_ensemble - acc_loo_merged) - (1.0 - budget) * (acc_loo_merged - acc_full)
}

/// Accuracies of the leave-one-out configurations; independent of the budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooAccuracies {
    /// Every boundary merged, `K^0`.
    pub acc_full: f64,
    /// No hidden boundary merged, `K^1`.
    pub acc_ensemble: f64,
    /// Only interior boundary `b` merged, `K_b^0`.
    pub acc_loo_merged: Vec<f64>,
    /// Every interior boundary but `b` merged, `K_b^1`. Recorded for
    /// auditing; the surrogate does not use it.
    pub acc_loo_unmerged: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSurrogate {
    pub accuracies: LooAccuracies,
    pub budget: f64,
    pub orientation: Orientation,
    pub coefficients: Vec<f64>,
}

impl BudgetSurrogate {
    pub fn new(accuracies: LooAccuracies, budget: f64, orientation: Orientation) -> Result<Self> {
        let all = [accuracies.acc_full, accuracies.acc_ensemble]
            .into_iter()
            .chain(accuracies.acc_loo_merged.iter().copied())
            .chain(accuracies.acc_loo_unmerged.iter().copied());
        for acc in all {
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::invalid(format!("accuracy {acc} outside [0,1]")));
            }
        }
        let coefficients: Vec<f64> = accuracies
            .acc_loo_merged
            .iter()
            .map(|&loo| surrogate_coefficient(accuracies.acc_ensemble, loo, accuracies.acc_full, budget))
            .collect();
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("non-finite surrogate coefficient at budget {budget}")));
        }
        Ok(BudgetSurrogate {
            accuracies,
            budget,
            orientation,
            coefficients,
        })
    }

    /// Contribution of interior boundary `i` at ratio `r`.
    pub fn term(&self, i: usize, r: f64) -> f64 {
        match self.orientation {
            Orientation::MergedFraction => r * self.coefficients[i],
            Orientation::UnmergedFraction => (1.0 - r) * self.coefficients[i],
        }
    }

    /// Surrogate accuracy of `config`, summed in boundary order.
    pub fn value(&self, config: &RatioConfig) -> f64 {
        config.ratios().iter().enumerate().fold(0.0, |acc, (i, &r)| acc + self.term(i, r))
    }
}

/// One partial solution of the chain DP.
#[derive(Clone, Debug)]
struct Label {
    cost: u64,
    value: f64,
    steps: Vec<usize>,
}

fn better(x: &Label, y: &Label) -> bool {
    x.value > y.value
        || (x.value == y.value && (x.cost < y.cost || (x.cost == y.cost && x.steps < y.steps)))
}

/// Keeps the labels no other label beats on both cost and value; among equal
/// pairs the lexicographically smallest step list survives.
fn pareto(mut labels: Vec<Label>) -> Vec<Label> {
    labels.sort_by(|x, y| {
        x.cost
            .cmp(&y.cost)
            .then(y.value.total_cmp(&x.value))
            .then(x.steps.cmp(&y.steps))
    });
    let mut kept: Vec<Label> = Vec::new();
    for label in labels {
        match kept.last() {
            Some(top) if top.value >= label.value => {}
            _ => kept.push(label),
        }
    }
    kept
}

/// Grid ratios maximizing the surrogate subject to `footprint <= B`. Ties go
/// to the smaller footprint, then the lexicographically smaller steps.
pub fn solve_budget(surrogate: &BudgetSurrogate, widths: &[usize], budget: f64, q: usize) -> Result<RatioConfig> {
    if !(1.0..=2.0).contains(&budget) {
        return Err(Error::invalid(format!("budget must be in [1,2], got {budget}")));
    }
    if q == 0 {
        return Err(Error::invalid("ratio grid needs q >= 1"));
    }
    let n = widths.len();
    if n < 2 {
        return Err(Error::invalid("budget allocation needs at least one layer"));
    }
    let interior = n - 2;
    if surrogate.coefficients.len() != interior {
        return Err(Error::shape("surrogate coefficients", interior, surrogate.coefficients.len()));
    }
    let single = single_model_weights(widths);
    let layer_cost = |j: usize, k_in: usize, k_out: usize| structural_nonzeros(&widths[j..j + 2], &[k_in, k_out]);
    let k_at = |b: usize, s: usize| merged_count(s as f64 / q as f64, widths[b]);

    // frontier[s]: labels whose last interior boundary sits at grid step s.
    let mut frontier: Vec<Vec<Label>> = vec![vec![Label {
        cost: 0,
        value: 0.0,
        steps: Vec::new(),
    }]];
    let mut prev_k = vec![widths[0]];
    for b in 1..n - 1 {
        let mut next: Vec<Vec<Label>> = Vec::with_capacity(q + 1);
        let mut ks = Vec::with_capacity(q + 1);
        for s in 0..=q {
            let k = k_at(b, s);
            ks.push(k);
            let term = surrogate.term(b - 1, s as f64 / q as f64);
            let mut labels = Vec::new();
            for (labels_prev, &kp) in frontier.iter().zip(&prev_k) {
                for l in labels_prev {
                    let cost = l.cost + layer_cost(b - 1, kp, k);
                    if !within_budget(cost, single, budget) {
                        continue;
                    }
                    let mut steps = l.steps.clone();
                    steps.push(s);
                    labels.push(Label {
                        cost,
                        value: l.value + term,
                        steps,
                    });
                }
            }
            next.push(pareto(labels));
        }
        frontier = next;
        prev_k = ks;
    }
    let mut best: Option<Label> = None;
    for (labels, &kp) in frontier.iter().zip(&prev_k) {
        for l in labels {
            let cost = l.cost + layer_cost(n - 2, kp, widths[n - 1]);
            if !within_budget(cost, single, budget) {
                continue;
            }
            let done = Label { cost, ..l.clone() };
            if best.as_ref().is_none_or(|b| better(&done, b)) {
                best = Some(done);
            }
        }
    }
    let best = best.ok_or_else(|| Error::invalid(format!("no grid configuration fits budget {budget}")))?;
    debug_assert_eq!(best.steps.len(), interior);
    Ok(RatioConfig { q, steps: best.steps })
}

/// Serialized budget decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub format_version: String,
    pub budget: f64,
    pub q: usize,
    pub widths: Vec<usize>,
    pub surrogate: BudgetSurrogate,
    /// Per-boundary ratios, ends included.
    pub ratios: Vec<f64>,
    pub steps: Vec<usize>,
    pub footprint: f64,
    pub objective: f64,
}

impl BudgetPlan {
    pub fn new(surrogate: BudgetSurrogate, widths: &[usize], config: &RatioConfig) -> Result<Self> {
        Ok(BudgetPlan {
            format_version: BUDGET_FORMAT.into(),
            budget: surrogate.budget,
            q: config.q,
            widths: widths.to_vec(),
            ratios: config.boundary_ratios(),
            steps: config.steps.clone(),
            footprint: footprint(widths, &config.ratios())?,
            objective: surrogate.value(config),
            surrogate,
        })
    }

    pub fn interior_ratios(&self) -> Vec<f64> {
        let n = self.ratios.len();
        self.ratios[1..n - 1].to_vec()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let plan: BudgetPlan = serde_json::from_str(&text).map_err(|e| Error::invalid(format!("budget plan: {e}")))?;
        if plan.format_version != BUDGET_FORMAT {
            return Err(Error::invalid(format!(
                "budget plan has format {}, expected {BUDGET_FORMAT}",
                plan.format_version
            )));
        }
        Ok(plan)
    }
}

/// How leave-one-out merges are built and scored.
#[derive(Clone, Debug, Default)]
pub struct SurrogateOptions {
    /// Refit each configuration by least squares before scoring.
    pub refit: Option<MergeOptions>,
    pub bn_batch_size: usize,
    pub bn_batches: usize,
}

/// Merges every leave-one-out configuration and scores it on `proxy`.
pub fn measure_loo_accuracies(
    a: &NetworkCheckpoint,
    b: &NetworkCheckpoint,
    perms: &PermutationSet,
    proxy: &Dataset,
    opts: &SurrogateOptions,
) -> Result<LooAccuracies> {
    let widths = a.widths();
    let interior = widths.len() - 2;
    let traces = match &opts.refit {
        Some(_) => {
            let (_, ta) = a.forward(&proxy.inputs, Capture::Both)?;
            let (_, tb) = b.forward(&proxy.inputs, Capture::Both)?;
            Some((ta.expect("captured"), tb.expect("captured")))
        }
        None => None,
    };
    let mut configs: Vec<(String, Vec<f64>)> = vec![
        ("all merged".into(), vec![1.0; interior]),
        ("ensemble".into(), vec![0.0; interior]),
    ];
    for i in 0..interior {
        let mut only = vec![0.0; interior];
        only[i] = 1.0;
        configs.push((format!("only boundary {} merged", i + 1), only));
    }
    for i in 0..interior {
        let mut all_but = vec![1.0; interior];
        all_but[i] = 0.0;
        configs.push((format!("all but boundary {} merged", i + 1), all_but));
    }
    let scores: Vec<f64> = configs
        .par_iter()
        .map(|(name, ratios)| -> Result<f64> {
            let unevaluable = |e: Error| Error::invalid(format!("configuration '{name}' could not be evaluated: {e}"));
            let full: Vec<f64> = std::iter::once(1.0).chain(ratios.iter().copied()).chain(std::iter::once(1.0)).collect();
            let plan = select_merge_sets(perms, &full, perms.mode).map_err(unevaluable)?;
            let mut merged = build_merged_weights(a, b, perms, &plan).map_err(unevaluable)?;
            if let (Some(o), Some((ta, tb))) = (&opts.refit, &traces) {
                merged = refit_with_traces(&merged, &plan, ta, tb, o).map_err(unevaluable)?.0;
            }
            let net = merged
                .net
                .reset_batchnorm(&proxy.inputs, opts.bn_batch_size.max(1), opts.bn_batches.max(1))
                .map_err(unevaluable)?;
            accuracy(&net, proxy).map_err(unevaluable)
        })
        .collect::<Result<_>>()?;
    Ok(LooAccuracies {
        acc_full: scores[0],
        acc_ensemble: scores[1],
        acc_loo_merged: scores[2..2 + interior].to_vec(),
        acc_loo_unmerged: scores[2 + interior..].to_vec(),
    })
}

pub fn measure_loo_surrogate(
    a: &NetworkCheckpoint,
    b: &NetworkCheckpoint,
    perms: &PermutationSet,
    proxy: &Dataset,
    budget: f64,
    orientation: Orientation,
    opts: &SurrogateOptions,
) -> Result<BudgetSurrogate> {
    BudgetSurrogate::new(measure_loo_accuracies(a, b, perms, proxy, opts)?, budget, orientation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surrogate(coefficients: Vec<f64>, orientation: Orientation) -> BudgetSurrogate {
        let n = coefficients.len();
        BudgetSurrogate {
            accuracies: LooAccuracies {
                acc_full: 0.0,
                acc_ensemble: 0.0,
                acc_loo_merged: vec![0.0; n],
                acc_loo_unmerged: vec![0.0; n],
            },
            budget: 1.5,
            orientation,
            coefficients,
        }
    }

    #[test]
    fn footprint_examples() {
        assert_eq!(footprint(&[4, 5, 3], &[1.0]).unwrap(), 1.0);
        assert_eq!(footprint(&[4, 5, 3], &[0.0]).unwrap(), 2.0);
        assert_eq!(footprint(&[4, 5, 3], &[0.4]).unwrap(), 56.0 / 35.0);
        assert!(footprint(&[4, 5, 3], &[1.2]).is_err());
        assert!(footprint(&[4, 5, 3], &[]).is_err());
    }

    #[test]
    fn coefficient_examples() {
        assert!((surrogate_coefficient(0.9, 0.5, 0.4, 1.5) - 0.25).abs() < 1e-15);
        assert_eq!(surrogate_coefficient(0.7, 0.7, 0.7, 1.3), 0.0);
        assert_eq!(surrogate_coefficient(0.9, 0.6, 0.4, 2.0), 0.6 - 0.4);
    }

    #[test]
    fn surrogate_endpoints() {
        let s = surrogate(vec![0.3, -0.1, 0.5], Orientation::MergedFraction);
        assert_eq!(s.value(&RatioConfig::all_merged(3, 4)), 0.3 + -0.1 + 0.5);
        assert_eq!(s.value(&RatioConfig { q: 4, steps: vec![0; 3] }), 0.0);
        let s = surrogate(vec![0.3, -0.1, 0.5], Orientation::UnmergedFraction);
        assert_eq!(s.value(&RatioConfig::all_merged(3, 4)), 0.0);
    }

    #[test]
    fn unit_budget_merges_everything() {
        let s = surrogate(vec![1.0, 2.0], Orientation::UnmergedFraction);
        let c = solve_budget(&s, &[6, 8, 8, 5], 1.0, 4).unwrap();
        assert_eq!(c.steps, vec![4, 4]);
    }

    #[test]
    fn full_budget_follows_coefficient_signs() {
        let s = surrogate(vec![1.0, -2.0, 0.5], Orientation::UnmergedFraction);
        let c = solve_budget(&s, &[3, 6, 6, 6, 2], 2.0, 4).unwrap();
        assert_eq!(c.steps, vec![0, 4, 0]);
        let s = surrogate(vec![1.0, -2.0, 0.5], Orientation::MergedFraction);
        let c = solve_budget(&s, &[3, 6, 6, 6, 2], 2.0, 4).unwrap();
        assert_eq!(c.steps, vec![4, 0, 4]);
    }

    #[test]
    fn zero_coefficients_pick_the_smallest_footprint() {
        let s = surrogate(vec![0.0, 0.0], Orientation::UnmergedFraction);
        let c = solve_budget(&s, &[4, 6, 6, 3], 1.7, 5).unwrap();
        assert_eq!(c.steps, vec![5, 5]);
    }

    #[test]
    fn invalid_budgets() {
        let s = surrogate(vec![1.0], Orientation::UnmergedFraction);
        assert!(solve_budget(&s, &[2, 4, 2], 0.5, 4).is_err());
        assert!(solve_budget(&s, &[2, 4, 2], 2.5, 4).is_err());
        assert!(solve_budget(&s, &[2, 4, 2], 1.5, 0).is_err());
        assert!(solve_budget(&s, &[2, 4, 4, 2], 1.5, 4).is_err());
    }
}
