//! Weight matching by coordinate ascent.
//!
//! The objective is `sum_j <[W_j^A | b_j^A], P_{j+1} [W_j^B | b_j^B] (P_j (+) 1)^T>`:
//! the bias rides along as an extra, unpermuted input column. Holding every
//! other boundary fixed, the terms that involve boundary `b` form one linear
//! assignment with profit
//!
//! ```text
//! C = W_{b-1}^A P_{b-1} (W_{b-1}^B)^T + b_{b-1}^A (b_{b-1}^B)^T + (W_b^A)^T P_{b+1} W_b^B
//! ```
//!
//! Sweeps visit hidden boundaries in a seeded random order until a full
//! sweep changes nothing. A boundary only moves when its assignment
//! strictly improves, so the objective never decreases and the loop ends.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::network::NetworkCheckpoint;
use crate::rng::seeded_rng;

use super::{lap::solve_lap, BoundaryMatch, MatchMode, PermutationSet, PERM_FORMAT};

pub const MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatchReport {
    pub perms: PermutationSet,
    /// Objective at the identity start, then after every sweep.
    pub objective_history: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

/// `sum_{r,c} W^A[r,c] W^B[sigma_out(r), sigma_in(c)] + sum_r b^A[r] b^B[sigma_out(r)]`
/// summed over layers.
pub fn weight_match_objective(a: &NetworkCheckpoint, b: &NetworkCheckpoint, sigmas: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    for (j, (ba, bb)) in a.blocks().iter().zip(b.blocks()).enumerate() {
        let (so, si) = (&sigmas[j + 1], &sigmas[j]);
        let (wa, wb) = (&ba.linear.weight, &bb.linear.weight);
        for r in 0..wa.rows() {
            for c in 0..wa.cols() {
                total += f64::from(wa.get(r, c)) * f64::from(wb.get(so[r], si[c]));
            }
            total += f64::from(ba.linear.bias[r]) * f64::from(bb.linear.bias[so[r]]);
        }
    }
    total
}

fn boundary_profit(a: &NetworkCheckpoint, b: &NetworkCheckpoint, sigmas: &[Vec<usize>], boundary: usize) -> DMatrix<f64> {
    let width = sigmas[boundary].len();
    let mut profit = DMatrix::<f64>::zeros(width, width);
    // Incoming layer: rows of W_{b-1} are the units of this boundary.
    let (ia, ib) = (&a.blocks()[boundary - 1].linear, &b.blocks()[boundary - 1].linear);
    let s_in = &sigmas[boundary - 1];
    for u in 0..width {
        let (ra, ba) = (ia.weight.row(u), f64::from(ia.bias[u]));
        for v in 0..width {
            let rb = ib.weight.row(v);
            let mut acc: f64 = ra.iter().enumerate().map(|(k, &x)| f64::from(x) * f64::from(rb[s_in[k]])).sum();
            acc += ba * f64::from(ib.bias[v]);
            profit[(u, v)] = acc;
        }
    }
    // Outgoing layer: columns of W_b are the units of this boundary.
    let (oa, ob) = (&a.blocks()[boundary].linear.weight, &b.blocks()[boundary].linear.weight);
    let s_out = &sigmas[boundary + 1];
    for r in 0..oa.rows() {
        let (ra, rb) = (oa.row(r), ob.row(s_out[r]));
        for (u, &x) in ra.iter().enumerate() {
            let x = f64::from(x);
            for (v, &y) in rb.iter().enumerate() {
                profit[(u, v)] += x * f64::from(y);
            }
        }
    }
    profit
}

pub fn weight_match(a: &NetworkCheckpoint, b: &NetworkCheckpoint, seed: u64) -> Result<WeightMatchReport> {
    if !a.same_architecture(b) {
        return Err(Error::Architecture(format!(
            "widths {:?} vs {:?}",
            a.widths(),
            b.widths()
        )));
    }
    let widths = a.widths();
    let last = widths.len() - 1;
    let mut sigmas: Vec<Vec<usize>> = widths.iter().map(|&w| (0..w).collect()).collect();
    let mut rng = seeded_rng(seed).fork(3);
    let mut history = vec![weight_match_objective(a, b, &sigmas)];
    let mut hidden: Vec<usize> = (1..last).collect();
    let mut converged = hidden.is_empty();
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        rng.shuffle(&mut hidden);
        let mut changed = false;
        for &bd in &hidden {
            let profit = boundary_profit(a, b, &sigmas, bd);
            let current: f64 = sigmas[bd].iter().enumerate().map(|(u, &v)| profit[(u, v)]).sum();
            let best = solve_lap(&profit)?;
            let slack = 1e-12 * current.abs().max(1.0);
            if best.total > current + slack && best.sigma != sigmas[bd] {
                sigmas[bd] = best.sigma;
                changed = true;
            }
        }
        sweeps += 1;
        history.push(weight_match_objective(a, b, &sigmas));
        converged = !changed;
    }
    if !converged {
        tracing::warn!(sweeps, "weight matching stopped at the sweep limit before reaching a fixed point");
    }
    let boundaries = (0..=last)
        .map(|bd| {
            if bd == 0 || bd == last {
                return BoundaryMatch {
                    sigma: sigmas[bd].clone(),
                    score: vec![0.0; widths[bd]],
                };
            }
            let profit = boundary_profit(a, b, &sigmas, bd);
            BoundaryMatch {
                score: sigmas[bd].iter().enumerate().map(|(u, &v)| profit[(u, v)]).collect(),
                sigma: sigmas[bd].clone(),
            }
        })
        .collect();
    Ok(WeightMatchReport {
        perms: PermutationSet {
            format_version: PERM_FORMAT.into(),
            mode: MatchMode::Weight,
            boundaries,
        },
        objective_history: history,
        sweeps,
        converged,
    })
}
