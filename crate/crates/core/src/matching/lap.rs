//! Exact linear assignment (maximization).
//!
//! Shortest augmenting paths with row/column potentials (Hungarian method,
//! `O(n^3)`), followed by a pass that picks the lexicographically smallest
//! assignment among all optimal ones: an assignment is optimal iff every
//! edge it uses is tight under the final potentials, so the pass searches
//! perfect matchings of the tight-edge graph greedily, row by row.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `sigma[a]` is the column assigned to row `a`.
    pub sigma: Vec<usize>,
    /// `sum_a profit[a, sigma[a]]`, summed in row order.
    pub total: f64,
}

pub fn assignment_total(profit: &DMatrix<f64>, sigma: &[usize]) -> f64 {
    sigma.iter().enumerate().map(|(a, &j)| profit[(a, j)]).sum()
}

/// Maximizes `sum_a profit[a, sigma(a)]` over permutations `sigma`; ties go
/// to the lexicographically smallest `sigma`.
pub fn solve_lap(profit: &DMatrix<f64>) -> Result<Assignment> {
    let n = profit.nrows();
    if profit.ncols() != n {
        return Err(Error::shape("assignment profit", "square matrix", format!("{}x{}", n, profit.ncols())));
    }
    if profit.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("assignment profit contains a non-finite entry"));
    }
    if n == 0 {
        return Ok(Assignment {
            sigma: Vec::new(),
            total: 0.0,
        });
    }
    let cost = |i: usize, j: usize| -profit[(i, j)];
    let (mut row_of_col, u, v) = hungarian(n, cost);
    let scale = profit.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-11 * scale * n as f64;
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| cost(i, j) - u[i] - v[j] <= tol).collect())
        .collect();
    let mut col_of_row = vec![usize::MAX; n];
    for (j, &i) in row_of_col.iter().enumerate() {
        col_of_row[i] = j;
    }
    let base = col_of_row.clone();
    lexicographic_min(&tight, &mut col_of_row, &mut row_of_col);
    let mut total = assignment_total(profit, &col_of_row);
    let base_total = assignment_total(profit, &base);
    // The tight graph uses a tolerance; never trade optimality for order.
    if total < base_total {
        col_of_row = base;
        total = base_total;
    }
    Ok(Assignment {
        sigma: col_of_row,
        total,
    })
}

/// Min-cost assignment. Returns `row_of_col` and the row/column potentials
/// (`cost(i, j) - u[i] - v[j] >= 0`, with equality on the assignment).
fn hungarian(n: usize, cost: impl Fn(usize, usize) -> f64) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based with a virtual column 0, as in the classic formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let row_of_col = (1..=n).map(|j| p[j] - 1).collect();
    (row_of_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Rewrites a perfect matching of the tight graph into the
/// lexicographically smallest one.
fn lexicographic_min(tight: &[Vec<usize>], col_of_row: &mut [usize], row_of_col: &mut [usize]) {
    let n = tight.len();
    let mut fixed_col = vec![false; n];
    for a in 0..n {
        for &j in &tight[a] {
            if j == col_of_row[a] {
                break;
            }
            if fixed_col[j] {
                continue;
            }
            // Give `j` to `a`; its current owner must reach `a`'s old column
            // through an alternating path over rows after `a`.
            let owner = row_of_col[j];
            let target = col_of_row[a];
            let mut visited = vec![false; n];
            visited[j] = true;
            let mut path = Vec::new();
            if alternating_path(owner, target, a, tight, row_of_col, &fixed_col, &mut visited, &mut path) {
                // path holds (row, new column) pairs starting at `owner`.
                for &(r, c) in &path {
                    col_of_row[r] = c;
                    row_of_col[c] = r;
                }
                col_of_row[a] = j;
                row_of_col[j] = a;
                break;
            }
        }
        fixed_col[col_of_row[a]] = true;
    }
}

#[allow(clippy::too_many_arguments)]
fn alternating_path(
    row: usize,
    target: usize,
    pivot: usize,
    tight: &[Vec<usize>],
    row_of_col: &[usize],
    fixed_col: &[bool],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    for &c in &tight[row] {
        if visited[c] || fixed_col[c] {
            continue;
        }
        visited[c] = true;
        if c == target {
            path.push((row, c));
            return true;
        }
        let next = row_of_col[c];
        if next == pivot {
            continue;
        }
        path.push((row, c));
        if alternating_path(next, target, pivot, tight, row_of_col, fixed_col, visited, path) {
            return true;
        }
        path.pop();
    }
    false
}
