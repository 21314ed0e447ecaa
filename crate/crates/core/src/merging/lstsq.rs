//! Row-wise ridge regression toward an anchor:
//!
//! ```text
//! min_theta ||theta D - Y||^2 + lambda ||theta - theta_0||^2
//! ```
//!
//! `D` is `p x n` with the constant bias feature as its last row, `Y` and
//! `theta_0` hold one output row each. All rows share `D`, so one Gram
//! matrix serves the whole group.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative ridge used when none is given: `lambda = RIDGE_SCALE * tr(D D^T) / p`.
pub const RIDGE_SCALE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    ClosedForm,
    /// Nesterov-accelerated gradient descent on the standardized problem;
    /// the step is `lr` divided by the gradient's Lipschitz constant.
    GradientDescent { steps: usize, lr: f64 },
}

impl Solver {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Solver::ClosedForm => Ok(()),
            Solver::GradientDescent { steps, lr } => {
                if steps == 0 {
                    return Err(Error::invalid("gradient descent needs at least one step"));
                }
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
                }
                Ok(())
            }
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Solver::ClosedForm => "closed_form".into(),
            Solver::GradientDescent { steps, lr } => format!("gradient_descent(steps={steps},lr={lr})"),
        }
    }
}

pub fn default_lambda(gram: &DMatrix<f64>) -> f64 {
    RIDGE_SCALE * gram.trace() / gram.nrows().max(1) as f64
}

/// `sum_rows ||theta D - Y||^2`.
pub fn residual(design: &DMatrix<f64>, targets: &DMatrix<f64>, theta: &DMatrix<f64>) -> f64 {
    (theta * design - targets).norm_squared()
}

pub fn objective(design: &DMatrix<f64>, targets: &DMatrix<f64>, theta: &DMatrix<f64>, anchor: &DMatrix<f64>, lambda: f64) -> f64 {
    residual(design, targets, theta) + lambda * (theta - anchor).norm_squared()
}

pub struct Fit {
    pub theta: DMatrix<f64>,
    pub lambda: f64,
}

pub fn solve(design: &DMatrix<f64>, targets: &DMatrix<f64>, anchor: &DMatrix<f64>, lambda: Option<f64>, solver: Solver) -> Result<Fit> {
    let p = design.nrows();
    if targets.ncols() != design.ncols() || anchor.ncols() != p || anchor.nrows() != targets.nrows() {
        return Err(Error::shape(
            "least-squares problem",
            format!("design {p}x{}", design.ncols()),
            format!("targets {}x{}, anchor {}x{}", targets.nrows(), targets.ncols(), anchor.nrows(), anchor.ncols()),
        ));
    }
    let gram = design * design.transpose();
    let lambda = lambda.unwrap_or_else(|| default_lambda(&gram));
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("ridge penalty must be finite and >= 0, got {lambda}")));
    }
    // p x rows
    let rhs = design * targets.transpose() + anchor.transpose() * lambda;
    let theta_t = match solver {
        Solver::ClosedForm => closed_form(gram, &rhs, lambda)?,
        Solver::GradientDescent { steps, lr } => {
            solver.validate()?;
            gradient_descent(design, &gram, &rhs, lambda, anchor.transpose(), steps, lr)?
        }
    };
    Ok(Fit {
        theta: theta_t.transpose(),
        lambda,
    })
}

fn closed_form(gram: DMatrix<f64>, rhs: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let p = gram.nrows();
    let mut system = gram;
    for i in 0..p {
        system[(i, i)] += lambda;
    }
    let singular = || Error::Singular {
        context: format!("{p}x{p} normal matrix"),
    };
    let chol = Cholesky::new(system).ok_or_else(singular)?;
    if lambda == 0.0 {
        // Cholesky succeeds on some numerically rank-deficient matrices.
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
        if lo <= hi * 1e-7 {
            return Err(singular());
        }
    }
    let theta = chol.solve(rhs);
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    Ok(theta)
}

/// Solves the same normal equations iteratively. The parameters are
/// reparametrized so the design rows are centered and unit-variance, which
/// makes plain accelerated descent converge in tens of steps.
fn gradient_descent(
    design: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    lambda: f64,
    start: DMatrix<f64>,
    steps: usize,
    lr: f64,
) -> Result<DMatrix<f64>> {
    let p = design.nrows();
    let n = design.ncols().max(1) as f64;
    let w = p - 1;
    // theta = T phi, with theta_k = phi_k / s_k and
    // theta_bias = phi_bias - sum_k mu_k phi_k / s_k.
    let mut t = DMatrix::<f64>::identity(p, p);
    let mut t_inv = DMatrix::<f64>::identity(p, p);
    for k in 0..w {
        let row = design.row(k);
        let mu = row.sum() / n;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let s = if var > 1e-24 { var.sqrt() } else { 1.0 };
        t[(k, k)] = 1.0 / s;
        t[(w, k)] = -mu / s;
        t_inv[(k, k)] = s;
        t_inv[(w, k)] = mu;
    }
    let mut system = gram.clone();
    for i in 0..p {
        system[(i, i)] += lambda;
    }
    let h = t.transpose() * &system * &t;
    let g = t.transpose() * rhs;
    let top = SymmetricEigen::new(h.clone()).eigenvalues.max();
    if !(top > 0.0) {
        return Err(Error::Singular {
            context: format!("{p}x{p} normal matrix"),
        });
    }
    // f(phi) = phi^T H phi - 2 g^T phi has a 2 * top Lipschitz gradient.
    let step = lr / (2.0 * top);
    let mut phi = &t_inv * start;
    let mut prev = phi.clone();
    for k in 0..steps {
        let momentum = k as f64 / (k as f64 + 3.0);
        let look = &phi + (&phi - &prev) * momentum;
        let grad = (&h * &look - &g) * 2.0;
        prev = std::mem::replace(&mut phi, look - grad * step);
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k + 1 });
        }
    }
    Ok(t * phi)
}
