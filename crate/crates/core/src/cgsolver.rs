//! Conjugate gradients for `min_x 1/2 |Ax - y|^2 + beta/2 |x - z|^2`,
//! i.e. the normal equations `(A^T A + beta I) x = A^T y + beta z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, LinearOperator};

/// Relative normal-equation residual below which the solver stops early.
pub const EARLY_EXIT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgReport {
    /// CG steps actually taken.
    pub iterations: usize,
    /// `|A^T(y - Ax0) + beta (z - x0)|`
    pub initial_residual: f64,
    pub final_residual: f64,
    /// Objective at the start and after every step. Updated with the exact
    /// CG decrease `alpha |r|^2 / 2`, which avoids an extra forward
    /// projection per step.
    pub costs: Vec<f64>,
    /// True if the residual tolerance ended the run before `iters` steps.
    pub converged: bool,
}

/// Runs up to `iters` CG steps from `x0` and returns the last iterate.
///
/// `beta = 0` is accepted and gives plain least squares.
pub fn solve_regularized(
    op: &dyn LinearOperator,
    y: &[f64],
    z: &[f64],
    beta: f64,
    x0: Vec<f64>,
    iters: usize,
) -> Result<(Vec<f64>, CgReport)> {
    let (n, m) = (op.domain_len(), op.range_len());
    if y.len() != m || z.len() != n || x0.len() != n {
        return Err(Error::Dimension(format!(
            "operator maps {n} -> {m}, got x0 {}, z {}, y {}",
            x0.len(),
            z.len(),
            y.len()
        )));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidParameter(format!("beta must be finite and non-negative, got {beta}")));
    }

    let mut x = x0;
    // Data residual y - A x0.
    let mut t = vec![0.0; m];
    op.apply(&x, &mut t);
    for (ti, yi) in t.iter_mut().zip(y) {
        *ti = yi - *ti;
    }
    let mut cost = 0.5 * linalg::norm_sq(&t) + 0.5 * beta * linalg::dist_sq(&x, z);

    let mut r: Vec<f64> = z.iter().zip(&x).map(|(zi, xi)| beta * (zi - xi)).collect();
    op.apply_adjoint_add(&t, 1.0, &mut r);
    let mut rr = linalg::norm_sq(&r);
    if !rr.is_finite() || !cost.is_finite() {
        return Err(Error::Numerical("non-finite initial residual".into()));
    }
    let initial_residual = rr.sqrt();
    let mut report = CgReport {
        iterations: 0,
        initial_residual,
        final_residual: initial_residual,
        costs: vec![cost],
        converged: rr == 0.0,
    };
    if rr == 0.0 {
        return Ok((x, report));
    }

    let mut p = r.clone();
    for _ in 0..iters {
        op.apply(&p, &mut t);
        let php = linalg::norm_sq(&t) + beta * linalg::norm_sq(&p);
        if !php.is_finite() {
            return Err(Error::Numerical(format!("non-finite curvature at CG step {}", report.iterations + 1)));
        }
        if php <= 0.0 {
            // Search direction in the null space; nothing left to reduce.
            break;
        }
        let alpha = rr / php;
        linalg::axpy(alpha, &p, &mut x);
        linalg::axpy(-alpha * beta, &p, &mut r);
        op.apply_adjoint_add(&t, -alpha, &mut r);
        cost -= 0.5 * alpha * rr;
        let rr_new = linalg::norm_sq(&r);
        if !rr_new.is_finite() || !linalg::all_finite(&x) {
            return Err(Error::Numerical(format!("non-finite iterate at CG step {}", report.iterations + 1)));
        }
        report.iterations += 1;
        report.costs.push(cost);
        report.final_residual = rr_new.sqrt();
        if report.final_residual <= EARLY_EXIT_TOL * initial_residual {
            report.converged = true;
            break;
        }
        linalg::xpby(&r, rr_new / rr, &mut p);
        rr = rr_new;
    }
    Ok((x, report))
}

/// Objective `1/2 |Ax - y|^2 + beta/2 |x - z|^2`, evaluated directly.
pub fn objective(op: &dyn LinearOperator, x: &[f64], y: &[f64], z: &[f64], beta: f64) -> f64 {
    let mut ax = vec![0.0; op.range_len()];
    op.apply(x, &mut ax);
    0.5 * linalg::dist_sq(&ax, y) + 0.5 * beta * linalg::dist_sq(x, z)
}

/// Normal-equation residual `|A^T(Ax - y) + beta (x - z)|`, evaluated directly.
pub fn normal_residual(op: &dyn LinearOperator, x: &[f64], y: &[f64], z: &[f64], beta: f64) -> f64 {
    let mut ax = vec![0.0; op.range_len()];
    op.apply(x, &mut ax);
    for (a, yi) in ax.iter_mut().zip(y) {
        *a -= yi;
    }
    let mut g: Vec<f64> = x.iter().zip(z).map(|(xi, zi)| beta * (xi - zi)).collect();
    op.apply_adjoint_add(&ax, 1.0, &mut g);
    linalg::norm(&g)
}
