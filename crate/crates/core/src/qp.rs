//! Dense quadratic programming over the probability simplex.
//!
//! Minimizes `θᵀDθ − 2θᵀd` subject to `θ ≥ 0`, `Σθ = 1` with an active-set
//! iteration: solve the equality-constrained system on the current free set,
//! step with a ratio test when a coordinate would go negative, and free the
//! most negative multiplier when the dual check fails. Weight vectors here
//! have at most a dozen or so entries, so dense LU solves are plenty.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("curvature matrix must be square and match the linear term")]
    BadShape,
    #[error("non-finite value in subproblem")]
    NonFinite,
    #[error("KKT system singular even after ridge {ridge:.3e}")]
    Singular { ridge: f64 },
    #[error("active-set iteration failed to converge after {iterations} steps")]
    MaxIterations { iterations: usize },
}

/// One block subproblem: minimize `θᵀDθ − 2θᵀd` on the simplex.
#[derive(Debug, Clone)]
pub struct QuadraticSubproblem {
    pub curvature: DMatrix<f64>,
    pub linear: DVector<f64>,
}

impl QuadraticSubproblem {
    pub fn objective(&self, theta: &DVector<f64>) -> f64 {
        (theta.transpose() * &self.curvature * theta)[(0, 0)] - 2.0 * self.linear.dot(theta)
    }
}

/// Largest KKT violation of `theta` for the subproblem: stationarity on the
/// support, dual feasibility off it, and the simplex constraints themselves.
pub fn kkt_residual(sub: &QuadraticSubproblem, theta: &DVector<f64>) -> f64 {
    let grad = 2.0 * (&sub.curvature * theta - &sub.linear);
    let support: Vec<usize> = (0..theta.len()).filter(|&i| theta[i] > 1e-10).collect();
    let lambda = support.iter().map(|&i| grad[i]).sum::<f64>() / support.len() as f64;
    let mut res = (theta.sum() - 1.0).abs();
    for i in 0..theta.len() {
        res = res.max(-theta[i]);
        if theta[i] > 1e-10 {
            res = res.max((grad[i] - lambda).abs());
        } else {
            res = res.max(lambda - grad[i]);
        }
    }
    res
}

pub fn solve_simplex_qp(
    sub: &QuadraticSubproblem,
    tolerance: f64,
) -> Result<DVector<f64>, QpError> {
    let n = sub.linear.len();
    if sub.curvature.nrows() != n || sub.curvature.ncols() != n || n == 0 {
        return Err(QpError::BadShape);
    }
    if sub.curvature.iter().any(|v| !v.is_finite())
        || sub.linear.iter().any(|v| !v.is_finite())
    {
        return Err(QpError::NonFinite);
    }
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }

    // Symmetrize and repair: rounding in the assembly can leave D very
    // slightly indefinite, which would break the ratio-test argument.
    let mut d_mat = DMatrix::from_fn(n, n, |i, j| {
        0.5 * (sub.curvature[(i, j)] + sub.curvature[(j, i)])
    });
    let trace: f64 = d_mat.diagonal().sum();
    let base_ridge = 1e-10 * trace.abs().max(1.0) / n as f64;
    for i in 0..n {
        d_mat[(i, i)] += base_ridge;
    }

    let scale = sub
        .linear
        .iter()
        .chain(d_mat.iter())
        .fold(1.0f64, |m, &v| m.max(v.abs()));

    let mut theta = DVector::from_element(n, 1.0 / n as f64);
    let mut free: Vec<bool> = vec![true; n];
    let max_iters = 50 * n + 50;
    for _ in 0..max_iters {
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let m = idx.len();
        let x = solve_equality_kkt(&d_mat, &sub.linear, &idx)?;

        if x.iter().take(m).all(|&v| v >= -1e-12) {
            for (pos, &i) in idx.iter().enumerate() {
                theta[i] = x[pos].max(0.0);
            }
            for i in 0..n {
                if !free[i] {
                    theta[i] = 0.0;
                }
            }
            let lambda = x[m];
            let grad = 2.0 * (&d_mat * &theta - &sub.linear);
            let mut worst: Option<(usize, f64)> = None;
            for i in 0..n {
                if free[i] {
                    continue;
                }
                let mu = grad[i] - lambda;
                if mu < -tolerance * scale && worst.map_or(true, |(_, w)| mu < w) {
                    worst = Some((i, mu));
                }
            }
            match worst {
                None => {
                    let total = theta.sum();
                    return Ok(theta / total);
                }
                Some((i, _)) => free[i] = true,
            }
        } else {
            // Ratio test from the current feasible point toward x.
            let mut alpha = 1.0f64;
            for (pos, &i) in idx.iter().enumerate() {
                if x[pos] < 0.0 {
                    let step = theta[i] / (theta[i] - x[pos]);
                    alpha = alpha.min(step);
                }
            }
            for (pos, &i) in idx.iter().enumerate() {
                theta[i] += alpha * (x[pos] - theta[i]);
                if theta[i] <= 1e-15 || (x[pos] < 0.0 && theta[i] < 1e-12) {
                    theta[i] = 0.0;
                    free[i] = false;
                }
            }
            // Keep at least one coordinate free.
            if free.iter().all(|f| !f) {
                let i = theta.argmax().0;
                free[i] = true;
            }
        }
    }
    Err(QpError::MaxIterations {
        iterations: max_iters,
    })
}

/// Solve minimize θᵀDθ − 2θᵀd over the affine set {Σθ = 1} restricted to the
/// given coordinates; returns (θ_free..., λ).
fn solve_equality_kkt(
    d_mat: &DMatrix<f64>,
    d_vec: &DVector<f64>,
    idx: &[usize],
) -> Result<DVector<f64>, QpError> {
    let m = idx.len();
    let mut kkt = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            kkt[(r, c)] = 2.0 * d_mat[(i, j)];
        }
        kkt[(r, m)] = -1.0;
        rhs[r] = 2.0 * d_vec[i];
    }
    for c in 0..m {
        kkt[(m, c)] = 1.0;
    }
    rhs[m] = 1.0;

    let mut ridge = 0.0;
    let step = 1e-12 * d_mat.diagonal().amax().max(1.0);
    for attempt in 0..6 {
        if attempt > 0 {
            ridge = step * 10f64.powi(attempt);
            for r in 0..m {
                kkt[(r, r)] += ridge;
            }
        }
        if let Some(x) = kkt.clone().lu().solve(&rhs) {
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
    }
    Err(QpError::Singular { ridge })
}
