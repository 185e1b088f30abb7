//! Dense linear-algebra replicas of the posterior and leave-out moments.
//!
//! Constraints are eliminated by writing `f = f0 + N u`, with `N` an
//! orthonormal basis of the null space of `C` and `f0` the minimum-norm
//! solution of `C f = e`, so every matrix inverted here is positive definite.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::covariance::EtaMoments;
use crate::error::{LgocvError, Result};
use crate::model::{HyperPoint, LgmModel};

/// Dense Gaussian approximation at the mode.
#[derive(Debug, Clone)]
pub struct DenseState {
    pub hypers: Vec<f64>,
    pub prior: DMatrix<f64>,
    pub design: DMatrix<f64>,
    pub basis: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub mean: DVector<f64>,
    pub eta: DVector<f64>,
    pub curvature: DVector<f64>,
    pub linear: DVector<f64>,
}

fn null_space(model: &LgmModel) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = model.latent_size();
    let cons = model.constraints();
    if cons.is_empty() {
        return Ok((DMatrix::identity(d, d), DVector::zeros(d)));
    }
    let c = &cons.matrix;
    let cct = Cholesky::new(c * c.transpose()).ok_or(LgocvError::RankDeficientConstraints)?;
    let offset = c.transpose() * cct.solve(&cons.rhs);
    let proj = DMatrix::identity(d, d) - c.transpose() * cct.solve(c);
    let eig = proj.symmetric_eigen();
    let keep: Vec<usize> = (0..d).filter(|&j| eig.eigenvalues[j] > 0.5).collect();
    let basis = DMatrix::from_fn(d, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]);
    Ok((basis, offset))
}

fn active_terms(model: &LgmModel, hypers: &[f64], eta: &DVector<f64>) -> (f64, DVector<f64>, DVector<f64>) {
    let n = model.n_observations();
    let mut value = 0.0;
    let mut grad = DVector::zeros(n);
    let mut curv = DVector::zeros(n);
    for i in 0..n {
        if model.is_active(i) {
            let t = model.observation_terms(i, eta[i], hypers);
            value += t.value;
            grad[i] = t.grad;
            curv[i] = -t.hess;
        }
    }
    (value, grad, curv)
}

/// Mode of `π(f | θ, y)` by dense Newton iterations in null-space coordinates.
pub fn dense_mode(model: &LgmModel, point: &HyperPoint) -> Result<DenseState> {
    let hypers = model.hyper_values(point);
    let prior = model.assemble_prior_precision(point)?.to_dense();
    let design = model.design().to_dense();
    let (basis, offset) = null_space(model)?;
    let r = basis.ncols();
    let objective = |u: &DVector<f64>| {
        let f = &offset + &basis * u;
        let eta = &design * &f;
        let (g, _, _) = active_terms(model, &hypers, &eta);
        g - 0.5 * f.dot(&(&prior * &f))
    };
    let mut u = DVector::zeros(r);
    let mut obj = objective(&u);
    let mut converged = false;
    for _ in 0..200 {
        let f = &offset + &basis * &u;
        let eta = &design * &f;
        let (_, grad, curv) = active_terms(model, &hypers, &eta);
        let g_u = basis.tr_mul(&(design.tr_mul(&grad) - &prior * &f));
        let q = &prior + design.tr_mul(&DMatrix::from_diagonal(&curv)) * &design;
        let h = basis.tr_mul(&q) * &basis;
        let chol = Cholesky::new(0.5 * (&h + h.transpose()))
            .ok_or_else(|| LgocvError::Optimizer("dense Newton Hessian not positive definite".into()))?;
        let step = chol.solve(&g_u);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &u + &step * t;
            let val = objective(&cand);
            if val.is_finite() && val >= obj - 1e-13 * obj.abs().max(1.0) {
                let change = (&design * (&basis * (&cand - &u))).amax();
                u = cand;
                obj = val;
                moved = true;
                converged = change < 1e-13 * (1.0 + eta.amax());
                break;
            }
            t *= 0.5;
        }
        if !moved || converged {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LgocvError::ModeNotConverged { iterations: 200, change: f64::NAN, theta: point.theta.clone() });
    }
    let mean = &offset + &basis * &u;
    let eta = &design * &mean;
    let (_, grad, curvature) = active_terms(model, &hypers, &eta);
    let linear = grad + curvature.component_mul(&eta);
    Ok(DenseState { hypers, prior, design, basis, offset, mean, eta, curvature, linear })
}

/// Moments of `η_I` for a Gaussian with precision `q` and linear term
/// `lin` restricted to the affine constraint set.
fn constrained_eta_moments(
    state: &DenseState,
    q: &DMatrix<f64>,
    lin: &DVector<f64>,
    indices: &[usize],
) -> Result<EtaMoments> {
    let n_basis = &state.basis;
    let h = n_basis.tr_mul(q) * n_basis;
    let chol = Cholesky::new(0.5 * (&h + h.transpose()))
        .ok_or(LgocvError::LeaveOutNotPositiveDefinite { min_eigenvalue: f64::NAN })?;
    let u = chol.solve(&n_basis.tr_mul(&(lin - q * &state.offset)));
    let f = &state.offset + n_basis * u;
    let a_i = DMatrix::from_fn(indices.len(), state.design.ncols(), |r, c| state.design[(indices[r], c)]);
    let an = &a_i * n_basis;
    let cov = &an * chol.solve(&an.transpose());
    Ok(EtaMoments { indices: indices.to_vec(), mean: &a_i * f, cov })
}

/// Dense moments of `η_I` under the full-data Gaussian approximation.
pub fn dense_eta_moments(state: &DenseState, indices: &[usize]) -> Result<EtaMoments> {
    let q = &state.prior + state.design.tr_mul(&DMatrix::from_diagonal(&state.curvature)) * &state.design;
    let lin = state.design.tr_mul(&state.linear);
    constrained_eta_moments(state, &q, &lin, indices)
}

/// Moments of `η_I` after removing the quadratic likelihood terms of `y_I`,
/// assembled directly from the remaining observations.
pub fn dense_downdate_oracle(state: &DenseState, indices: &[usize]) -> Result<EtaMoments> {
    let mut c = state.curvature.clone();
    let mut b = state.linear.clone();
    for &i in indices {
        c[i] = 0.0;
        b[i] = 0.0;
    }
    let q = &state.prior + state.design.tr_mul(&DMatrix::from_diagonal(&c)) * &state.design;
    let lin = state.design.tr_mul(&b);
    constrained_eta_moments(state, &q, &lin, indices)
}
