//! Posterior moments of linear predictors, one sparse solve per predictor.

use nalgebra::{DMatrix, DVector};

use crate::approx::GaussianApprox;
use crate::error::{LgocvError, Result};
use crate::model::LgmModel;

/// Mean and covariance of `η_I`.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaMoments {
    pub indices: Vec<usize>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

fn check_indices(model: &LgmModel, indices: &[usize]) -> Result<()> {
    let n = model.n_observations();
    match indices.iter().find(|&&i| i >= n) {
        Some(&index) => Err(LgocvError::IndexOutOfRange { index, n }),
        None => Ok(()),
    }
}

/// `A_I f*`.
pub fn eta_mean(model: &LgmModel, approx: &GaussianApprox, indices: &[usize]) -> Result<DVector<f64>> {
    check_indices(model, indices)?;
    Ok(DVector::from_iterator(indices.len(), indices.iter().map(|&i| approx.eta[i])))
}

/// `Σ_f A_iᵀ` for each `i` in `indices`, as the columns of a `d × |I|` matrix.
fn solve_columns(model: &LgmModel, approx: &GaussianApprox, indices: &[usize]) -> DMatrix<f64> {
    let a = model.design();
    let d = model.latent_size();
    let mut x = DMatrix::zeros(d, indices.len());
    for (c, &i) in indices.iter().enumerate() {
        x.set_column(c, &DVector::from_vec(approx.factor.solve(&a.row_dense(i))));
    }
    if let Some(corr) = &approx.constraint {
        // X* = X - W G⁻¹ (C X), and C X = Wᵀ Aᵀ_I since Q is symmetric.
        let mut ct_x = DMatrix::zeros(corr.qinv_ct.ncols(), indices.len());
        for (c, &i) in indices.iter().enumerate() {
            let (cols, vals) = a.row(i);
            for r in 0..corr.qinv_ct.ncols() {
                ct_x[(r, c)] = cols.iter().zip(vals).map(|(&j, &v)| corr.qinv_ct[(j, r)] * v).sum();
            }
        }
        let coef = corr.gram.solve(&ct_x);
        x -= &corr.qinv_ct * coef;
    }
    x
}

/// Mean and covariance of `η_I` under the Gaussian approximation.
pub fn eta_covariance(model: &LgmModel, approx: &GaussianApprox, indices: &[usize]) -> Result<EtaMoments> {
    let mean = eta_mean(model, approx, indices)?;
    let x = solve_columns(model, approx, indices);
    let a = model.design();
    let k = indices.len();
    let mut cov = DMatrix::zeros(k, k);
    for (r, &i) in indices.iter().enumerate() {
        let (cols, vals) = a.row(i);
        for c in 0..k {
            cov[(r, c)] = cols.iter().zip(vals).map(|(&j, &v)| v * x[(j, c)]).sum();
        }
    }
    Ok(EtaMoments { indices: indices.to_vec(), mean, cov })
}

/// `Cov(η_j, η_i)` for every observation `j`.
pub fn eta_cross_covariance(model: &LgmModel, approx: &GaussianApprox, i: usize) -> Result<Vec<f64>> {
    check_indices(model, &[i])?;
    let x = approx.covariance_apply(&model.design().row_dense(i));
    Ok(model.design().mul_vec(&x))
}

/// Posterior variance of `η_i`.
pub fn eta_variance(model: &LgmModel, approx: &GaussianApprox, i: usize) -> Result<f64> {
    Ok(eta_covariance(model, approx, &[i])?.cov[(0, 0)])
}
