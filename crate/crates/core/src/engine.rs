//! Leave-group-out predictive densities without refitting.
//!
//! For each observation `i` and hyperparameter point, the posterior of `η_I`
//! is stripped of the quadratic likelihood terms of `y_I`, the predictive
//! integral over `η_i` is done by adaptive Gauss-Hermite, and the grid weights
//! are corrected by the Laplace approximation of `π(y_I | θ, y_{-I})`.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;

use crate::approx::GaussianApprox;
use crate::covariance::{eta_covariance, EtaMoments};
use crate::error::{LgocvError, Result};
use crate::grid::Fit;
use crate::groups::GroupSpec;
use crate::model::LgmModel;
use crate::quadrature::{log_gaussian_expectation, GaussHermite};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub gh_order: usize,
    /// Eigenvalues of `Σ` below `rank_tol · λ_max` are treated as zero.
    pub rank_tol: f64,
    /// Leave-out precisions with an eigenvalue below `-negative_tol · scale`
    /// are reported as indefinite.
    pub negative_tol: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { gh_order: 50, rank_tol: 1e-10, negative_tol: 1e-8 }
    }
}

/// How the leave-out moments were obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum RankPath {
    FullRank,
    /// `Σ = B Bᵀ` with `B = V Λ^{1/2}` over the `rank` retained eigenpairs.
    Eigen {
        basis: DMatrix<f64>,
        rank: usize,
    },
}

/// Moments of `η_I` given `y_{-I}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaveGroupMoments {
    pub indices: Vec<usize>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub path: RankPath,
    /// `log π_G(η*_I | y_{-I}) - log π_G(η*_I | y)` at `η*_I = μ`, in the
    /// coordinates of the rank path.
    pub log_density_ratio: f64,
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Checks the leave-out precision and returns its Cholesky factor.
fn checked_precision(q: DMatrix<f64>, scale: f64, cfg: &EngineConfig) -> Result<Cholesky<f64, Dyn>> {
    let q = sym(&q);
    let min = SymmetricEigen::new(q.clone()).eigenvalues.min();
    if min <= -cfg.negative_tol * scale || min <= 1e-14 * scale {
        return Err(LgocvError::LeaveOutNotPositiveDefinite { min_eigenvalue: min });
    }
    Cholesky::new(q).ok_or(LgocvError::LeaveOutNotPositiveDefinite { min_eigenvalue: min })
}

/// Removes the likelihood terms `(c_I, b_I)` from the moments of `η_I`.
pub fn downdate(em: &EtaMoments, curvature: &[f64], linear: &[f64], cfg: &EngineConfig) -> Result<LeaveGroupMoments> {
    let k = em.indices.len();
    assert!(curvature.len() == k && linear.len() == k);
    let sigma = sym(&em.cov);
    let mu = &em.mean;
    let c = DMatrix::from_diagonal(&DVector::from_column_slice(curvature));
    let b = DVector::from_column_slice(linear);
    let eig = SymmetricEigen::new(sigma.clone());
    let lmax = eig.eigenvalues.max();
    if !(lmax > 0.0) {
        return Err(LgocvError::ZeroVariance { index: em.indices[0] });
    }
    let keep: Vec<usize> = (0..k).filter(|&j| eig.eigenvalues[j] > cfg.rank_tol * lmax).collect();
    let cmax = curvature.iter().cloned().fold(0.0, f64::max);

    if keep.len() == k {
        let chol = Cholesky::new(sigma.clone()).ok_or(LgocvError::ZeroVariance { index: em.indices[0] })?;
        let q_full = sym(&chol.inverse());
        let q_out = &q_full - &c;
        let scale = (1.0 / eig.eigenvalues.min()).max(cmax);
        let q_chol = checked_precision(q_out.clone(), scale, cfg)?;
        let mean = q_chol.solve(&(&q_full * mu - &b));
        let cov = sym(&q_chol.inverse());
        let d = mu - &mean;
        let ratio = 0.5 * (q_chol.ln_determinant() + chol.ln_determinant()) - 0.5 * d.dot(&(&q_out * &d));
        return Ok(LeaveGroupMoments {
            indices: em.indices.clone(),
            mean,
            cov,
            path: RankPath::FullRank,
            log_density_ratio: ratio,
        });
    }

    let r = keep.len();
    let v = DMatrix::from_fn(k, r, |i, j| eig.eigenvectors[(i, keep[j])]);
    let lam = DVector::from_fn(r, |j, _| eig.eigenvalues[keep[j]]);
    let basis = DMatrix::from_fn(k, r, |i, j| v[(i, j)] * lam[j].sqrt());
    let vt_mu = v.tr_mul(mu);
    let mu_z = DVector::from_fn(r, |j, _| vt_mu[j] / lam[j].sqrt());
    let mu_perp = mu - &v * &vt_mu;
    let btcb = sym(&(basis.tr_mul(&c) * &basis));
    let q_z = DMatrix::identity(r, r) - &btcb;
    let b_z = &mu_z - basis.tr_mul(&(&b - &c * &mu_perp));
    let scale = SymmetricEigen::new(btcb).eigenvalues.max().max(1.0);
    let q_chol = checked_precision(q_z.clone(), scale, cfg)?;
    let mean_z = q_chol.solve(&b_z);
    let cov_z = sym(&q_chol.inverse());
    let mean = &basis * &mean_z + mu_perp;
    let cov = sym(&(&basis * cov_z * basis.transpose()));
    let d = &mu_z - &mean_z;
    let ratio = 0.5 * q_chol.ln_determinant() - 0.5 * d.dot(&(&q_z * &d));
    Ok(LeaveGroupMoments {
        indices: em.indices.clone(),
        mean,
        cov,
        path: RankPath::Eigen { basis, rank: r },
        log_density_ratio: ratio,
    })
}

/// Leave-out moments of `η_I` at one hyperparameter point.
pub fn leave_group_moments(
    model: &LgmModel,
    approx: &GaussianApprox,
    group: &[usize],
    cfg: &EngineConfig,
) -> Result<(EtaMoments, LeaveGroupMoments)> {
    let em = eta_covariance(model, approx, group)?;
    let c: Vec<f64> = group.iter().map(|&j| approx.curvature[j]).collect();
    let b: Vec<f64> = group.iter().map(|&j| approx.linear[j]).collect();
    let lgm = downdate(&em, &c, &b, cfg)?;
    Ok((em, lgm))
}

/// Laplace approximation of `log π(y_I | θ, y_{-I})`.
pub fn theta_correction(
    model: &LgmModel,
    approx: &GaussianApprox,
    em: &EtaMoments,
    lgm: &LeaveGroupMoments,
) -> Result<f64> {
    let mut total = lgm.log_density_ratio;
    for (pos, &j) in em.indices.iter().enumerate() {
        if model.is_active(j) {
            total += model.observation_log_density(j, em.mean[pos], &approx.hypers);
        }
    }
    if !total.is_finite() {
        return Err(LgocvError::NonFinite(format!("hyperparameter correction for group of {}", em.indices.len())));
    }
    Ok(total)
}

/// Per-hyperparameter-point pieces of one observation's predictive density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointContribution {
    pub log_predictive: f64,
    pub correction: f64,
}

pub fn point_contribution(
    model: &LgmModel,
    approx: &GaussianApprox,
    i: usize,
    group: &[usize],
    cfg: &EngineConfig,
    rule: &GaussHermite,
) -> Result<PointContribution> {
    let pos = group
        .iter()
        .position(|&j| j == i)
        .ok_or_else(|| LgocvError::Config(format!("group of observation {} does not contain it", i + 1)))?;
    let (em, lgm) = leave_group_moments(model, approx, group, cfg)?;
    let var = lgm.cov[(pos, pos)];
    let log_predictive =
        log_gaussian_expectation(|e| model.observation_terms(i, e, &approx.hypers), lgm.mean[pos], var, rule)?;
    let correction = theta_correction(model, approx, &em, &lgm)?;
    Ok(PointContribution { log_predictive, correction })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationScore {
    pub index: usize,
    pub group_size: usize,
    pub density: f64,
    pub log_score: f64,
    /// Corrected hyperparameter weights for this observation's group.
    pub theta_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedObservation {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LgocvResult {
    pub scores: Vec<ObservationScore>,
    pub skipped: Vec<SkippedObservation>,
    /// Mean log score over the scored observations.
    pub utility: f64,
    pub grid_size: usize,
    pub all_singletons: bool,
    pub group_source: String,
    pub m: Option<usize>,
}

impl LgocvResult {
    pub fn negated_utility(&self) -> f64 {
        -self.utility
    }

    /// `index,group_size,density,log_score` with 1-based indices.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "index,group_size,density,log_score")?;
        for s in &self.scores {
            writeln!(out, "{},{},{:.17e},{:.17e}", s.index + 1, s.group_size, s.density, s.log_score)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut lines = vec![
            format!("u_lgocv = {:.12}", self.utility),
            format!("negated_utility = {:.12}", self.negated_utility()),
            format!("scored = {}", self.scores.len()),
            format!("skipped = {}", self.skipped.len()),
            format!("theta_grid_size = {}", self.grid_size),
            format!("group_source = {}", self.group_source),
        ];
        if let Some(m) = self.m {
            lines.push(format!("m = {m}"));
        }
        lines.push(format!("lgocv_equals_loocv = {}", self.all_singletons));
        for s in &self.skipped {
            lines.push(format!("skipped_observation = {}: {}", s.index + 1, s.reason));
        }
        lines.join("\n") + "\n"
    }
}

fn score_observation(
    model: &LgmModel,
    fit: &Fit,
    i: usize,
    group: &[usize],
    cfg: &EngineConfig,
    rule: &GaussHermite,
) -> Result<ObservationScore> {
    let mut log_w = Vec::with_capacity(fit.grid.len());
    let mut log_p = Vec::with_capacity(fit.grid.len());
    for (point, approx) in fit.grid.points.iter().zip(&fit.approximations) {
        let pc = point_contribution(model, approx, i, group, cfg, rule)?;
        log_w.push(point.weight.ln() - pc.correction);
        log_p.push(pc.log_predictive);
    }
    let norm = log_sum_exp(&log_w);
    let theta_weights: Vec<f64> = log_w.iter().map(|w| (w - norm).exp()).collect();
    let terms: Vec<f64> = log_w.iter().zip(&log_p).map(|(w, p)| w - norm + p).collect();
    let log_score = log_sum_exp(&terms);
    if !log_score.is_finite() {
        return Err(LgocvError::NonFinite(format!("log predictive density of observation {}", i + 1)));
    }
    Ok(ObservationScore { index: i, group_size: group.len(), density: log_score.exp(), log_score, theta_weights })
}

/// Leave-group-out scores for `targets` (all observations when `None`).
pub fn compute_lgocv(
    model: &LgmModel,
    fit: &Fit,
    groups: &GroupSpec,
    targets: Option<&[usize]>,
    cfg: &EngineConfig,
) -> Result<LgocvResult> {
    let n = model.n_observations();
    let all: Vec<usize>;
    let targets = match targets {
        Some(t) => t,
        None => {
            all = (0..n).collect();
            &all
        }
    };
    if let Some(&index) = targets.iter().find(|&&i| i >= n) {
        return Err(LgocvError::IndexOutOfRange { index, n });
    }
    if groups.n != n {
        return Err(LgocvError::Config(format!("groups are for {} observations, model has {n}", groups.n)));
    }
    if fit.approximations.len() != fit.grid.len() {
        return Err(LgocvError::Config("fit has a different number of approximations and grid points".into()));
    }
    let rule = GaussHermite::new(cfg.gh_order)?;
    let outcomes: Vec<std::result::Result<ObservationScore, SkippedObservation>> = targets
        .par_iter()
        .map(|&i| {
            let group = groups.get(i).ok_or_else(|| SkippedObservation { index: i, reason: "no group".into() })?;
            score_observation(model, fit, i, group, cfg, &rule)
                .map_err(|e| SkippedObservation { index: i, reason: e.to_string() })
        })
        .collect();
    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Ok(s) => scores.push(s),
            Err(s) => {
                log::warn!("observation {} skipped: {}", s.index + 1, s.reason);
                skipped.push(s);
            }
        }
    }
    let utility = if scores.is_empty() {
        f64::NAN
    } else {
        scores.iter().map(|s| s.log_score).sum::<f64>() / scores.len() as f64
    };
    let all_singletons = targets.iter().all(|&i| groups.get(i).is_some_and(|g| g == [i]));
    Ok(LgocvResult {
        scores,
        skipped,
        utility,
        grid_size: fit.grid.len(),
        all_singletons,
        group_source: groups.source.clone(),
        m: groups.m,
    })
}

/// Leave-one-out scores: every group is the observation itself.
pub fn compute_loocv(
    model: &LgmModel,
    fit: &Fit,
    targets: Option<&[usize]>,
    cfg: &EngineConfig,
) -> Result<LgocvResult> {
    let n = model.n_observations();
    let idx: Vec<usize> = targets.map_or_else(|| (0..n).collect(), |t| t.to_vec());
    let groups = GroupSpec::singletons(n, &idx);
    compute_lgocv(model, fit, &groups, Some(&idx), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn em(mean: &[f64], cov: DMatrix<f64>) -> EtaMoments {
        EtaMoments { indices: (0..mean.len()).collect(), mean: DVector::from_column_slice(mean), cov }
    }

    #[test]
    fn conjugate_pair_leave_one_out() {
        // y_k | f ~ N(f, 1), f ~ N(0, 1); posterior of f: mean (y1+y2)/3, var 1/3.
        let (y1, y2) = (0.8, -0.4);
        let m = em(&[(y1 + y2) / 3.0], DMatrix::from_element(1, 1, 1.0 / 3.0));
        let out = downdate(&m, &[1.0], &[y2], &EngineConfig::default()).unwrap();
        assert!((out.mean[0] - y1 / 2.0).abs() < 1e-14);
        assert!((out.cov[(0, 0)] - 0.5).abs() < 1e-14);
        assert_eq!(out.path, RankPath::FullRank);
    }

    #[test]
    fn zero_curvature_is_a_no_op() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let m = em(&[0.4, -1.0], cov.clone());
        let out = downdate(&m, &[0.0, 0.0], &[0.0, 0.0], &EngineConfig::default()).unwrap();
        assert!((out.mean.clone() - m.mean).amax() < 1e-14);
        assert!((out.cov - cov).amax() < 1e-14);
        assert!(out.log_density_ratio.abs() < 1e-14);
    }

    #[test]
    fn duplicated_predictor_uses_eigen_path() {
        // η = (f, f), f | y ~ N(μ, s); both observations Gaussian with unit precision.
        let (mu, s) = (0.3, 0.25);
        let m = em(&[mu, mu], DMatrix::from_element(2, 2, s));
        let (y1, y2) = (0.5, 0.1);
        let out = downdate(&m, &[1.0, 1.0], &[y1, y2], &EngineConfig::default()).unwrap();
        assert!(matches!(out.path, RankPath::Eigen { rank: 1, .. }));
        // Prior precision of f: 1/s - 2; prior mean: (μ/s - y1 - y2) / (1/s - 2).
        let prec = 1.0 / s - 2.0;
        let mean = (mu / s - y1 - y2) / prec;
        assert!((out.mean[0] - mean).abs() < 1e-12 && (out.mean[1] - mean).abs() < 1e-12);
        assert!((out.cov[(0, 1)] - 1.0 / prec).abs() < 1e-12);
    }

    #[test]
    fn over_removal_is_reported() {
        let m = em(&[0.0], DMatrix::from_element(1, 1, 1.0));
        assert!(matches!(
            downdate(&m, &[2.0], &[0.0], &EngineConfig::default()),
            Err(LgocvError::LeaveOutNotPositiveDefinite { .. })
        ));
    }
}
