//! Gaussian approximation of `π(f | θ, y)` at the conditional mode.
//!
//! Newton iterations on `-½ fᵀPf + Σ g_i(η_i)` with the likelihood expanded
//! to second order at the current predictor. Linear constraints are imposed
//! by conditioning each Newton target on `C f = e`.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{LgocvError, Result};
use crate::model::{HyperPoint, LgmModel};
use crate::sparse::{CsrMatrix, LdlFactor, SymbolicLdl, SymmetricMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeConfig {
    /// Convergence threshold on `max |Δη|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ModeConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100 }
    }
}

/// Pieces needed to apply the constraint correction
/// `Σ = Q⁻¹ - W G⁻¹ Wᵀ`, with `W = Q⁻¹Cᵀ` and `G = C W`.
#[derive(Debug, Clone)]
pub struct ConstraintCorrection {
    pub qinv_ct: DMatrix<f64>,
    pub gram: Cholesky<f64, Dyn>,
}

#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub point: HyperPoint,
    /// Internal-scale values of every hyperparameter.
    pub hypers: Vec<f64>,
    /// Conditional mode `f*`.
    pub mean: Vec<f64>,
    /// `η* = A f*`.
    pub eta: Vec<f64>,
    /// `c_i = -g_i''(η*_i)`; zero for inactive observations.
    pub curvature: Vec<f64>,
    /// `b_i = g_i'(η*_i) + c_i η*_i`; zero for inactive observations.
    pub linear: Vec<f64>,
    /// Factor of `Q = P + Aᵀ diag(c) A`.
    pub factor: Arc<LdlFactor>,
    pub constraint: Option<ConstraintCorrection>,
    pub iterations: usize,
    pub log_evidence: f64,
}

impl GaussianApprox {
    /// `Σ_f v`, the constrained posterior covariance applied to `v`.
    pub fn covariance_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut x = self.factor.solve(v);
        if let Some(c) = &self.constraint {
            let wtv = c.qinv_ct.tr_mul(&DVector::from_column_slice(v));
            let coef = c.gram.solve(&wtv);
            let corr = &c.qinv_ct * coef;
            for (xi, ci) in x.iter_mut().zip(corr.iter()) {
                *xi -= ci;
            }
        }
        x
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.len()
    }
}

/// Assembles `P + Aᵀ diag(c) A` on a pattern fixed at construction.
struct PrecisionAssembler<'a> {
    prior: &'a SymmetricMatrix,
    design: &'a CsrMatrix,
    symbolic: SymbolicLdl,
}

impl<'a> PrecisionAssembler<'a> {
    fn new(prior: &'a SymmetricMatrix, design: &'a CsrMatrix) -> Self {
        let zero = vec![0.0; design.nrows()];
        let symbolic = SymbolicLdl::analyze(&Self::assemble_with(prior, design, &zero));
        Self { prior, design, symbolic }
    }

    fn assemble(&self, c: &[f64]) -> SymmetricMatrix {
        Self::assemble_with(self.prior, self.design, c)
    }

    fn assemble_with(prior: &SymmetricMatrix, design: &CsrMatrix, c: &[f64]) -> SymmetricMatrix {
        let mut entries = Vec::with_capacity(prior.nnz() + 4 * design.nnz());
        for j in 0..prior.dim() {
            let (rows, vals) = prior.column(j);
            for (&r, &v) in rows.iter().zip(vals) {
                if r <= j {
                    entries.push((r, j, v));
                }
            }
        }
        for (i, &ci) in c.iter().enumerate() {
            let (cols, vals) = design.row(i);
            for (p, (&ja, &va)) in cols.iter().zip(vals).enumerate() {
                for (&jb, &vb) in cols[p..].iter().zip(&vals[p..]) {
                    entries.push((ja.min(jb), ja.max(jb), ci * va * vb));
                }
            }
        }
        SymmetricMatrix::from_triplets(prior.dim(), &entries)
    }
}

struct NewtonStep {
    target: Vec<f64>,
    factor: LdlFactor,
    constraint: Option<ConstraintCorrection>,
    curvature: Vec<f64>,
    linear: Vec<f64>,
}

fn newton_step(model: &LgmModel, assembler: &PrecisionAssembler, hypers: &[f64], eta: &[f64]) -> Result<NewtonStep> {
    let terms = model.loglik_terms(hypers, eta);
    let curvature: Vec<f64> = terms.iter().map(|t| -t.hess).collect();
    let linear: Vec<f64> = terms.iter().zip(&curvature).zip(eta).map(|((t, c), e)| t.grad + c * e).collect();
    if curvature.iter().chain(&linear).any(|v| !v.is_finite()) {
        return Err(LgocvError::NonFinite("likelihood derivatives at the current predictor".into()));
    }
    let q = assembler.assemble(&curvature);
    let factor = assembler.symbolic.factorize(&q)?;
    let mut target = factor.solve(&model.design().transpose_mul_vec(&linear));
    let constraint = constraint_correction(model, &factor)?;
    if let Some(c) = &constraint {
        let cons = model.constraints();
        let resid = &cons.matrix * DVector::from_column_slice(&target) - &cons.rhs;
        let shift = &c.qinv_ct * c.gram.solve(&resid);
        for (t, s) in target.iter_mut().zip(shift.iter()) {
            *t -= s;
        }
    }
    Ok(NewtonStep { target, factor, constraint, curvature, linear })
}

fn constraint_correction(model: &LgmModel, factor: &LdlFactor) -> Result<Option<ConstraintCorrection>> {
    let cons = model.constraints();
    if cons.is_empty() {
        return Ok(None);
    }
    let d = model.latent_size();
    let k = cons.len();
    let mut w = DMatrix::zeros(d, k);
    for r in 0..k {
        let row: Vec<f64> = cons.matrix.row(r).iter().copied().collect();
        w.set_column(r, &DVector::from_vec(factor.solve(&row)));
    }
    let gram = &cons.matrix * &w;
    let gram = Cholesky::new(0.5 * (&gram + gram.transpose())).ok_or(LgocvError::RankDeficientConstraints)?;
    Ok(Some(ConstraintCorrection { qinv_ct: w, gram }))
}

fn objective(model: &LgmModel, prior: &SymmetricMatrix, hypers: &[f64], f: &[f64], eta: &[f64]) -> f64 {
    let g: f64 = model.loglik_terms(hypers, eta).iter().map(|t| t.value).sum();
    g - 0.5 * prior.quadratic_form(f)
}

/// Finds the conditional mode at `point` starting from `f = 0`.
pub fn find_mode(model: &LgmModel, point: &HyperPoint, cfg: &ModeConfig) -> Result<GaussianApprox> {
    find_mode_from(model, point, None, cfg)
}

/// Finds the conditional mode starting from `init` (or zero).
pub fn find_mode_from(
    model: &LgmModel,
    point: &HyperPoint,
    init: Option<&[f64]>,
    cfg: &ModeConfig,
) -> Result<GaussianApprox> {
    let hypers = model.hyper_values(point);
    let prior = model.prior_precision_from_values(&hypers)?;
    let design = model.design();
    let d = model.latent_size();
    let assembler = PrecisionAssembler::new(&prior, design);

    let mut f = match init {
        Some(v) if v.len() == d => v.to_vec(),
        Some(v) => {
            return Err(LgocvError::InvalidHyper(format!("initial latent vector has length {}, expected {d}", v.len())))
        }
        None => vec![0.0; d],
    };
    let mut eta = design.mul_vec(&f);
    let mut obj = objective(model, &prior, &hypers, &f, &eta);
    let constrained = !model.constraints().is_empty();
    let mut change = f64::INFINITY;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let step = newton_step(model, &assembler, &hypers, &eta)?;
        let mut t = 1.0;
        let mut accepted = None;
        // The start need not satisfy the constraints, so the first step is taken in full.
        let must_accept = constrained && iterations == 1;
        for _ in 0..60 {
            let cand: Vec<f64> = f.iter().zip(&step.target).map(|(a, b)| a + t * (b - a)).collect();
            let cand_eta = design.mul_vec(&cand);
            let cand_obj = objective(model, &prior, &hypers, &cand, &cand_eta);
            if cand_obj.is_finite() && (must_accept || cand_obj >= obj - 1e-12 * (1.0 + obj.abs())) {
                accepted = Some((cand, cand_eta, cand_obj));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cand_eta, cand_obj)) = accepted else {
            // No ascent possible along the Newton direction: already at the mode.
            change = 0.0;
            break;
        };
        change = eta.iter().zip(&cand_eta).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        f = cand;
        eta = cand_eta;
        obj = cand_obj;
        if change <= cfg.tol {
            break;
        }
    }
    if change > cfg.tol {
        return Err(LgocvError::ModeNotConverged { iterations, change, theta: point.theta.clone() });
    }

    let step = newton_step(model, &assembler, &hypers, &eta)?;
    let mean = step.target;
    let eta = design.mul_vec(&mean);
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(LgocvError::NonFinite("conditional mode".into()));
    }
    let mut approx = GaussianApprox {
        point: point.clone(),
        hypers,
        mean,
        eta,
        curvature: step.curvature,
        linear: step.linear,
        factor: Arc::new(step.factor),
        constraint: step.constraint,
        iterations,
        log_evidence: 0.0,
    };
    approx.log_evidence = log_evidence(model, &prior, &approx)?;
    Ok(approx)
}

/// Laplace approximation of `log π(y | θ)` under the constrained prior.
///
/// Intrinsic blocks contribute `τ^{r/2}` but not the pseudo-determinant of
/// their structure matrix, which does not depend on `θ`. Constraint rows that
/// mix several components enter the posterior normalization only.
fn log_evidence(model: &LgmModel, prior: &SymmetricMatrix, approx: &GaussianApprox) -> Result<f64> {
    let hypers = &approx.hypers;
    let sum_g: f64 = (0..model.n_observations())
        .filter(|&i| model.is_active(i))
        .map(|i| model.observation_log_density(i, approx.eta[i], hypers))
        .sum();
    let quad = prior.quadratic_form(&approx.mean);

    let cons = model.constraints();
    let d = model.latent_size();
    let k = cons.len();
    let comps = model.components();

    // Which components each constraint row touches.
    let mut touched: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (r, t) in touched.iter_mut().enumerate() {
        for j in 0..d {
            if cons.matrix[(r, j)] != 0.0 {
                let c = model.component_of(j);
                if t.last() != Some(&c) {
                    t.push(c);
                }
            }
        }
    }
    let proper_rows: Vec<usize> = (0..k).filter(|&r| touched[r].iter().all(|&c| !comps[c].is_intrinsic())).collect();

    let p_prop = model.proper_prior_precision(hypers)?;
    let prop_factor = LdlFactor::new(&p_prop)?;
    let mut prior_log_det = prop_factor.log_det();
    let mut prior_quad_shift = 0.0;
    let mut log_cct_k = 0.0;
    if !proper_rows.is_empty() {
        let kk = proper_rows.len();
        let ck = DMatrix::from_fn(kk, d, |r, j| cons.matrix[(proper_rows[r], j)]);
        let ek = DVector::from_fn(kk, |r, _| cons.rhs[proper_rows[r]]);
        let mut w = DMatrix::zeros(d, kk);
        for r in 0..kk {
            let row: Vec<f64> = ck.row(r).iter().copied().collect();
            w.set_column(r, &DVector::from_vec(prop_factor.solve(&row)));
        }
        let g = &ck * &w;
        let g = Cholesky::new(0.5 * (&g + g.transpose())).ok_or(LgocvError::RankDeficientConstraints)?;
        prior_log_det += g.ln_determinant();
        prior_quad_shift = ek.dot(&g.solve(&ek));
        log_cct_k = Cholesky::new(&ck * ck.transpose()).ok_or(LgocvError::RankDeficientConstraints)?.ln_determinant();
    }

    let mut d_eff = 0usize;
    for (ci, c) in comps.iter().enumerate() {
        if c.is_intrinsic() {
            let own = touched.iter().filter(|t| t.as_slice() == [ci]).count();
            let rank = c.size - c.null_space_dim().max(own);
            d_eff += rank;
            let log_tau = hypers[c.log_precision_index().expect("intrinsic components carry a precision")];
            prior_log_det += rank as f64 * log_tau;
        } else {
            d_eff += c.size;
        }
    }
    d_eff -= proper_rows.len();

    let mut post_log_det = approx.factor.log_det();
    let mut log_cct = 0.0;
    if let Some(c) = &approx.constraint {
        post_log_det += c.gram.ln_determinant();
        log_cct = Cholesky::new(&cons.matrix * cons.matrix.transpose())
            .ok_or(LgocvError::RankDeficientConstraints)?
            .ln_determinant();
    }

    let value = sum_g - 0.5 * (quad - prior_quad_shift) + 0.5 * prior_log_det - 0.5 * post_log_det
        + 0.5 * (log_cct - log_cct_k)
        + 0.5 * ((d - k) as f64 - d_eff as f64) * LN_2PI;
    if !value.is_finite() {
        return Err(LgocvError::NonFinite("log evidence".into()));
    }
    Ok(value)
}

/// `max |∇|` of the objective at the approximation's mean, projected onto the
/// constraint null space. Zero at an exact mode.
pub fn stationarity_residual(model: &LgmModel, approx: &GaussianApprox) -> Result<f64> {
    let prior = model.prior_precision_from_values(&approx.hypers)?;
    let terms = model.loglik_terms(&approx.hypers, &approx.eta);
    let grads: Vec<f64> = terms.iter().map(|t| t.grad).collect();
    let pf = prior.mul_vec(&approx.mean);
    let mut r = DVector::from_iterator(
        pf.len(),
        model.design().transpose_mul_vec(&grads).into_iter().zip(pf).map(|(a, b)| a - b),
    );
    let cons = model.constraints();
    if !cons.is_empty() {
        let cct = Cholesky::new(&cons.matrix * cons.matrix.transpose()).ok_or(LgocvError::RankDeficientConstraints)?;
        let proj = cons.matrix.tr_mul(&cct.solve(&(&cons.matrix * &r)));
        r -= proj;
    }
    Ok(r.amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::component::{ComponentKind, LatentComponent};
    use crate::likelihood::LikelihoodFamily;
    use crate::model::{HyperPrior, LgmModelBuilder, Term, Transform};

    /// Dense `log N(y; 0, S)`.
    fn log_mvn(y: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
        let chol = Cholesky::new(s.clone()).unwrap();
        let n = y.len() as f64;
        -0.5 * (n * LN_2PI + chol.ln_determinant() + y.dot(&chol.solve(y)))
    }

    #[test]
    fn gaussian_evidence_matches_marginal_likelihood() {
        let mut b = LgmModelBuilder::new();
        let tau = b.free_hyper("tau", Transform::Log, 0.3, HyperPrior::default());
        let rho = b.free_hyper("rho", Transform::Atanh, 0.5, HyperPrior::default());
        let obs = b.fixed_hyper("obs", Transform::Log, 4.0).unwrap();
        let beta = b.component(LatentComponent::new("beta", ComponentKind::Fixed { precision: 0.5 }, 1));
        let u = b.component(LatentComponent::new("u", ComponentKind::Ar1 { log_precision: tau, rho }, 4));
        let ys = [0.3, -1.2, 0.8, 2.0, 0.1];
        for (i, &y) in ys.iter().enumerate() {
            b.observation(
                y,
                LikelihoodFamily::Gaussian { log_precision: obs },
                vec![Term::new(beta, 0, 1.0), Term::new(u, i % 4, 1.0 + 0.1 * i as f64)],
            );
        }
        let m = b.build().unwrap();
        let p = m.hyper_point(&[0.3, 0.5]).unwrap();
        let approx = find_mode(&m, &p, &ModeConfig::default()).unwrap();

        let prec = m.assemble_prior_precision(&p).unwrap().to_dense();
        let a = m.design().to_dense();
        let s = &a * prec.try_inverse().unwrap() * a.transpose() + DMatrix::identity(5, 5) * 0.25;
        let exact = log_mvn(&DVector::from_row_slice(&ys), &s);
        assert!((approx.log_evidence - exact).abs() < 1e-9, "{} vs {exact}", approx.log_evidence);
        assert!(stationarity_residual(&m, &approx).unwrap() < 1e-8);
    }

    #[test]
    fn intrinsic_evidence_up_to_structure_constant() {
        let n = 5;
        let mut b = LgmModelBuilder::new();
        let tau = b.free_hyper("tau", Transform::Log, 0.0, HyperPrior::default());
        let obs = b.fixed_hyper("obs", Transform::Log, 2.0).unwrap();
        let beta = b.component(LatentComponent::new("beta", ComponentKind::Fixed { precision: 0.1 }, 1));
        let r = b.component(LatentComponent::new("r", ComponentKind::Rw1 { log_precision: tau, cyclic: false }, n));
        let ys = [1.0, 0.5, -0.3, 0.2, 1.4, 0.9];
        for (i, &y) in ys.iter().enumerate() {
            b.observation(
                y,
                LikelihoodFamily::Gaussian { log_precision: obs },
                vec![Term::new(beta, 0, 1.0), Term::new(r, i % n, 1.0)],
            );
        }
        let m = b.build().unwrap();
        let theta = 0.7f64;
        let p = m.hyper_point(&[theta]).unwrap();
        let approx = find_mode(&m, &p, &ModeConfig::default()).unwrap();

        // Prior covariance: 10 for beta, pseudo-inverse of τR for the walk.
        let prec = m.assemble_prior_precision(&p).unwrap().to_dense();
        let walk = prec.view((1, 1), (n, n)).into_owned();
        let eig = walk.clone().symmetric_eigen();
        let mut cov = DMatrix::zeros(n + 1, n + 1);
        cov[(0, 0)] = 10.0;
        let mut log_pdet = 0.0;
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam > 1e-9 {
                let v = eig.eigenvectors.column(k);
                let outer = v * v.transpose() / lam;
                let mut block = cov.view_mut((1, 1), (n, n));
                block += outer;
                log_pdet += (lam / theta.exp()).ln();
            }
        }
        let a = m.design().to_dense();
        let s = &a * cov * a.transpose() + DMatrix::identity(6, 6) * 0.5;
        let exact = log_mvn(&DVector::from_row_slice(&ys), &s);
        assert!((approx.log_evidence + 0.5 * log_pdet - exact).abs() < 1e-8);
        let sum: f64 = approx.mean[1..].iter().sum();
        assert!(sum.abs() < 1e-10);
    }

    #[test]
    fn poisson_mode_is_stationary() {
        let mut b = LgmModelBuilder::new();
        let tau = b.free_hyper("tau", Transform::Log, 0.0, HyperPrior::default());
        let beta = b.component(LatentComponent::new("beta", ComponentKind::Fixed { precision: 1e-4 }, 1));
        let s = b.component(LatentComponent::new("s", ComponentKind::Iid { log_precision: tau }, 3));
        for (i, y) in [0.0, 3.0, 12.0, 7.0, 1.0, 40.0].into_iter().enumerate() {
            b.observation(
                y,
                LikelihoodFamily::Poisson { offset: 1.0 },
                vec![Term::new(beta, 0, 1.0), Term::new(s, i % 3, 1.0)],
            );
        }
        let m = b.build().unwrap();
        let approx = find_mode(&m, &m.hyper_point(&[1.0]).unwrap(), &ModeConfig::default()).unwrap();
        assert!(stationarity_residual(&m, &approx).unwrap() < 1e-6);
        let warm = find_mode_from(&m, &approx.point, Some(&approx.mean), &ModeConfig::default()).unwrap();
        assert!(warm.iterations <= 1);
    }

    fn poisson_toy() -> LgmModel {
        let mut b = LgmModelBuilder::new();
        let mu = b.component(LatentComponent::new("mu", ComponentKind::Fixed { precision: 1.0 }, 1));
        b.observation(1.0, LikelihoodFamily::Poisson { offset: 1.0 }, vec![Term::new(mu, 0, 1.0)]);
        b.build().unwrap()
    }

    #[test]
    fn poisson_toy_mode_and_precision() {
        let m = poisson_toy();
        let approx = find_mode(&m, &m.hyper_point(&[]).unwrap(), &ModeConfig::default()).unwrap();
        assert!(approx.mean[0].abs() < 1e-12);
        assert!((approx.curvature[0] - 1.0).abs() < 1e-12);
        assert!((approx.factor.log_det() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn poisson_toy_evidence_close_to_quadrature() {
        // ∫ Poisson(1 | e^μ) N(μ; 0, 1) dμ by the trapezoid rule on a wide grid.
        let (lo, hi, k) = (-12.0, 12.0, 200_001);
        let h = (hi - lo) / (k - 1) as f64;
        let mut sum = 0.0;
        for j in 0..k {
            let x = lo + j as f64 * h;
            let w = if j == 0 || j == k - 1 { 0.5 } else { 1.0 };
            sum += w * (x - x.exp() - 0.5 * x * x - 0.5 * LN_2PI).exp();
        }
        let exact = (sum * h).ln();
        let m = poisson_toy();
        let approx = find_mode(&m, &m.hyper_point(&[]).unwrap(), &ModeConfig::default()).unwrap();
        // A single count carries little information, so the Laplace error is
        // about half a percent here.
        let rel = ((approx.log_evidence - exact) / exact).abs();
        assert!(rel < 1e-2, "relative error {rel}");
    }

    #[test]
    fn evidence_invariant_to_latent_relabeling() {
        let build = |order: [usize; 2]| {
            let mut b = LgmModelBuilder::new();
            let tau = b.free_hyper("tau", Transform::Log, 0.0, HyperPrior::default());
            let mut ids = [0; 2];
            for &o in &order {
                ids[o] = if o == 0 {
                    b.component(LatentComponent::new("s", ComponentKind::Iid { log_precision: tau }, 3))
                } else {
                    b.component(LatentComponent::new("beta", ComponentKind::Fixed { precision: 1e-4 }, 1))
                };
            }
            for (i, y) in [2.0, 0.0, 5.0, 1.0, 3.0, 4.0].into_iter().enumerate() {
                b.observation(
                    y,
                    LikelihoodFamily::Poisson { offset: 1.5 },
                    vec![Term::new(ids[0], i % 3, 1.0), Term::new(ids[1], 0, 1.0)],
                );
            }
            let m = b.build().unwrap();
            find_mode(&m, &m.hyper_point(&[0.4]).unwrap(), &ModeConfig::default()).unwrap().log_evidence
        };
        let a = build([0, 1]);
        let b = build([1, 0]);
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
    }
}
