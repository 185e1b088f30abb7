//! Integration grid over the free hyperparameters.
//!
//! The log posterior `φ(θ) = log π(y|θ) + log π(θ)` is maximized with BFGS on
//! finite-difference gradients, the Hessian at the mode is taken by central
//! differences, and points are laid out on a regular grid in the eigenbasis of
//! the negative Hessian.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::approx::{find_mode, GaussianApprox, ModeConfig};
use crate::error::{LgocvError, Result};
use crate::model::{HyperPoint, LgmModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    /// Spacing in standardized units.
    pub step: f64,
    /// Points whose log posterior falls more than this below the mode are dropped.
    pub drop_thresh: f64,
    pub hessian_step: f64,
    pub gradient_step: f64,
    /// Above this dimension only the mode is used.
    pub max_grid_dim: usize,
    /// Upper bound on steps explored along each half-axis.
    pub max_axis_steps: usize,
    pub max_optimizer_iter: usize,
    pub gradient_tol: f64,
    pub mode: ModeConfig,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            step: 0.5,
            drop_thresh: 6.0,
            hessian_step: 1e-3,
            gradient_step: 1e-4,
            max_grid_dim: 4,
            max_axis_steps: 30,
            max_optimizer_iter: 200,
            gradient_tol: 1e-6,
            mode: ModeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub point: HyperPoint,
    /// Unnormalized log posterior `log π(y|θ) + log π(θ)`.
    pub log_posterior: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGrid {
    pub points: Vec<GridPoint>,
    /// Index of the point with the largest log posterior.
    pub mode_index: usize,
}

impl ThetaGrid {
    /// A one-point grid with weight 1.
    pub fn single(point: HyperPoint, log_posterior: f64) -> Self {
        Self { points: vec![GridPoint { point, log_posterior, weight: 1.0 }], mode_index: 0 }
    }

    pub fn mode(&self) -> &HyperPoint {
        &self.points[self.mode_index].point
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.weight).collect()
    }

    fn from_evaluated(evaluated: Vec<(Vec<f64>, f64, f64)>) -> Self {
        let max = evaluated.iter().map(|e| e.2).fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = evaluated.iter().map(|e| (e.2 - max).exp()).collect();
        let total: f64 = raw.iter().sum();
        let points: Vec<GridPoint> = evaluated
            .into_iter()
            .zip(raw)
            .map(|((theta, log_prior, lp), w)| GridPoint {
                point: HyperPoint { theta, log_prior },
                log_posterior: lp,
                weight: w / total,
            })
            .collect();
        let mode_index = points.iter().position(|p| p.log_posterior == max).unwrap_or(0);
        Self { points, mode_index }
    }

    /// Writes `theta_1..theta_d,log_posterior,weight` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.points.first().map_or(0, |p| p.point.theta.len());
        let mut header: Vec<String> = (1..=dim).map(|k| format!("theta_{k}")).collect();
        header.push("log_posterior".into());
        header.push("weight".into());
        writeln!(out, "{}", header.join(","))?;
        for p in &self.points {
            let mut row: Vec<String> = p.point.theta.iter().map(|v| format!("{v:.17e}")).collect();
            row.push(format!("{:.17e}", p.log_posterior));
            row.push(format!("{:.17e}", p.weight));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Log posterior of `θ` up to a constant.
pub fn log_posterior(model: &LgmModel, theta: &[f64], mode: &ModeConfig) -> Result<f64> {
    let point = model.hyper_point(theta)?;
    let approx = find_mode(model, &point, mode)?;
    Ok(approx.log_evidence + point.log_prior)
}

pub fn build_theta_grid(model: &LgmModel, cfg: &GridConfig) -> Result<ThetaGrid> {
    let start = model.initial_point();
    let phi = |theta: &[f64]| log_posterior(model, theta, &cfg.mode);
    let prior = |theta: &[f64]| model.hyper_point(theta).map(|p| p.log_prior);
    build_grid_with(&start.theta, phi, prior, cfg)
}

/// Grid construction against an arbitrary log posterior `phi`; `log_prior`
/// only fills in the stored prior of each point.
pub fn build_grid_with<F, P>(start: &[f64], phi: F, log_prior: P, cfg: &GridConfig) -> Result<ThetaGrid>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
    P: Fn(&[f64]) -> Result<f64>,
{
    let dim = start.len();
    if dim == 0 {
        let lp = phi(start)?;
        return Ok(ThetaGrid::single(HyperPoint { theta: Vec::new(), log_prior: log_prior(start)? }, lp));
    }
    let (mode, phi_mode) = maximize(start, &phi, cfg)?;
    if dim > cfg.max_grid_dim {
        log::info!("{dim} free hyperparameters; using the posterior mode only");
        return Ok(ThetaGrid::single(HyperPoint { theta: mode.clone(), log_prior: log_prior(&mode)? }, phi_mode));
    }

    let neg_hess = -hessian(&mode, phi_mode, &phi, cfg.hessian_step)?;
    let eig = neg_hess.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(LgocvError::Optimizer(format!(
            "negative Hessian of the log posterior is not positive definite at the mode (eigenvalues {:?})",
            eig.eigenvalues.as_slice()
        )));
    }
    let mut scale = eig.eigenvectors.clone();
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        scale.column_mut(j).scale_mut(1.0 / l.sqrt());
    }
    let to_theta = |z: &[i64]| -> Vec<f64> {
        let zv = DVector::from_iterator(dim, z.iter().map(|&k| k as f64 * cfg.step));
        let t = &scale * zv;
        mode.iter().zip(t.iter()).map(|(m, d)| m + d).collect()
    };

    let mut lo = vec![0i64; dim];
    let mut hi = vec![0i64; dim];
    for axis in 0..dim {
        for (sign, bound) in [(-1i64, &mut lo), (1i64, &mut hi)] {
            let mut k = 0;
            while (k as usize) < cfg.max_axis_steps {
                let mut z = vec![0i64; dim];
                z[axis] = sign * (k + 1);
                match phi(&to_theta(&z)) {
                    Ok(v) if phi_mode - v <= cfg.drop_thresh => k += 1,
                    _ => break,
                }
            }
            bound[axis] = sign * k;
        }
    }

    let mut zs: Vec<Vec<i64>> = vec![Vec::new()];
    for axis in 0..dim {
        zs = zs
            .into_iter()
            .flat_map(|prefix| {
                (lo[axis]..=hi[axis]).map(move |k| {
                    let mut z = prefix.clone();
                    z.push(k);
                    z
                })
            })
            .collect();
    }
    let values: Vec<Result<(Vec<f64>, f64)>> = zs
        .par_iter()
        .map(|z| {
            let theta = to_theta(z);
            let v = if z.iter().all(|&k| k == 0) { phi_mode } else { phi(&theta)? };
            Ok((theta, v))
        })
        .collect();
    let mut evaluated = Vec::new();
    for v in values {
        match v {
            Ok((theta, lp)) if lp.is_finite() && phi_mode - lp <= cfg.drop_thresh => {
                let pr = log_prior(&theta)?;
                evaluated.push((theta, pr, lp));
            }
            Ok(_) => {}
            Err(e) => log::debug!("grid point skipped: {e}"),
        }
    }
    let grid = ThetaGrid::from_evaluated(evaluated);
    log::info!("theta grid with {} points", grid.len());
    Ok(grid)
}

fn gradient<F: Fn(&[f64]) -> Result<f64>>(x: &[f64], phi: &F, h: f64) -> Result<Vec<f64>> {
    let mut g = vec![0.0; x.len()];
    let mut y = x.to_vec();
    for j in 0..x.len() {
        y[j] = x[j] + h;
        let up = phi(&y)?;
        y[j] = x[j] - h;
        let dn = phi(&y)?;
        y[j] = x[j];
        g[j] = (up - dn) / (2.0 * h);
    }
    Ok(g)
}

fn hessian<F: Fn(&[f64]) -> Result<f64>>(x: &[f64], fx: f64, phi: &F, h: f64) -> Result<DMatrix<f64>> {
    let d = x.len();
    let mut hm = DMatrix::zeros(d, d);
    let eval = |shifts: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(j, s) in shifts {
            y[j] += s;
        }
        phi(&y)
    };
    for i in 0..d {
        hm[(i, i)] = (eval(&[(i, h)])? - 2.0 * fx + eval(&[(i, -h)])?) / (h * h);
        for j in 0..i {
            let v = (eval(&[(i, h), (j, h)])? - eval(&[(i, h), (j, -h)])? - eval(&[(i, -h), (j, h)])?
                + eval(&[(i, -h), (j, -h)])?)
                / (4.0 * h * h);
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    Ok(hm)
}

/// BFGS ascent with Armijo backtracking, finished by a few Newton steps on
/// the finite-difference Hessian.
fn maximize<F: Fn(&[f64]) -> Result<f64>>(start: &[f64], phi: &F, cfg: &GridConfig) -> Result<(Vec<f64>, f64)> {
    let d = start.len();
    let h = cfg.gradient_step;
    let mut x = DVector::from_column_slice(start);
    let mut fx = phi(x.as_slice())?;
    let mut g = DVector::from_vec(gradient(x.as_slice(), phi, h)?);
    // Inverse Hessian approximation of -phi.
    let mut hinv = DMatrix::<f64>::identity(d, d);
    let mut converged = false;
    for _ in 0..cfg.max_optimizer_iter {
        if g.amax() < cfg.gradient_tol {
            converged = true;
            break;
        }
        let mut dir = &hinv * &g;
        if dir.dot(&g) <= 0.0 {
            hinv = DMatrix::identity(d, d);
            dir = g.clone();
        }
        let mut t = 1.0;
        let slope = dir.dot(&g);
        let mut next = None;
        for _ in 0..50 {
            let cand = &x + &dir * t;
            if let Ok(fc) = phi(cand.as_slice()) {
                if fc.is_finite() && fc >= fx + 1e-4 * t * slope {
                    next = Some((cand, fc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fn_)) = next else {
            converged = g.amax() < 1e3 * cfg.gradient_tol;
            break;
        };
        let gn = DVector::from_vec(gradient(xn.as_slice(), phi, h)?);
        let s = &xn - &x;
        // y is the change in the gradient of -phi.
        let y = &g - &gn;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(d, d);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            hinv = &left * &hinv * &right + &s * s.transpose() * rho;
        }
        let small = (fn_ - fx).abs() <= 1e-14 * fx.abs().max(1.0) && s.amax() < 1e-10;
        x = xn;
        fx = fn_;
        g = gn;
        if small {
            converged = true;
            break;
        }
    }
    if !converged && g.amax() >= 1e-3 {
        return Err(LgocvError::Optimizer(format!(
            "no convergence after {} iterations (|grad| = {:e})",
            cfg.max_optimizer_iter,
            g.amax()
        )));
    }

    for _ in 0..5 {
        let neg_hess = -hessian(x.as_slice(), fx, phi, cfg.hessian_step)?;
        let Some(chol) = neg_hess.cholesky() else { break };
        let cand = &x + chol.solve(&g);
        match phi(cand.as_slice()) {
            Ok(fc) if fc >= fx => {
                let done = (&cand - &x).amax() < 1e-12;
                x = cand;
                fx = fc;
                g = DVector::from_vec(gradient(x.as_slice(), phi, h)?);
                if done {
                    break;
                }
            }
            _ => break,
        }
    }
    Ok((x.iter().copied().collect(), fx))
}

/// Gaussian approximations at every grid point.
#[derive(Debug, Clone)]
pub struct Fit {
    pub grid: ThetaGrid,
    pub approximations: Vec<GaussianApprox>,
}

impl Fit {
    pub fn mode_approximation(&self) -> &GaussianApprox {
        &self.approximations[self.grid.mode_index]
    }

    /// Grid-mixed posterior mean of the latent field.
    pub fn latent_mean(&self) -> Vec<f64> {
        let d = self.approximations[0].latent_dim();
        let mut out = vec![0.0; d];
        for (p, a) in self.grid.points.iter().zip(&self.approximations) {
            for (o, m) in out.iter_mut().zip(&a.mean) {
                *o += p.weight * m;
            }
        }
        out
    }
}

/// Builds the grid and the Gaussian approximation at each of its points.
pub fn fit(model: &LgmModel, cfg: &GridConfig) -> Result<Fit> {
    let grid = build_theta_grid(model, cfg)?;
    fit_on_grid(model, grid, &cfg.mode)
}

/// Fits at a single hyperparameter point (weight 1).
pub fn fit_fixed(model: &LgmModel, point: &HyperPoint, mode: &ModeConfig) -> Result<Fit> {
    let approx = find_mode(model, point, mode)?;
    let grid = ThetaGrid::single(point.clone(), approx.log_evidence + point.log_prior);
    Ok(Fit { grid, approximations: vec![approx] })
}

pub fn fit_on_grid(model: &LgmModel, grid: ThetaGrid, mode: &ModeConfig) -> Result<Fit> {
    let approximations =
        grid.points.par_iter().map(|p| find_mode(model, &p.point, mode)).collect::<Result<Vec<_>>>()?;
    Ok(Fit { grid, approximations })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dimensional_grid() {
        let g = build_grid_with(&[], |_| Ok(-3.0), |_| Ok(0.0), &GridConfig::default()).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.points[0].weight, 1.0);
    }

    #[test]
    fn symmetric_posterior_gives_symmetric_weights() {
        let phi = |t: &[f64]| {
            let x = t[0] - 1.25;
            Ok(-0.5 * x * x - 0.1 * x.powi(4))
        };
        let g = build_grid_with(&[0.0], phi, |_| Ok(0.0), &GridConfig::default()).unwrap();
        let mode = g.mode().theta[0];
        assert!((mode - 1.25).abs() < 1e-10);
        let n = g.len();
        assert!(n >= 5 && n % 2 == 1);
        for k in 0..n / 2 {
            assert!((g.points[k].weight - g.points[n - 1 - k].weight).abs() < 1e-10);
        }
        let total: f64 = g.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_posterior_grid_is_standardized() {
        // φ = -½ (θ-m)ᵀ H (θ-m) with correlated H.
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
        let m = DVector::from_vec(vec![0.3, -0.7]);
        let phi = |t: &[f64]| {
            let d = DVector::from_column_slice(t) - &m;
            Ok(-0.5 * d.dot(&(&h * &d)))
        };
        let cfg = GridConfig::default();
        let g = build_grid_with(&[0.0, 0.0], phi, |_| Ok(0.0), &cfg).unwrap();
        let mode = &g.mode().theta;
        assert!((mode[0] - 0.3).abs() < 1e-8 && (mode[1] + 0.7).abs() < 1e-8);
        for p in &g.points {
            assert!(p.log_posterior >= -cfg.drop_thresh - 1e-9);
        }
        // Weighted mean of the grid recovers the mode.
        let mean0: f64 = g.points.iter().map(|p| p.weight * p.point.theta[0]).sum();
        assert!((mean0 - 0.3).abs() < 1e-8);
    }

    #[test]
    fn indefinite_hessian_is_an_error() {
        // Flat direction in the second coordinate.
        let phi = |t: &[f64]| Ok(-(t[0] * t[0]));
        assert!(build_grid_with(&[0.5, 0.0], phi, |_| Ok(0.0), &GridConfig::default()).is_err());
    }
}
