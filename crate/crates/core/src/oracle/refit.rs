//! Predictive densities by refitting the model without the left-out data.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::approx::ModeConfig;
use crate::covariance::eta_covariance;
use crate::error::{LgocvError, Result};
use crate::grid::{fit, fit_fixed, Fit, GridConfig};
use crate::groups::GroupSpec;
use crate::model::{HyperPoint, LgmModel};

/// How hyperparameters are handled when refitting.
#[derive(Debug, Clone, PartialEq)]
pub enum HyperMode {
    Fixed(HyperPoint),
    Grid(GridConfig),
}

impl HyperMode {
    pub fn fit(&self, model: &LgmModel) -> Result<Fit> {
        match self {
            HyperMode::Fixed(p) => fit_fixed(model, p, &ModeConfig::default()),
            HyperMode::Grid(cfg) => fit(model, cfg),
        }
    }
}

/// `log ∫ exp(g(η)) N(η; m, v) dη` by the trapezoid rule. A coarse scan of
/// `m ± 60√v` locates the peak of the integrand; the fine rule then covers
/// twelve local widths on each side of it.
pub fn trapezoid_log_expectation<G: Fn(f64) -> f64>(g: G, m: f64, v: f64, points: usize) -> Result<f64> {
    if !(v > 0.0) || !v.is_finite() || points < 3 {
        return Err(LgocvError::DegenerateQuadrature { variance: v });
    }
    let sd = v.sqrt();
    let log_h = |x: f64| {
        let z = (x - m) / sd;
        g(x) - 0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI * v).ln()
    };

    let coarse = 6001;
    let step = 120.0 * sd / (coarse - 1) as f64;
    let (mut peak, mut best) = (m, f64::NEG_INFINITY);
    for k in 0..coarse {
        let x = m - 60.0 * sd + k as f64 * step;
        let l = log_h(x);
        if l > best {
            best = l;
            peak = x;
        }
    }
    if !best.is_finite() {
        return Err(LgocvError::NonFinite("trapezoid integrand".into()));
    }
    // Golden-section refinement within one coarse step.
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (peak - step, peak + step);
    for _ in 0..100 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if log_h(c) > log_h(d) {
            b = d;
        } else {
            a = c;
        }
    }
    peak = 0.5 * (a + b);
    let h2 = 1e-3 * sd;
    let curv = -(log_h(peak + h2) - 2.0 * log_h(peak) + log_h(peak - h2)) / (h2 * h2);
    let width = if curv > 0.0 && curv.is_finite() { (1.0 / curv.sqrt()).min(sd) } else { sd };

    let lo = peak - 12.0 * width;
    let h = 24.0 * width / (points - 1) as f64;
    let logs: Vec<f64> = (0..points)
        .map(|k| {
            let w = if k == 0 || k == points - 1 { 0.5f64 } else { 1.0 };
            w.ln() + log_h(lo + k as f64 * h)
        })
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let out = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + h.ln();
    if out.is_finite() {
        Ok(out)
    } else {
        Err(LgocvError::NonFinite("trapezoid integral".into()))
    }
}

const TRAPEZOID_POINTS: usize = 20_001;

/// `log π(y_i | data)` under a fit in which `y_i` itself carries no weight.
pub fn predictive_from_fit(model: &LgmModel, reduced: &LgmModel, fit: &Fit, i: usize) -> Result<f64> {
    let mut terms = Vec::with_capacity(fit.grid.len());
    for (p, a) in fit.grid.points.iter().zip(&fit.approximations) {
        let em = eta_covariance(reduced, a, &[i])?;
        let lp = trapezoid_log_expectation(
            |e| model.observation_log_density(i, e, &a.hypers),
            em.mean[0],
            em.cov[(0, 0)],
            TRAPEZOID_POINTS,
        )?;
        terms.push(p.weight.ln() + lp);
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
}

/// `log π(y_i | y_{-I})` by refitting without the observations in `group`.
pub fn refit_predictive(model: &LgmModel, i: usize, group: &[usize], mode: &HyperMode) -> Result<f64> {
    if !group.contains(&i) {
        return Err(LgocvError::Config(format!("group of observation {} does not contain it", i + 1)));
    }
    let reduced = model.with_observations_removed(group)?;
    let f = mode.fit(&reduced)?;
    predictive_from_fit(model, &reduced, &f, i)
}

/// Refit-based `log π(y_i | y_{-I_i})` for each target, refitting once per
/// distinct group.
pub fn refit_lgocv(model: &LgmModel, groups: &GroupSpec, targets: &[usize], mode: &HyperMode) -> Result<Vec<f64>> {
    let mut by_group: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
    for &i in targets {
        let g = groups.get(i).ok_or_else(|| LgocvError::Config(format!("observation {} has no group", i + 1)))?;
        by_group.entry(g).or_default().push(i);
    }
    let entries: Vec<(&[usize], Vec<usize>)> = by_group.into_iter().collect();
    let per_group = entries
        .par_iter()
        .map(|(g, members)| {
            let reduced = model.with_observations_removed(g)?;
            let f = mode.fit(&reduced)?;
            members.iter().map(|&i| Ok((i, predictive_from_fit(model, &reduced, &f, i)?))).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let found: BTreeMap<usize, f64> = per_group.into_iter().flatten().collect();
    Ok(targets.iter().map(|i| found[i]).collect())
}
