//! Leave-future-out cross-validation: predict `y_t` from `y_0 … y_{t-k}`.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::refit::{predictive_from_fit, HyperMode};
use crate::error::{LgocvError, Result};
use crate::model::LgmModel;

/// Mean log predictive density for each horizon `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LfocvCurve {
    pub ks: Vec<usize>,
    pub utilities: Vec<f64>,
    /// Per horizon, the log densities in the order of the test indices.
    pub log_densities: Vec<Vec<f64>>,
}

impl LfocvCurve {
    /// Number of distinct refits needed for `ks` over `test`.
    pub fn refit_count(ks: &[usize], test: &[usize]) -> usize {
        let mut ends = std::collections::BTreeSet::new();
        for &t in test {
            for &k in ks {
                if t >= k {
                    ends.insert(t - k);
                }
            }
        }
        ends.len()
    }
}

/// LFOCV at one horizon. Observations are ordered in time by index.
pub fn lfocv(model: &LgmModel, k: usize, test: &[usize], mode: &HyperMode) -> Result<f64> {
    Ok(lfocv_curve(model, &[k], test, mode)?.utilities[0])
}

/// LFOCV at several horizons, sharing one refit per history end.
pub fn lfocv_curve(model: &LgmModel, ks: &[usize], test: &[usize], mode: &HyperMode) -> Result<LfocvCurve> {
    let n = model.n_observations();
    if test.is_empty() || ks.is_empty() {
        return Err(LgocvError::Config("empty test set or horizon list".into()));
    }
    if let Some(&index) = test.iter().find(|&&t| t >= n) {
        return Err(LgocvError::IndexOutOfRange { index, n });
    }
    // History end h (inclusive) -> targets t = h + k.
    let mut plan: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &k in ks {
        if k == 0 {
            return Err(LgocvError::Config("horizon must be at least 1".into()));
        }
        for &t in test {
            if t < k {
                return Err(LgocvError::InsufficientHistory(format!(
                    "observation {} has no data {k} steps before it",
                    t + 1
                )));
            }
            plan.entry(t - k).or_default().push(t);
        }
    }
    let ends: Vec<(usize, Vec<usize>)> = plan.into_iter().collect();
    let results = ends
        .par_iter()
        .map(|(h, targets)| {
            let history: Vec<usize> = (0..=*h).collect();
            let reduced = model.with_active_set(&history)?;
            let f = mode.fit(&reduced)?;
            let mut out = Vec::with_capacity(targets.len());
            for &t in targets {
                out.push(((*h, t), predictive_from_fit(model, &reduced, &f, t)?));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let table: BTreeMap<(usize, usize), f64> = results.into_iter().flatten().collect();
    let mut utilities = Vec::with_capacity(ks.len());
    let mut log_densities = Vec::with_capacity(ks.len());
    for &k in ks {
        let lds: Vec<f64> = test.iter().map(|&t| table[&(t - k, t)]).collect();
        utilities.push(lds.iter().sum::<f64>() / lds.len() as f64);
        log_densities.push(lds);
    }
    Ok(LfocvCurve { ks: ks.to_vec(), utilities, log_densities })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::component::{ComponentKind, LatentComponent};
    use crate::likelihood::LikelihoodFamily;
    use crate::model::{LgmModelBuilder, Term, Transform};

    #[test]
    fn one_step_matches_kalman_filter() {
        let (tau, rho, obs_prec) = (0.19f64, 0.9f64, 4.0f64);
        let ys = [0.3, 1.1, 0.4, -0.6, -1.3, -0.2, 0.8, 1.9, 1.2, 0.1];
        let mut b = LgmModelBuilder::new();
        let lt = b.fixed_hyper("tau", Transform::Log, tau).unwrap();
        let r = b.fixed_hyper("rho", Transform::Atanh, rho).unwrap();
        let lo = b.fixed_hyper("obs", Transform::Log, obs_prec).unwrap();
        let u = b.component(LatentComponent::new("u", ComponentKind::Ar1 { log_precision: lt, rho: r }, ys.len()));
        for (i, &y) in ys.iter().enumerate() {
            b.observation(y, LikelihoodFamily::Gaussian { log_precision: lo }, vec![Term::new(u, i, 1.0)]);
        }
        let m = b.build().unwrap();
        let test: Vec<usize> = (5..10).collect();
        let mode = HyperMode::Fixed(m.hyper_point(&[]).unwrap());
        let got = lfocv(&m, 1, &test, &mode).unwrap();

        // Filter: state mean/variance after each observation.
        let (mut mean, mut var) = (0.0, 1.0 / tau);
        let mut total = 0.0;
        for (t, &y) in ys.iter().enumerate() {
            if t > 0 {
                mean *= rho;
                var = rho * rho * var + (1.0 - rho * rho) / tau;
            }
            let s = var + 1.0 / obs_prec;
            if t >= 5 {
                total += -0.5 * (2.0 * std::f64::consts::PI * s).ln() - 0.5 * (y - mean).powi(2) / s;
            }
            let gain = var / s;
            mean += gain * (y - mean);
            var *= 1.0 - gain;
        }
        let expected = total / 5.0;
        assert!((got - expected).abs() < 1e-6 * expected.abs(), "{got} vs {expected}");

        assert!(matches!(lfocv(&m, 11, &test, &mode), Err(LgocvError::InsufficientHistory(_))));
        assert_eq!(LfocvCurve::refit_count(&[1, 2], &test), 6);
    }
}
