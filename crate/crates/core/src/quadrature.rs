//! Gauss-Hermite rules and the adaptive one-dimensional predictive integral
//! `∫ π(y|η) N(η; μ, v) dη`.

use crate::error::{LgocvError, Result};
use crate::likelihood::LogLikTerms;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// `π^{-1/4}`
const PIM4: f64 = 0.751_125_544_464_942_5;

/// Largest order before the Hermite recurrence overflows.
pub const MAX_ORDER: usize = 150;

/// Nodes and weights for `∫ e^{-x²} h(x) dx`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Newton iteration on the orthonormal Hermite recurrence.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 || order > MAX_ORDER {
            return Err(LgocvError::Config(format!("Gauss-Hermite order must be in 1..={MAX_ORDER}, got {order}")));
        }
        let n = order;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        if n % 2 == 1 {
            x[m - 1] = 0.0;
        }
        Ok(Self { nodes: x, weights: w })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }
}

/// `log ∫ exp(g(η)) N(η; μ, v) dη` for concave `g`, with nodes placed at the
/// mode of the integrand and scaled by its curvature there. `g` returns the
/// value and the first two derivatives.
pub fn log_gaussian_expectation<G>(g: G, mu: f64, v: f64, rule: &GaussHermite) -> Result<f64>
where
    G: Fn(f64) -> LogLikTerms,
{
    if !(v > 0.0) || !v.is_finite() || !mu.is_finite() {
        return Err(LgocvError::DegenerateQuadrature { variance: v });
    }
    let log_h = |eta: f64| g(eta).value - 0.5 * (LN_2PI + v.ln()) - 0.5 * (eta - mu).powi(2) / v;

    // Newton on the strictly concave log integrand, with step halving.
    let mut eta = mu;
    let mut cur = log_h(eta);
    for _ in 0..200 {
        let t = g(eta);
        let grad = t.grad - (eta - mu) / v;
        let hess = t.hess - 1.0 / v;
        let mut step = -grad / hess;
        let mut moved = false;
        for _ in 0..60 {
            let cand = eta + step;
            let val = log_h(cand);
            if val.is_finite() && val >= cur {
                eta = cand;
                cur = val;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved || step.abs() <= 1e-14 * (1.0 + eta.abs()) {
            break;
        }
    }
    let curvature = 1.0 / v - g(eta).hess;
    let s = 1.0 / curvature.sqrt();
    let scale = std::f64::consts::SQRT_2 * s;
    let peak = log_h(eta);
    if !peak.is_finite() || !s.is_finite() {
        return Err(LgocvError::NonFinite(format!("predictive integrand at η = {eta}")));
    }
    let mut sum = 0.0;
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let lh = log_h(eta + scale * x);
        if lh.is_finite() {
            sum += w * (x * x + lh - peak).exp();
        }
    }
    let out = peak + scale.ln() + sum.ln();
    if !out.is_finite() {
        return Err(LgocvError::NonFinite("predictive integral".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::LikelihoodFamily;

    #[test]
    fn rule_integrates_polynomials() {
        assert!(GaussHermite::new(0).is_err() && GaussHermite::new(MAX_ORDER + 1).is_err());
        let top = GaussHermite::new(MAX_ORDER).unwrap();
        assert!((top.weights.iter().sum::<f64>() - std::f64::consts::PI.sqrt()).abs() < 1e-13);
        let rule = GaussHermite::new(15).unwrap();
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let total: f64 = rule.weights.iter().sum();
        assert!((total - sqrt_pi).abs() < 1e-13);
        // ∫ x^4 e^{-x²} = 3√π/4
        let m4: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m4 - 0.75 * sqrt_pi).abs() < 1e-12);
        let odd: f64 = rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(5)).sum();
        assert!(odd.abs() < 1e-12);
        assert_eq!(GaussHermite::new(1).unwrap().nodes, vec![0.0]);
    }

    #[test]
    fn gaussian_convolution_is_exact() {
        let rule = GaussHermite::new(15).unwrap();
        let hypers = [100f64.ln()];
        let fam = LikelihoodFamily::Gaussian { log_precision: 0 };
        let (y, mu, v) = (0.7, 0.2, 0.3);
        let got = log_gaussian_expectation(|e| fam.terms(y, e, &hypers), mu, v, &rule).unwrap();
        let tot = v + 0.01;
        let exact = -0.5 * (LN_2PI + tot.ln()) - 0.5 * (y - mu).powi(2) / tot;
        assert!(((got - exact) / exact).abs() < 1e-12, "{got} vs {exact}");
    }

    #[test]
    fn poisson_expectation_converges() {
        let fam = LikelihoodFamily::Poisson { offset: 1.0 };
        let f = |e: f64| fam.terms(4.0, e, &[]);
        let a = log_gaussian_expectation(f, 0.5, 0.8, &GaussHermite::new(15).unwrap()).unwrap();
        let b = log_gaussian_expectation(f, 0.5, 0.8, &GaussHermite::new(30).unwrap()).unwrap();
        assert!((a.exp() - b.exp()).abs() <= 1e-6 * b.exp());
    }

    #[test]
    fn rejects_degenerate_variance() {
        let fam = LikelihoodFamily::Exponential;
        let rule = GaussHermite::new(5).unwrap();
        assert!(log_gaussian_expectation(|e| fam.terms(1.0, e, &[]), 0.0, 0.0, &rule).is_err());
    }
}
