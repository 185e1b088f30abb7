//! Observation likelihoods `π(y_i | η_i, θ)` and their exact derivatives in `η_i`.

use statrs::function::gamma::ln_gamma;

use crate::error::{LgocvError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Response family for a single observation. Hyperparameter references are
/// indices into the model's hyperparameter table.
#[derive(Debug, Clone, PartialEq)]
pub enum LikelihoodFamily {
    /// `y ~ N(η, 1/τ)`, with `log τ` read from hyperparameter `log_precision`.
    Gaussian { log_precision: usize },
    /// `y ~ Poisson(E e^η)`.
    Poisson { offset: f64 },
    /// `y ~ Binomial(n, 1/(1+e^{-η}))`.
    Binomial { trials: u32 },
    /// `y ~ Exponential` with mean `e^η`.
    Exponential,
}

/// Value, first and second derivative of `g(η) = log π(y | η, θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikTerms {
    pub value: f64,
    pub grad: f64,
    pub hess: f64,
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl LikelihoodFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Gaussian { .. } => "gaussian",
            Self::Poisson { .. } => "poisson",
            Self::Binomial { .. } => "binomial",
            Self::Exponential => "exponential",
        }
    }

    /// Checks the response and family parameters.
    pub fn check(&self, index: usize, y: f64) -> Result<()> {
        let ok = y.is_finite()
            && match *self {
                Self::Gaussian { .. } => true,
                Self::Poisson { offset } => {
                    if !(offset > 0.0 && offset.is_finite()) {
                        return Err(LgocvError::InvalidModel(format!(
                            "observation {index}: Poisson offset must be positive, got {offset}"
                        )));
                    }
                    y >= 0.0 && y.fract() == 0.0
                }
                Self::Binomial { trials } => {
                    if trials == 0 {
                        return Err(LgocvError::InvalidModel(format!(
                            "observation {index}: binomial trial count must be at least 1"
                        )));
                    }
                    y >= 0.0 && y <= trials as f64 && y.fract() == 0.0
                }
                Self::Exponential => y > 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(LgocvError::OutOfSupport { index, y, family: self.name() })
        }
    }

    /// Full log-density including normalizing constants.
    pub fn log_density(&self, y: f64, eta: f64, hypers: &[f64]) -> f64 {
        self.terms(y, eta, hypers).value
    }

    pub fn terms(&self, y: f64, eta: f64, hypers: &[f64]) -> LogLikTerms {
        match *self {
            Self::Gaussian { log_precision } => {
                let log_tau = hypers[log_precision];
                let tau = log_tau.exp();
                let r = y - eta;
                LogLikTerms { value: 0.5 * (log_tau - LN_2PI) - 0.5 * tau * r * r, grad: tau * r, hess: -tau }
            }
            Self::Poisson { offset } => {
                let mu = offset * eta.exp();
                LogLikTerms { value: y * (offset.ln() + eta) - mu - ln_gamma(y + 1.0), grad: y - mu, hess: -mu }
            }
            Self::Binomial { trials } => {
                let n = trials as f64;
                let p = logistic(eta);
                let log_choose = ln_gamma(n + 1.0) - ln_gamma(y + 1.0) - ln_gamma(n - y + 1.0);
                LogLikTerms {
                    value: log_choose + y * eta - n * softplus(eta),
                    grad: y - n * p,
                    hess: -n * p * (1.0 - p),
                }
            }
            Self::Exponential => {
                let scaled = y * (-eta).exp();
                LogLikTerms { value: -eta - scaled, grad: scaled - 1.0, hess: -scaled }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HYPERS: [f64; 1] = [0.0];

    #[test]
    fn gaussian_centered() {
        let t = LikelihoodFamily::Gaussian { log_precision: 0 }.terms(0.0, 0.0, &HYPERS);
        assert_eq!(t.grad, 0.0);
        assert_eq!(t.hess, -1.0);
    }

    #[test]
    fn poisson_unit() {
        let t = LikelihoodFamily::Poisson { offset: 1.0 }.terms(1.0, 0.0, &HYPERS);
        assert_eq!(t.grad, 0.0);
        assert_eq!(t.hess, -1.0);
        assert!((t.value - -1.0).abs() < 1e-15);
    }

    #[test]
    fn binomial_half() {
        let t = LikelihoodFamily::Binomial { trials: 20 }.terms(10.0, 0.0, &HYPERS);
        assert_eq!(t.grad, 0.0);
        assert_eq!(t.hess, -5.0);
    }

    #[test]
    fn support_checks() {
        assert!(LikelihoodFamily::Poisson { offset: 1.0 }.check(0, -1.0).is_err());
        assert!(LikelihoodFamily::Poisson { offset: 0.0 }.check(0, 1.0).is_err());
        assert!(LikelihoodFamily::Binomial { trials: 3 }.check(0, 4.0).is_err());
        assert!(LikelihoodFamily::Binomial { trials: 3 }.check(0, 3.0).is_ok());
        assert!(LikelihoodFamily::Exponential.check(0, 0.0).is_err());
        assert!(LikelihoodFamily::Exponential.check(0, 0.3).is_ok());
    }

    #[test]
    fn binomial_stable_at_extremes() {
        let fam = LikelihoodFamily::Binomial { trials: 5 };
        for eta in [-800.0, 800.0] {
            let t = fam.terms(2.0, eta, &HYPERS);
            assert!(t.value.is_finite() && t.grad.is_finite() && t.hess.is_finite());
        }
    }

    fn families() -> Vec<(LikelihoodFamily, f64)> {
        vec![
            (LikelihoodFamily::Gaussian { log_precision: 0 }, 0.7),
            (LikelihoodFamily::Poisson { offset: 2.5 }, 3.0),
            (LikelihoodFamily::Binomial { trials: 20 }, 13.0),
            (LikelihoodFamily::Exponential, 1.7),
        ]
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(eta in -5.0f64..5.0, log_tau in -2.0f64..3.0) {
            let h = 1e-5;
            let hypers = [log_tau];
            for (fam, y) in families() {
                let t = fam.terms(y, eta, &hypers);
                let up = fam.terms(y, eta + h, &hypers);
                let dn = fam.terms(y, eta - h, &hypers);
                let fd_grad = (up.value - dn.value) / (2.0 * h);
                let fd_hess = (up.grad - dn.grad) / (2.0 * h);
                let tol = |a: f64, b: f64| (a - b).abs() <= 1e-5 * b.abs().max(1.0);
                prop_assert!(tol(t.grad, fd_grad), "{} grad {} vs {}", fam.name(), t.grad, fd_grad);
                prop_assert!(tol(t.hess, fd_hess), "{} hess {} vs {}", fam.name(), t.hess, fd_hess);
                prop_assert!(t.hess <= 0.0);
            }
        }
    }
}
