//! Simulated data sets: a multilevel model with three response types and an
//! AR(1) series for forecasting comparisons.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, StandardNormal};

use crate::error::{LgocvError, Result};
use crate::io::{DataTable, ModelSpec};
use crate::model::LgmModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    MultilevelGaussian,
    MultilevelBinomial,
    MultilevelExponential,
    Ar1Forecast,
}

impl Scenario {
    pub const ALL: [Scenario; 4] =
        [Self::MultilevelGaussian, Self::MultilevelBinomial, Self::MultilevelExponential, Self::Ar1Forecast];

    pub fn name(self) -> &'static str {
        match self {
            Self::MultilevelGaussian => "multilevel-gaussian",
            Self::MultilevelBinomial => "multilevel-binomial",
            Self::MultilevelExponential => "multilevel-exponential",
            Self::Ar1Forecast => "ar1-forecast",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = LgocvError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| LgocvError::Config(format!("unknown scenario `{s}`")))
    }
}

pub const MULTILEVEL_N: usize = 100;
pub const MULTILEVEL_CLASSES: usize = 10;
pub const BINOMIAL_TRIALS: u32 = 20;
pub const AR1_N: usize = 2000;
pub const AR1_RHO: f64 = 0.9;
pub const AR1_MEAN: f64 = 2.0;
pub const NOISE_SD: f64 = 0.1;

/// A generated data set with the model used to analyse it.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub scenario: Scenario,
    pub seed: u64,
    pub data: DataTable,
    pub spec_text: String,
    /// True linear predictor.
    pub eta: Vec<f64>,
}

impl Simulation {
    pub fn generate(scenario: Scenario, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match scenario {
            Scenario::Ar1Forecast => ar1(&mut rng, seed),
            _ => multilevel(scenario, &mut rng, seed),
        }
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::parse(&self.spec_text)
    }

    pub fn model(&self) -> Result<LgmModel> {
        self.spec()?.build(&self.data, &BTreeMap::new())
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn multilevel(scenario: Scenario, rng: &mut ChaCha8Rng, seed: u64) -> Simulation {
    let mu = 10f64.ln();
    let s: Vec<f64> = (0..MULTILEVEL_CLASSES).map(|_| normal(rng)).collect();
    let per_class = MULTILEVEL_N / MULTILEVEL_CLASSES;
    let class: Vec<f64> = (0..MULTILEVEL_N).map(|i| (i / per_class) as f64).collect();
    let eta: Vec<f64> = class.iter().map(|&j| mu + s[j as usize]).collect();
    let y: Vec<f64> = eta
        .iter()
        .map(|&e| match scenario {
            Scenario::MultilevelGaussian => e + NOISE_SD * normal(rng),
            Scenario::MultilevelBinomial => {
                let p = 1.0 / (1.0 + (-e).exp());
                Binomial::new(BINOMIAL_TRIALS as u64, p).expect("valid probability").sample(rng) as f64
            }
            Scenario::MultilevelExponential => Exp::new((-e).exp()).expect("positive rate").sample(rng),
            Scenario::Ar1Forecast => unreachable!(),
        })
        .collect();
    let likelihood = match scenario {
        Scenario::MultilevelGaussian => {
            format!("family = gaussian\nresponse = y\nprecision = {}\n", 1.0 / (NOISE_SD * NOISE_SD))
        }
        Scenario::MultilevelBinomial => format!("family = binomial\nresponse = y\ntrials = {BINOMIAL_TRIALS}\n"),
        _ => "family = exponential\nresponse = y\n".to_owned(),
    };
    let spec_text = format!(
        "# {scenario}, seed {seed}\n[likelihood]\n{likelihood}\n\
         [hyper tau_s]\nprior = normal 0 1e-4\n\n\
         [component intercept]\nkind = fixed\nprecision = 1e-4\n\n\
         [component s]\nkind = iid\nindex = class\nsize = {MULTILEVEL_CLASSES}\nprecision = tau_s\n"
    );
    let data = DataTable::new(vec!["y".into(), "class".into()], vec![y, class]).expect("equal columns");
    Simulation { scenario, seed, data, spec_text, eta }
}

fn ar1(rng: &mut ChaCha8Rng, seed: u64) -> Simulation {
    let mut u = Vec::with_capacity(AR1_N);
    let mut prev = normal(rng) / (1.0 - AR1_RHO * AR1_RHO).sqrt();
    u.push(prev);
    for _ in 1..AR1_N {
        prev = AR1_RHO * prev + normal(rng);
        u.push(prev);
    }
    let eta: Vec<f64> = u.iter().map(|v| AR1_MEAN + v).collect();
    let y: Vec<f64> = eta.iter().map(|&e| e + NOISE_SD * normal(rng)).collect();
    let t: Vec<f64> = (0..AR1_N).map(|i| i as f64).collect();
    // Unit innovation variance gives marginal precision 1 - ρ².
    let spec_text = format!(
        "# ar1-forecast, seed {seed}\n[likelihood]\nfamily = gaussian\nresponse = y\nprecision = {}\n\n\
         [component intercept]\nkind = fixed\nprecision = 1e-4\n\n\
         [component u]\nkind = ar1\nindex = t\nprecision = {}\nrho = {AR1_RHO}\n",
        1.0 / (NOISE_SD * NOISE_SD),
        1.0 - AR1_RHO * AR1_RHO
    );
    let data = DataTable::new(vec!["y".into(), "t".into()], vec![y, t]).expect("equal columns");
    Simulation { scenario: Scenario::Ar1Forecast, seed, data, spec_text, eta }
}
