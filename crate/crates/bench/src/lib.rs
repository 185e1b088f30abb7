//! Fixtures shared by the benchmarks.

use lgocv::simulate::{Scenario, Simulation};
use lgocv::{fit, CorrelationRows, CorrelationSource, Fit, GridConfig, LgmModel};

pub const SEED: u64 = 20240611;

/// The simulated AR(1) forecasting model with its fit.
pub fn ar1() -> (LgmModel, Fit) {
    fitted(Scenario::Ar1Forecast)
}

pub fn fitted(scenario: Scenario) -> (LgmModel, Fit) {
    let model = Simulation::generate(scenario, SEED).model().expect("simulated spec builds");
    let f = fit(&model, &GridConfig::default()).expect("simulated model fits");
    (model, f)
}

/// Prior correlation rows of the AR(1) field `u`.
pub fn ar1_rows<'a>(model: &LgmModel, f: &'a Fit) -> CorrelationRows<'a> {
    let u = model.component_index("u").expect("ar1 model has `u`");
    CorrelationRows::new(model, f.mode_approximation(), &CorrelationSource::Prior(vec![u])).expect("rows")
}

/// Observations 1501 to 2000 (0-based).
pub fn test_window() -> Vec<usize> {
    (1500..2000).collect()
}
