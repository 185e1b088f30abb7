//! Latent Gaussian models fitted by Laplace approximation, with leave-group-out
//! cross-validation computed from the full-data fit.

pub mod approx;
pub mod component;
pub mod covariance;
pub mod engine;
pub mod error;
pub mod grid;
pub mod groups;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod simulate;
pub mod sparse;

pub use approx::{find_mode, find_mode_from, GaussianApprox, ModeConfig};
pub use component::{ComponentKind, Graph, LatentComponent};
pub use engine::{compute_lgocv, compute_loocv, EngineConfig, LgocvResult};
pub use error::{LgocvError, Result};
pub use grid::{build_theta_grid, fit, fit_fixed, Fit, GridConfig, ThetaGrid};
pub use groups::{build_groups, CorrelationRows, CorrelationSource, GroupConfig, GroupSpec};
pub use likelihood::LikelihoodFamily;
pub use model::{HyperPoint, HyperPrior, LgmModel, LgmModelBuilder, Term, Transform};
