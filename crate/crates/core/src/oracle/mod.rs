//! Brute-force references for the engine: refitting without the left-out
//! data, dense replications of the sparse linear algebra, leave-future-out
//! cross-validation, and the monotone interpolation used to compare the two.

pub mod dense;
pub mod interp;
pub mod lfocv;
pub mod refit;
pub mod report;

pub use dense::{dense_downdate_oracle, dense_eta_moments, dense_mode, DenseState};
pub use interp::Pchip;
pub use lfocv::{lfocv, lfocv_curve, LfocvCurve};
pub use refit::{predictive_from_fit, refit_lgocv, refit_predictive, trapezoid_log_expectation, HyperMode};
pub use report::{OracleCase, OracleReport};
