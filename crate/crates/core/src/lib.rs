//! Stationary multilinear chaos sequences driven by a null-recurrent renewal
//! shift, with exact oracles for their covariance structure and the Hermite
//! limits of their partial sums.
//!
//! The crate is organised bottom-up:
//!
//! - [`renewal`]: the return-time law, return masses `u_k`, wandering rates
//!   `w_n` and exact sampling of renewal paths from `mu_n`.
//! - [`levy`]: symmetric Lévy measures with unit second moment.
//! - [`sim`]: compound-Poisson and series frames, `X_k` and partial sums.
//! - [`limits`]: fBm, Rosenblatt, pairings, matchings and moment formulas.
//! - [`stats`]: exact oracles, estimators and the experiment driver.

pub mod convolution;
pub mod error;
pub mod levy;
pub mod limits;
pub mod quadrature;
pub mod renewal;
pub mod report;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
pub use levy::{FiniteLevyMeasure, LevyModel, TailInverse};
pub use renewal::{PathOrigin, RenewalPath, ReturnLaw, Window};
pub use sim::{ChaosFrame, Normalization, PartialSumPath, Representation};
pub use stats::{Estimate, ExperimentSpec, Regime, ResultTable, Row, Verdict};

/// `Γ(β)Γ(2−β)`, the constant linking `b_n` to `w_n`.
pub fn gamma_product(beta: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    (ln_gamma(beta) + ln_gamma(2.0 - beta)).exp()
}

pub(crate) fn factorial(p: usize) -> f64 {
    (1..=p).map(|k| k as f64).product()
}
