//! Matérn Gaussian-process toolkit: covariance kernels, maximum likelihood
//! for the range and variance, kriging with naive and true mean squared
//! prediction error, and a reproducible Monte Carlo study harness.

// NaN must fail validation, so negated comparisons are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bessel;
pub mod cli;
pub mod covariance;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod optimize;
pub mod prediction;
pub mod simulation;
pub mod verify;

pub use covariance::{
    correlation_matrix, cross_correlation, effective_range_to_rho, matern_correlation, matern_spectral_density,
    taper_correlation, CorrelationMatrix, Design, Location, MaternParams,
};
pub use error::{Error, Result};
pub use estimation::{
    fit_fixed_rho, fit_mle, fit_tapered, log_likelihood, microergodic_estimate, profile_loglik, profile_sigma2,
    FitConfig, FitMode, FitResult, Observations, ProfileLikelihood,
};
pub use prediction::{
    krig_predict, krige, mean_variance_ratio_curve, naive_mspe, prediction_interval, true_mspe, variance_ratio_curve,
    Kriger, KrigingOutput, RatioKind, VarianceSource,
};
pub use simulation::{run_experiment, simulate_gp, ExperimentConfig, ExperimentReport, RngStream};
