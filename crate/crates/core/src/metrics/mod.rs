//! Quantities the convergence theory is stated in: transport distances,
//! the potential, the primal objective, stationarity, and weak errors.

pub mod assignment;
pub mod estimators;
pub mod wasserstein;
pub mod weak;

use serde::{Deserialize, Serialize};

pub use estimators::{
    fenchel_gap, potential_v, primal_j, stationarity_residual, stationarity_residual_with, Estimate, Residual, Source,
};
pub use wasserstein::{deviation_from_init, joint_deviation, sliced, w2_auto, w2_exact, w2_sliced, EXACT_CAP};
pub use weak::{default_dictionary, weak_error, TestFunction};

/// One metric value at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub name: String,
    pub iteration: usize,
    pub t: f64,
    pub value: f64,
    /// Standard error, when the value is a Monte Carlo estimate.
    pub stderr: Option<f64>,
}

impl MetricRecord {
    pub fn new(name: impl Into<String>, iteration: usize, t: f64, value: f64, stderr: Option<f64>) -> Self {
        Self { name: name.into(), iteration, t, value, stderr }
    }

    pub fn from_estimate(name: impl Into<String>, iteration: usize, t: f64, e: Estimate) -> Self {
        Self::new(name, iteration, t, e.value, Some(e.stderr))
    }
}
