use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Rk4,
}

/// How population dynamics estimate `E_𝒟[·]` in each drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Expectation {
    /// Fresh batch of `batch` i.i.d. samples per step, weight `1/batch` each.
    MonteCarlo { batch: usize },
    /// Exact enumeration of a finite data distribution.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Checkpoints {
    /// About this many geometrically spaced iterations, always including 0 and K.
    Geometric(usize),
    Every(usize),
    Iterations(Vec<usize>),
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynConfig {
    pub alpha: f64,
    /// Base stepsize; `α⁻²` when unset.
    pub eta: Option<f64>,
    /// Stepsize scale; `1/n_primal` when unset.
    pub eps: Option<f64>,
    pub n_primal: usize,
    pub n_dual: usize,
    pub steps: usize,
    pub expectation: Expectation,
    pub integrator: Integrator,
    /// Continuous-time integration uses `h = ε / substeps`.
    pub substeps: usize,
    pub seed: u64,
    pub checkpoints: Checkpoints,
    pub antithetic: bool,
    /// Standard deviation of the initial hidden weights and bias (the output
    /// parameter `β` always starts standard normal).
    #[serde(default = "unit")]
    pub init_hidden_scale: f64,
    /// Keep every velocity field so the run can drive ideal particles.
    pub record_field: bool,
    /// Hold the primal network fixed and run ascent on the dual only.
    #[serde(default)]
    pub freeze_primal: bool,
}

impl DynConfig {
    pub fn new(alpha: f64, width: usize, steps: usize, seed: u64) -> Self {
        Self {
            alpha,
            eta: None,
            eps: None,
            n_primal: width,
            n_dual: width,
            steps,
            expectation: Expectation::MonteCarlo { batch: 1 },
            integrator: Integrator::Euler,
            substeps: 1,
            seed,
            checkpoints: Checkpoints::Geometric(100),
            antithetic: false,
            init_hidden_scale: 1.0,
            record_field: false,
            freeze_primal: false,
        }
    }

    pub fn eta(&self) -> f64 {
        self.eta.unwrap_or(1.0 / (self.alpha * self.alpha))
    }

    pub fn eps(&self) -> f64 {
        self.eps.unwrap_or(1.0 / self.n_primal as f64)
    }

    /// Internal step of the continuous-time integrator.
    pub fn step_size(&self) -> f64 {
        self.eps() / self.substeps as f64
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.eps()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                config(format!("{name} must be positive and finite, got {v}"))
            }
        };
        positive("alpha", self.alpha)?;
        positive("eta", self.eta())?;
        positive("eps", self.eps())?;
        positive("init_hidden_scale", self.init_hidden_scale)?;
        if self.n_primal == 0 || self.n_dual == 0 {
            return config("network widths must be at least 1");
        }
        if self.antithetic && (self.n_primal % 2 == 1 || self.n_dual % 2 == 1) {
            return config("antithetic initialization needs even widths");
        }
        if let Expectation::MonteCarlo { batch: 0 } = self.expectation {
            return config("batch must be at least 1");
        }
        if self.substeps == 0 {
            return config("substeps must be at least 1");
        }
        match &self.checkpoints {
            Checkpoints::Geometric(0) | Checkpoints::Every(0) => config("checkpoint cadence must be at least 1"),
            Checkpoints::Iterations(v) if v.iter().any(|&k| k > self.steps) => {
                config("checkpoint iteration beyond the last step")
            }
            _ => Ok(()),
        }
    }

    /// Sorted, deduplicated checkpoint iterations, always containing 0 and `steps`.
    pub fn checkpoint_iterations(&self) -> Vec<usize> {
        let k = self.steps;
        let mut out = vec![0, k];
        match &self.checkpoints {
            Checkpoints::Geometric(count) => {
                if k > 0 && *count > 1 {
                    let top = (k as f64).ln();
                    for j in 0..*count {
                        let it = (top * j as f64 / (*count - 1) as f64).exp().round() as usize;
                        out.push(it.clamp(1, k));
                    }
                }
            }
            Checkpoints::Every(every) => out.extend((0..=k).step_by(*every)),
            Checkpoints::Iterations(v) => out.extend(v.iter().copied()),
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}
