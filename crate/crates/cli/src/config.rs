//! Experiment configuration: a TOML file with one section per concern.
//!
//! ```toml
//! name = "npiv-desk"
//! seed = 1
//!
//! [problem]
//! kind = "npiv"
//! lambda = 0.0
//!
//! [dynamics]
//! alpha = 4.0
//! width = 256
//! horizon = 8.0
//! ```

use std::path::Path;

use fcme_core::applications::{
    make_ccapm, make_npiv, make_policy_eval, make_riesz, CcapmChain, FiniteMdp, NpivDesign, RieszShift,
};
use fcme_core::dynamics::{Checkpoints, CouplingConfig, DynConfig, Dynamics, Expectation, Integrator};
use fcme_core::{GroundTruth, MomentProblem};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub problem: ProblemSection,
    #[serde(default)]
    pub policy_eval: PolicyEvalSection,
    #[serde(default)]
    pub npiv: NpivSection,
    #[serde(default)]
    pub ccapm: CcapmSection,
    #[serde(default)]
    pub riesz: RieszSection,
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
}

fn default_name() -> String {
    "run".into()
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    PolicyEval,
    Npiv,
    Ccapm,
    Riesz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    #[serde(default)]
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyEvalSection {
    pub n_states: usize,
    pub gamma: f64,
    pub mixing: f64,
    pub seed: u64,
}

impl Default for PolicyEvalSection {
    fn default() -> Self {
        Self { n_states: 16, gamma: 0.9, mixing: 0.5, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NpivSection {
    pub a: f64,
    pub b: f64,
    pub noise: f64,
}

impl Default for NpivSection {
    fn default() -> Self {
        let d = NpivDesign::default();
        Self { a: d.a, b: d.b, noise: d.noise }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CcapmSection {
    pub n_states: usize,
    /// Bound on the modified returns.
    #[serde(rename = "R")]
    pub bound: f64,
    pub kappa: f64,
    pub seed: u64,
}

impl Default for CcapmSection {
    fn default() -> Self {
        Self { n_states: 8, bound: 5.0, kappa: 0.0, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RieszSection {
    pub delta: f64,
    pub sigma: f64,
}

impl Default for RieszSection {
    fn default() -> Self {
        let d = RieszShift::default();
        Self { delta: d.delta, sigma: d.sigma }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Sgda,
    Pgda,
    Ctpgda,
}

impl From<Algorithm> for Dynamics {
    fn from(a: Algorithm) -> Self {
        match a {
            Algorithm::Sgda => Dynamics::Sgda,
            Algorithm::Pgda => Dynamics::Pgda,
            Algorithm::Ctpgda => Dynamics::Ctpgda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectationKind {
    #[default]
    MonteCarlo,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSection {
    #[serde(default)]
    pub algorithm: Algorithm,
    pub alpha: f64,
    /// Sets both widths unless `n_primal` / `n_dual` are given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_primal: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_dual: Option<usize>,
    /// Iteration count; derived from `horizon / eps` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default)]
    pub expectation: ExpectationKind,
    #[serde(default = "one")]
    pub batch: usize,
    #[serde(default = "euler")]
    pub integrator: Integrator,
    #[serde(default = "one")]
    pub substeps: usize,
    /// Geometrically spaced checkpoint count.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    /// Evenly spaced checkpoints every this many iterations (overrides `checkpoints`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default = "unit")]
    pub init_hidden_scale: f64,
    #[serde(default)]
    pub freeze_primal: bool,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

fn euler() -> Integrator {
    Integrator::Euler
}

fn default_checkpoints() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    pub names: Vec<String>,
    /// Monte Carlo evaluation batch; finite-state problems use their exact
    /// population when this is absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_batch: Option<usize>,
    /// Also write both ensembles at every checkpoint.
    pub snapshots: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { names: vec!["potential_v".into(), "primal_j".into()], eval_batch: None, snapshots: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub widths: Vec<usize>,
    pub n_ref: usize,
    pub horizon: f64,
    pub ref_step: f64,
    #[serde(default = "default_compare_checkpoints")]
    pub n_checkpoints: usize,
    #[serde(default = "one")]
    pub replicates: usize,
    /// Stepsize scales for the PGDA–SGDA gap table.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eps_values: Vec<f64>,
    /// Width used for the stepsize table; the dynamics width when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_width: Option<usize>,
    /// Seeds averaged per stepsize; `replicates` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_replicates: Option<usize>,
}

fn default_compare_checkpoints() -> usize {
    8
}

pub type Built = (Box<dyn MomentProblem>, Box<dyn GroundTruth>);

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::from_toml(&read(path)?)
    }

    /// Parses `path`, replaces the dotted `key` (e.g. `dynamics.alpha`) with
    /// `value`, and validates the result.
    pub fn load_with(path: &Path, key: &str, value: &str) -> CliResult<Self> {
        let mut table: toml::Table = toml::from_str(&read(path)?).map_err(|e| CliError::Config(e.to_string()))?;
        set_dotted(&mut table, key, parse_value(value))?;
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| CliError::Config(format!("{key}={value}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.dyn_config()?.validate()?;
        self.build_problem()?;
        if self.metrics.eval_batch == Some(0) {
            return Err(CliError::Config("metrics.eval_batch must be at least 1".into()));
        }
        for name in &self.metrics.names {
            if !crate::metrics::KNOWN.contains(&name.as_str()) {
                return Err(CliError::Config(format!(
                    "metrics.names: unknown metric '{name}' (known: {})",
                    crate::metrics::KNOWN.join(", ")
                )));
            }
        }
        if let Some(c) = &self.compare {
            self.coupling_config(c)?.validate()?;
            if c.eps_values.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
                return Err(CliError::Config("compare.eps_values must be positive".into()));
            }
        }
        Ok(())
    }

    /// A copy whose dynamics section spells out widths, steps, `η` and `ε`.
    pub fn resolved(&self) -> CliResult<Self> {
        let d = self.dyn_config()?;
        let mut c = self.clone();
        c.dynamics.width = None;
        c.dynamics.n_primal = Some(d.n_primal);
        c.dynamics.n_dual = Some(d.n_dual);
        c.dynamics.steps = Some(d.steps);
        c.dynamics.horizon = None;
        c.dynamics.eta = d.eta;
        c.dynamics.eps = d.eps;
        Ok(c)
    }

    /// The dynamics configuration with every derived quantity made explicit.
    pub fn dyn_config(&self) -> CliResult<DynConfig> {
        let d = &self.dynamics;
        let bad = |m: &str| Err(CliError::Config(format!("dynamics.{m}")));
        let n_primal = match d.n_primal.or(d.width) {
            Some(n) => n,
            None => return bad("width (or n_primal) is required"),
        };
        let n_dual = d.n_dual.or(d.width).unwrap_or(n_primal);
        let mut c = DynConfig::new(d.alpha, n_primal, 0, self.seed);
        c.n_dual = n_dual;
        c.eta = Some(d.eta.unwrap_or(1.0 / (d.alpha * d.alpha)));
        c.eps = Some(d.eps.unwrap_or(1.0 / n_primal as f64));
        c.steps = match (d.steps, d.horizon) {
            (Some(_), Some(_)) => return bad("give either steps or horizon, not both"),
            (Some(k), None) => k,
            (None, Some(t)) => {
                if !(t >= 0.0 && t.is_finite()) {
                    return bad("horizon must be nonnegative");
                }
                (t / c.eps()).round() as usize
            }
            (None, None) => return bad("steps or horizon is required"),
        };
        c.expectation = match d.expectation {
            ExpectationKind::MonteCarlo => Expectation::MonteCarlo { batch: d.batch },
            ExpectationKind::Exact => Expectation::Exact,
        };
        c.integrator = d.integrator;
        c.substeps = d.substeps;
        c.checkpoints = match d.checkpoint_every {
            Some(every) => Checkpoints::Every(every),
            None => Checkpoints::Geometric(d.checkpoints),
        };
        c.antithetic = d.antithetic;
        c.init_hidden_scale = d.init_hidden_scale;
        c.freeze_primal = d.freeze_primal;
        Ok(c)
    }

    pub fn coupling_config(&self, c: &CompareSection) -> CliResult<CouplingConfig> {
        Ok(CouplingConfig {
            base: self.dyn_config()?,
            widths: c.widths.clone(),
            n_ref: c.n_ref,
            horizon: c.horizon,
            ref_step: c.ref_step,
            n_checkpoints: c.n_checkpoints,
            replicates: c.replicates,
        })
    }

    pub fn build_problem(&self) -> CliResult<Built> {
        let lambda = self.problem.lambda;
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(CliError::Config(format!("problem.lambda must be nonnegative, got {lambda}")));
        }
        Ok(match self.problem.kind {
            ProblemKind::PolicyEval => {
                let s = &self.policy_eval;
                let (p, t) = make_policy_eval(FiniteMdp::generate(s.n_states, s.gamma, s.mixing, s.seed)?, lambda)?;
                (Box::new(p), Box::new(t))
            }
            ProblemKind::Npiv => {
                let s = &self.npiv;
                let (p, t) = make_npiv(NpivDesign { a: s.a, b: s.b, noise: s.noise }, lambda)?;
                (Box::new(p), Box::new(t))
            }
            ProblemKind::Ccapm => {
                let s = &self.ccapm;
                let (p, t) = make_ccapm(CcapmChain::generate(s.n_states, s.bound, s.seed)?, lambda, s.kappa)?;
                (Box::new(p), Box::new(t))
            }
            ProblemKind::Riesz => {
                let s = &self.riesz;
                let (p, t) = make_riesz(RieszShift { delta: s.delta, sigma: s.sigma }, lambda)?;
                (Box::new(p), Box::new(t))
            }
        })
    }
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Integers, floats and booleans parse as such; anything else is a string.
pub fn parse_value(s: &str) -> toml::Value {
    let s = s.trim();
    if let Ok(i) = s.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = s.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = s.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(s.to_string())
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed parameter name '{key}'")));
    }
    let (last, sections) = parts.split_last().expect("nonempty split");
    let mut cur = table;
    for s in sections {
        cur = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("'{s}' in '{key}' is not a section")))?;
    }
    // Floats given where the file has integers (and vice versa) keep the file's type.
    let value = match (cur.get(*last), value) {
        (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (_, v) => v,
    };
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [problem]
        kind = "npiv"
        [dynamics]
        alpha = 4.0
        width = 8
        horizon = 2.0
    "#;

    #[test]
    fn derived_quantities_are_explicit() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let d = cfg.dyn_config().unwrap();
        assert_eq!((d.eps, d.eta, d.steps), (Some(0.125), Some(1.0 / 16.0), 16));
    }

    #[test]
    fn resolution_is_idempotent() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap().resolved().unwrap();
        assert_eq!(cfg.dynamics.steps, Some(16));
        assert_eq!(cfg.resolved().unwrap(), cfg);
        assert_eq!(cfg.dyn_config().unwrap(), ExperimentConfig::from_toml(MINIMAL).unwrap().dyn_config().unwrap());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values_with_field_names() {
        let neg = MINIMAL.replace("alpha = 4.0", "alpha = -4.0");
        assert!(matches!(ExperimentConfig::from_toml(&neg), Err(CliError::Config(m)) if m.contains("alpha")));
        let typo = MINIMAL.replace("width = 8", "widht = 8");
        assert!(matches!(ExperimentConfig::from_toml(&typo), Err(CliError::Config(m)) if m.contains("widht")));
        let metric = format!("{MINIMAL}\n[metrics]\nnames = [\"nope\"]");
        assert!(ExperimentConfig::from_toml(&metric).is_err());
    }

    #[test]
    fn dotted_override_keeps_float_type() {
        let mut t: toml::Table = toml::from_str(MINIMAL).unwrap();
        set_dotted(&mut t, "dynamics.alpha", parse_value("8")).unwrap();
        assert_eq!(t["dynamics"]["alpha"], toml::Value::Float(8.0));
        assert!(set_dotted(&mut t, "dynamics..x", parse_value("1")).is_err());
    }
}
