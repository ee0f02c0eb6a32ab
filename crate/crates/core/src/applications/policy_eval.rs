//! Off-policy evaluation of a fixed policy on a finite MDP, posed as the
//! Bellman moment equation `E[r + γ f(S') − f(S) | S] = 0`.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore};

use super::finite_state::{
    check_row_stochastic, linspace, local_walk, regularized_solution, stationary_distribution,
    TabularTruth,
};
use crate::error::{config, Error, Result};
use crate::problem::{DomainBoxes, Func, MomentProblem, PointMass, Sample, Variation};
use crate::rng::{stream, stream_rng};

/// A finite MDP under a fixed policy: states embedded in `[-1, 1]`,
/// policy-induced transitions `P`, expected rewards `r` and discount `γ`.
#[derive(Debug, Clone)]
pub struct FiniteMdp {
    pub states: Vec<f64>,
    pub transition: DMatrix<f64>,
    pub reward: Vec<f64>,
    pub gamma: f64,
    pub stationary: Vec<f64>,
}

impl FiniteMdp {
    pub fn new(states: Vec<f64>, transition: DMatrix<f64>, reward: Vec<f64>, gamma: f64) -> Result<Self> {
        let n = states.len();
        check_row_stochastic(&transition)?;
        if transition.nrows() != n || reward.len() != n {
            return config(format!("MDP with {n} states needs a {n}x{n} transition matrix and {n} rewards"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return config(format!("discount must lie in (0, 1), got {gamma}"));
        }
        if states.iter().any(|s| s.abs() > 1.0) {
            return config("states must lie in [-1, 1]");
        }
        let stationary = stationary_distribution(&transition)?;
        Ok(Self { states, transition, reward, gamma, stationary })
    }

    /// Random local-walk MDP with evenly spaced states and smooth rewards in `[0, 1]`.
    pub fn generate(n_states: usize, gamma: f64, mixing: f64, seed: u64) -> Result<Self> {
        if n_states < 2 {
            return config("policy_eval.n_states must be at least 2");
        }
        if !(0.0..=1.0).contains(&mixing) {
            return config(format!("policy_eval.mixing must lie in [0, 1], got {mixing}"));
        }
        let mut rng = stream_rng(seed, stream::GENERATOR);
        let states = linspace(-1.0, 1.0, n_states);
        let transition = local_walk(n_states, mixing, &mut rng);
        let phase: f64 = rng.random_range(0.0..2.0);
        let reward = states
            .iter()
            .map(|&s| {
                let u: f64 = rng.random_range(-1.0..1.0);
                0.5 + 0.3 * (std::f64::consts::PI * (s + phase)).sin() + 0.1 * u
            })
            .collect();
        Self::new(states, transition, reward, gamma)
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// `V^π = (I − γP)⁻¹ r`.
    pub fn value_function(&self) -> Result<Vec<f64>> {
        let n = self.n_states();
        let a = DMatrix::<f64>::identity(n, n) - &self.transition * self.gamma;
        let v = a
            .lu()
            .solve(&DVector::from_column_slice(&self.reward))
            .ok_or_else(|| Error::Config("I - gamma P is singular".into()))?;
        Ok(v.iter().copied().collect())
    }

    /// Largest per-state Bellman residual `|r + γ P v − v|`.
    pub fn bellman_residual(&self, v: &[f64]) -> f64 {
        let v = DVector::from_column_slice(v);
        let r = DVector::from_column_slice(&self.reward) + &self.transition * &v * self.gamma - &v;
        r.abs().max()
    }
}

/// `Φ(s', s; f) = r(s) + γ f(s') − f(s)`, `Ψ(s', s; f) = f(s')²`, with
/// `x = s'` and `z = s ~ π`.
pub struct PolicyEvalProblem {
    mdp: FiniteMdp,
    lambda: f64,
    state_law: WeightedIndex<f64>,
    rows: Vec<WeightedIndex<f64>>,
}

impl PolicyEvalProblem {
    pub fn mdp(&self) -> &FiniteMdp {
        &self.mdp
    }
}

pub fn make_policy_eval(mdp: FiniteMdp, lambda: f64) -> Result<(PolicyEvalProblem, TabularTruth)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return config(format!("lambda must be nonnegative, got {lambda}"));
    }
    let n = mdp.n_states();
    let offset = DVector::from_column_slice(&mdp.reward);
    let operator = &mdp.transition * mdp.gamma - DMatrix::<f64>::identity(n, n);
    let reg_weights: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| mdp.stationary[i] * mdp.transition[(i, j)]).sum())
        .collect();
    let value = mdp.value_function()?;
    let f_star = if lambda == 0.0 {
        value.clone()
    } else {
        regularized_solution(&mdp.stationary, &offset, &operator, lambda, &reg_weights, None)?
            .iter()
            .copied()
            .collect()
    };
    let g_star = (&offset + &operator * DVector::from_column_slice(&f_star)).iter().copied().collect();
    let truth = TabularTruth {
        states: mdp.states.clone(),
        weights: mdp.stationary.clone(),
        offset,
        operator,
        f_star,
        g_star,
        f0: Some(value),
    };
    let state_law = WeightedIndex::new(&mdp.stationary).map_err(|e| Error::Config(e.to_string()))?;
    let rows = mdp
        .transition
        .row_iter()
        .map(|r| WeightedIndex::new(r.iter().copied()).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    Ok((PolicyEvalProblem { mdp, lambda, state_law, rows }, truth))
}

impl MomentProblem for PolicyEvalProblem {
    fn name(&self) -> &str {
        "policy_eval"
    }

    fn primal_dim(&self) -> usize {
        1
    }

    fn dual_dim(&self) -> usize {
        1
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn boxes(&self) -> DomainBoxes {
        DomainBoxes { primal: 1.0, dual: 1.0 }
    }

    fn sample(&self, mut rng: &mut dyn RngCore) -> Sample {
        let s = self.state_law.sample(&mut rng);
        let next = self.rows[s].sample(&mut rng);
        Sample { x: vec![self.mdp.states[next]], z: vec![self.mdp.states[s]], y: self.mdp.reward[s] }
    }

    fn phi_at_zero(&self, s: &Sample) -> f64 {
        s.y
    }

    fn phi_variation(&self, s: &Sample) -> Variation {
        vec![PointMass::new(self.mdp.gamma, s.x.clone()), PointMass::new(-1.0, s.z.clone())]
    }

    fn psi_value(&self, s: &Sample, f: Func) -> f64 {
        f(&s.x).powi(2)
    }

    fn psi_variation(&self, s: &Sample, f: Func) -> Variation {
        vec![PointMass::new(2.0 * f(&s.x), s.x.clone())]
    }

    fn strong_convexity(&self, s: &Sample) -> Option<(f64, Vec<f64>)> {
        Some((1.0, s.x.clone()))
    }

    fn population(&self) -> Option<Vec<(f64, Sample)>> {
        let m = &self.mdp;
        let mut out = Vec::new();
        for i in 0..m.n_states() {
            for j in 0..m.n_states() {
                let w = m.stationary[i] * m.transition[(i, j)];
                if w > 0.0 {
                    out.push((w, Sample { x: vec![m.states[j]], z: vec![m.states[i]], y: m.reward[i] }));
                }
            }
        }
        Some(out)
    }
}
