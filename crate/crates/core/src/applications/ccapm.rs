//! Consumption-based asset pricing: the homogeneous moment equation
//! `E[r̃' f(c') − f(c) | c] = 0` on a finite consumption-growth chain.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, RngCore};

use super::finite_state::{
    check_row_stochastic, linspace, local_walk, nearest, regularized_solution, stationary_distribution,
    TabularTruth,
};
use crate::error::{config, Error, Result};
use crate::problem::{Anchor, DomainBoxes, Func, MomentProblem, PointMass, Sample, Variation};
use crate::rng::{stream, stream_rng};

/// Markov chain on a consumption-growth grid with per-transition modified
/// returns `r̃ᵢⱼ`.
#[derive(Debug, Clone)]
pub struct CcapmChain {
    pub grid: Vec<f64>,
    pub transition: DMatrix<f64>,
    pub returns: DMatrix<f64>,
    pub stationary: Vec<f64>,
    /// Index of the normalisation state, the grid point nearest 1.
    pub reference: usize,
}

impl CcapmChain {
    pub fn new(grid: Vec<f64>, transition: DMatrix<f64>, returns: DMatrix<f64>, bound: f64) -> Result<Self> {
        let n = grid.len();
        check_row_stochastic(&transition)?;
        if transition.nrows() != n || returns.nrows() != n || returns.ncols() != n {
            return config(format!("chain with {n} states needs {n}x{n} transition and return matrices"));
        }
        if let Some(r) = returns.iter().find(|r| !(r.abs() <= bound)) {
            return config(format!("modified return {r} exceeds the bound R = {bound}"));
        }
        if grid.iter().any(|c| !c.is_finite() || c.abs() > 2.0) {
            return config("consumption grid must lie in [-2, 2]");
        }
        let stationary = stationary_distribution(&transition)?;
        if stationary.iter().any(|&p| p < 1e-12) {
            return config("consumption chain is not irreducible");
        }
        let reference = nearest(&grid, &[1.0]);
        Ok(Self { grid, transition, returns, stationary, reference })
    }

    /// Chain on `linspace(0.8, 1.2, n)` whose returns price the positive
    /// target `f(c) = c^{-2}` (rescaled to 1 at the reference state) exactly,
    /// with random multiplicative noise on the transitions.
    pub fn generate(n_states: usize, bound: f64, seed: u64) -> Result<Self> {
        if n_states < 2 {
            return config("ccapm.n_states must be at least 2");
        }
        let mut rng = stream_rng(seed, stream::GENERATOR);
        let grid = linspace(0.8, 1.2, n_states);
        let transition = local_walk(n_states, 0.2, &mut rng);
        let reference = nearest(&grid, &[1.0]);
        let target: Vec<f64> = grid.iter().map(|c| (c / grid[reference]).powi(-2)).collect();
        let noise = DMatrix::from_fn(n_states, n_states, |_, _| rng.random_range(0.8..1.2));
        let returns = returns_for(&transition, &target, &noise);
        Self::new(grid, transition, returns, bound)
    }

    pub fn n_states(&self) -> usize {
        self.grid.len()
    }

    pub fn max_return(&self) -> f64 {
        self.returns.abs().max()
    }

    /// `Mᵢⱼ = Pᵢⱼ r̃ᵢⱼ`, so `δ̄(·; f) = (M − I) f`.
    pub fn pricing_operator(&self) -> DMatrix<f64> {
        self.transition.component_mul(&self.returns)
    }

    /// Solves `(M − I) f = 0` with `f(c_ref) = 1` and requires a strictly
    /// positive solution.
    pub fn solve_structural(&self) -> Result<Vec<f64>> {
        let n = self.n_states();
        let mut a = self.pricing_operator() - DMatrix::<f64>::identity(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        // Replace the reference equation, which is implied by the others at
        // an eigen-solution, with the normalisation.
        for j in 0..n {
            a[(self.reference, j)] = if j == self.reference { 1.0 } else { 0.0 };
        }
        rhs[self.reference] = 1.0;
        let f = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Misspecified("pricing equation has no normalised solution".into()))?;
        let resid = ((self.pricing_operator() - DMatrix::<f64>::identity(n, n)) * &f).abs().max();
        if resid > 1e-9 {
            return Err(Error::Misspecified(format!("pricing equation has no exact solution (residual {resid:.2e})")));
        }
        if f.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Misspecified("pricing solution is not positive".into()));
        }
        Ok(f.iter().copied().collect())
    }
}

/// `r̃ᵢⱼ = f(cᵢ) ξᵢⱼ / (f(cⱼ) Σₖ Pᵢₖ ξᵢₖ)`, which makes `f` an exact solution.
pub fn returns_for(transition: &DMatrix<f64>, target: &[f64], noise: &DMatrix<f64>) -> DMatrix<f64> {
    let n = target.len();
    DMatrix::from_fn(n, n, |i, j| {
        let norm: f64 = (0..n).map(|k| transition[(i, k)] * noise[(i, k)]).sum();
        target[i] * noise[(i, j)] / (target[j] * norm)
    })
}

/// `Φ(c', c; f) = r̃ f(c') − f(c)` and `Ψ = f(c')²`, with `x = c'`, `z = c`,
/// `y = r̃`. A positive `κ` adds the anchor `κ (f(c_ref) − 1)²`.
pub struct CcapmProblem {
    chain: CcapmChain,
    lambda: f64,
    kappa: f64,
    state_law: WeightedIndex<f64>,
    rows: Vec<WeightedIndex<f64>>,
}

impl CcapmProblem {
    pub fn chain(&self) -> &CcapmChain {
        &self.chain
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }
}

pub fn make_ccapm(chain: CcapmChain, lambda: f64, kappa: f64) -> Result<(CcapmProblem, TabularTruth)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return config(format!("lambda must be nonnegative, got {lambda}"));
    }
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return config(format!("ccapm.kappa must be nonnegative, got {kappa}"));
    }
    let n = chain.n_states();
    let f0 = chain.solve_structural()?;
    let offset = DVector::<f64>::zeros(n);
    let operator = chain.pricing_operator() - DMatrix::<f64>::identity(n, n);
    let reg_weights: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| chain.stationary[i] * chain.transition[(i, j)]).sum())
        .collect();
    let f_star: Vec<f64> = if lambda == 0.0 {
        f0.clone()
    } else {
        let anchor = (kappa > 0.0).then_some((chain.reference, kappa));
        regularized_solution(&chain.stationary, &offset, &operator, lambda, &reg_weights, anchor)?
            .iter()
            .copied()
            .collect()
    };
    let g_star = (&operator * DVector::from_column_slice(&f_star)).iter().copied().collect();
    let truth = TabularTruth {
        states: chain.grid.clone(),
        weights: chain.stationary.clone(),
        offset,
        operator,
        f_star,
        g_star,
        f0: Some(f0),
    };
    let state_law = WeightedIndex::new(&chain.stationary).map_err(|e| Error::Config(e.to_string()))?;
    let rows = chain
        .transition
        .row_iter()
        .map(|r| WeightedIndex::new(r.iter().copied()).map_err(|e| Error::Config(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    Ok((CcapmProblem { chain, lambda, kappa, state_law, rows }, truth))
}

impl MomentProblem for CcapmProblem {
    fn name(&self) -> &str {
        "ccapm"
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
        let r = self.chain.grid.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        DomainBoxes { primal: r, dual: r }
    }

    fn sample(&self, mut rng: &mut dyn RngCore) -> Sample {
        let i = self.state_law.sample(&mut rng);
        let j = self.rows[i].sample(&mut rng);
        let c = &self.chain;
        Sample { x: vec![c.grid[j]], z: vec![c.grid[i]], y: c.returns[(i, j)] }
    }

    fn phi_at_zero(&self, _s: &Sample) -> f64 {
        0.0
    }

    fn phi_variation(&self, s: &Sample) -> Variation {
        vec![PointMass::new(s.y, s.x.clone()), PointMass::new(-1.0, s.z.clone())]
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

    fn anchor(&self) -> Option<Anchor> {
        (self.kappa > 0.0).then(|| Anchor {
            point: vec![self.chain.grid[self.chain.reference]],
            target: 1.0,
            weight: self.kappa,
        })
    }

    fn population(&self) -> Option<Vec<(f64, Sample)>> {
        let c = &self.chain;
        let mut out = Vec::new();
        for i in 0..c.n_states() {
            for j in 0..c.n_states() {
                let w = c.stationary[i] * c.transition[(i, j)];
                if w > 0.0 {
                    out.push((w, Sample { x: vec![c.grid[j]], z: vec![c.grid[i]], y: c.returns[(i, j)] }));
                }
            }
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{check_problem, GroundTruth};

    #[test]
    fn hand_built_three_state_chain() {
        let p = DMatrix::from_row_slice(3, 3, &[0.5, 0.3, 0.2, 0.25, 0.5, 0.25, 0.2, 0.3, 0.5]);
        let target = [1.0, 1.2, 0.8];
        let noise = DMatrix::from_element(3, 3, 1.0);
        let r = returns_for(&p, &target, &noise);
        let chain = CcapmChain::new(vec![1.0, 0.9, 1.1], p, r, 10.0).unwrap();
        assert_eq!(chain.reference, 0);
        let (_, truth) = make_ccapm(chain.clone(), 0.0, 0.0).unwrap();
        let f0 = |w: &[f64]| truth.f0(w).unwrap();
        for &c in &chain.grid {
            assert!(truth.cond_exp(&[c], &f0).abs() < 1e-14);
        }
        let recovered = chain.solve_structural().unwrap();
        for (a, b) in recovered.iter().zip(target) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn homogeneous_offset_and_zero_objective_at_zero() {
        let chain = CcapmChain::generate(8, 5.0, 1).unwrap();
        let (p, truth) = make_ccapm(chain, 0.0, 0.0).unwrap();
        let s = p.sample(&mut stream_rng(0, 0));
        assert_eq!(p.phi_at_zero(&s), 0.0);
        assert!(truth.residuals(&|_| 0.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generated_chain_passes_checks_and_bounds() {
        let chain = CcapmChain::generate(12, 5.0, 3).unwrap();
        assert!(chain.max_return() <= 5.0);
        let (p, truth) = make_ccapm(chain, 0.05, 1.0).unwrap();
        assert!(check_problem(&p, 10_000, 2).passed());
        assert!(truth.f_star.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn return_bound_is_enforced() {
        assert!(CcapmChain::generate(8, 0.5, 1).is_err());
    }

    #[test]
    fn non_positive_solution_is_misspecified() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        // f = (1, -1) solves (M - I) f = 0 with these returns.
        let r = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, -1.0, 1.0]);
        let chain = CcapmChain::new(vec![1.0, 1.1], p, r, 10.0).unwrap();
        assert!(matches!(chain.solve_structural(), Err(Error::Misspecified(_))));
    }
}
