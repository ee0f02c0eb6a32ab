//! Finite-state Markov chains and the exact oracles shared by the tabular
//! applications.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{config, Error, Result};
use crate::problem::{Func, GroundTruth};

/// Stationary distribution of a row-stochastic matrix by power iteration on
/// the lazy chain `(I + P)/2`, which converges for periodic chains too.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..1_000_000 {
        let next = (p.transpose() * &pi + &pi) * 0.5;
        let change = (&next - &pi).abs().sum();
        pi = next;
        if change < 1e-15 {
            break;
        }
    }
    let pi = &pi / pi.sum();
    let resid = (p.transpose() * &pi - &pi).abs().max();
    if resid > 1e-10 {
        return Err(Error::Config(format!("stationary distribution did not converge (residual {resid:.2e})")));
    }
    Ok(pi.iter().copied().collect())
}

pub fn check_row_stochastic(p: &DMatrix<f64>) -> Result<()> {
    if p.nrows() != p.ncols() || p.nrows() == 0 {
        return config("transition matrix must be square and nonempty");
    }
    for (i, row) in p.row_iter().enumerate() {
        if row.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return config(format!("transition row {i} has a negative or non-finite entry"));
        }
        let s = row.sum();
        if (s - 1.0).abs() > 1e-12 {
            return config(format!("transition row {i} sums to {s}"));
        }
    }
    Ok(())
}

/// `(1 − mixing) · L + mixing · U` where `L` moves to a neighbouring state (or
/// stays) with random weights and `U` is uniform. Rows are renormalised.
pub fn local_walk(n: usize, mixing: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut p = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let mut local = vec![0.0; n];
        for j in i.saturating_sub(1)..=(i + 1).min(n - 1) {
            local[j] = rng.random_range(0.5..1.5);
        }
        let s: f64 = local.iter().sum();
        for j in 0..n {
            p[(i, j)] = (1.0 - mixing) * local[j] / s + mixing / n as f64;
        }
        let row_sum: f64 = p.row(i).sum();
        for j in 0..n {
            p[(i, j)] /= row_sum;
        }
    }
    p
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (a + b)];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Index of the state nearest to `w` (states are one-dimensional).
pub fn nearest(states: &[f64], w: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in states.iter().enumerate() {
        if (s - w[0]).abs() < (states[best] - w[0]).abs() {
            best = i;
        }
    }
    best
}

/// Exact oracle for problems whose conditional moment is an affine map of
/// the per-state values: `δ̄(sᵢ; f) = bᵢ + Σⱼ Kᵢⱼ f(sⱼ)`.
#[derive(Debug, Clone)]
pub struct TabularTruth {
    pub states: Vec<f64>,
    pub weights: Vec<f64>,
    pub offset: DVector<f64>,
    pub operator: DMatrix<f64>,
    pub f_star: Vec<f64>,
    pub g_star: Vec<f64>,
    pub f0: Option<Vec<f64>>,
}

impl TabularTruth {
    pub fn values(&self, f: Func) -> DVector<f64> {
        DVector::from_iterator(self.states.len(), self.states.iter().map(|&s| f(&[s])))
    }

    /// `δ̄(sᵢ; f)` for every state.
    pub fn residuals(&self, f: Func) -> DVector<f64> {
        &self.offset + &self.operator * self.values(f)
    }
}

/// Minimiser of `½ Σᵢ πᵢ (bᵢ + (K f)ᵢ)² + λ Σⱼ qⱼ fⱼ² + κ (f_ref − 1)²`.
pub fn regularized_solution(
    weights: &[f64],
    offset: &DVector<f64>,
    operator: &DMatrix<f64>,
    lambda: f64,
    reg_weights: &[f64],
    anchor: Option<(usize, f64)>,
) -> Result<DVector<f64>> {
    let n = weights.len();
    let pi = DMatrix::from_diagonal(&DVector::from_column_slice(weights));
    let mut lhs = operator.transpose() * &pi * operator;
    let mut rhs = -(operator.transpose() * &pi * offset);
    for j in 0..n {
        lhs[(j, j)] += 2.0 * lambda * reg_weights[j];
    }
    if let Some((r, kappa)) = anchor {
        lhs[(r, r)] += 2.0 * kappa;
        rhs[r] += 2.0 * kappa;
    }
    lhs.lu()
        .solve(&rhs)
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Config("regularized normal equations are singular".into()))
}

impl GroundTruth for TabularTruth {
    fn f_star(&self, w: &[f64]) -> f64 {
        self.f_star[nearest(&self.states, w)]
    }

    fn g_star(&self, z: &[f64]) -> f64 {
        self.g_star[nearest(&self.states, z)]
    }

    fn cond_exp(&self, z: &[f64], f: Func) -> f64 {
        let i = nearest(&self.states, z);
        let mut acc = self.offset[i];
        for (j, &s) in self.states.iter().enumerate() {
            let k = self.operator[(i, j)];
            if k != 0.0 {
                acc += k * f(&[s]);
            }
        }
        acc
    }

    fn f0(&self, w: &[f64]) -> Option<f64> {
        self.f0.as_ref().map(|v| v[nearest(&self.states, w)])
    }
}
