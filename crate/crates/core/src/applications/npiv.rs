//! Nonparametric instrumental-variable regression `Y = f₀(X) + ε`,
//! `E[ε | Z] = 0`, on a synthetic design with an analytic conditional law.
//!
//! `Z ~ U[-1, 1]`, `U, V ~ N(0, 1)`, `X = tanh(aZ + bU)` and
//! `ε = noise · (U + V)/√2`, so `X` is endogenous through `U`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{config, Error, Result};
use crate::problem::{DomainBoxes, Func, GroundTruth, MomentProblem, PointMass, Sample, Variation};
use crate::quadrature::{gauss_hermite_normal, gauss_legendre, Rule};

pub fn npiv_structural(x: f64) -> f64 {
    (PI * x).sin() * (1.0 - x * x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NpivDesign {
    /// Instrument strength.
    pub a: f64,
    /// Confounding strength.
    pub b: f64,
    pub noise: f64,
}

impl Default for NpivDesign {
    fn default() -> Self {
        Self { a: 1.5, b: 0.5, noise: 0.1 }
    }
}

impl NpivDesign {
    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a != 0.0) {
            return config("npiv.a must be finite and nonzero");
        }
        if !(self.b.is_finite() && self.b >= 0.0) {
            return config("npiv.b must be finite and nonnegative");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return config("npiv.noise must be finite and nonnegative");
        }
        Ok(())
    }

    /// Draws `(X, Z, Y)` and returns the structural error alongside.
    pub fn draw(&self, rng: &mut dyn RngCore) -> (Sample, f64) {
        let z: f64 = rng.random_range(-1.0..=1.0);
        let u: f64 = rng.sample(StandardNormal);
        let v: f64 = rng.sample(StandardNormal);
        let x = (self.a * z + self.b * u).tanh();
        let eps = self.noise * (u + v) / std::f64::consts::SQRT_2;
        (Sample { x: vec![x], z: vec![z], y: npiv_structural(x) + eps }, eps)
    }

    /// The points `X` takes given `Z = z`, with their quadrature weights.
    pub fn conditional_nodes<'a>(&'a self, z: f64, rule: &'a Rule) -> impl Iterator<Item = (f64, f64)> + 'a {
        rule.nodes.iter().zip(&rule.weights).map(move |(&u, &w)| ((self.a * z + self.b * u).tanh(), w))
    }
}

pub struct NpivProblem {
    design: NpivDesign,
    lambda: f64,
}

impl NpivProblem {
    pub fn design(&self) -> &NpivDesign {
        &self.design
    }
}

impl MomentProblem for NpivProblem {
    fn name(&self) -> &str {
        "npiv"
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

    fn sample(&self, rng: &mut dyn RngCore) -> Sample {
        self.design.draw(rng).0
    }

    fn phi_at_zero(&self, s: &Sample) -> f64 {
        s.y
    }

    fn phi_variation(&self, s: &Sample) -> Variation {
        vec![PointMass::new(-1.0, s.x.clone())]
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
}

/// Saddle point of the NPIV problem. For `λ = 0` this is `(f₀, 0)`; for
/// `λ > 0` `f*` is a piecewise-linear ridge solution on a dense grid.
pub struct NpivTruth {
    design: NpivDesign,
    rule: Rule,
    /// `None` means `f* = f₀`.
    grid: Option<(Vec<f64>, Vec<f64>)>,
}

const HERMITE_NODES: usize = 60;
const GRID_POINTS: usize = 401;
const Z_NODES: usize = 96;

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let h = xs[1] - xs[0];
    let t = ((x - xs[0]) / h).clamp(0.0, (n - 1) as f64);
    let i = (t.floor() as usize).min(n - 2);
    let frac = t - i as f64;
    ys[i] * (1.0 - frac) + ys[i + 1] * frac
}

/// Hat-function weights of `x` on a uniform grid: `(i, 1 − frac), (i + 1, frac)`.
fn hat(xs: &[f64], x: f64) -> [(usize, f64); 2] {
    let n = xs.len();
    let h = xs[1] - xs[0];
    let t = ((x - xs[0]) / h).clamp(0.0, (n - 1) as f64);
    let i = (t.floor() as usize).min(n - 2);
    let frac = t - i as f64;
    [(i, 1.0 - frac), (i + 1, frac)]
}

impl NpivTruth {
    fn solve_ridge(design: &NpivDesign, rule: &Rule, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let xs: Vec<f64> = (0..GRID_POINTS).map(|i| -1.0 + 2.0 * i as f64 / (GRID_POINTS - 1) as f64).collect();
        let zr = gauss_legendre(Z_NODES);
        let m = GRID_POINTS;
        let mut a = DMatrix::<f64>::zeros(Z_NODES, m);
        let mut c = DVector::<f64>::zeros(Z_NODES);
        let mut mass = DMatrix::<f64>::zeros(m, m);
        for (q, (&z, &wz)) in zr.nodes.iter().zip(&zr.weights).enumerate() {
            let pz = wz / 2.0;
            for (x, wu) in design.conditional_nodes(z, rule) {
                c[q] += wu * npiv_structural(x);
                let hw = hat(&xs, x);
                for &(i, hi) in &hw {
                    a[(q, i)] += wu * hi;
                    for &(j, hj) in &hw {
                        mass[(i, j)] += pz * wu * hi * hj;
                    }
                }
            }
        }
        let pi = DMatrix::from_diagonal(&DVector::from_iterator(Z_NODES, zr.weights.iter().map(|w| w / 2.0)));
        let lhs = a.transpose() * &pi * &a + mass * (2.0 * lambda);
        let rhs = a.transpose() * &pi * &c;
        let f = lhs
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .ok_or_else(|| Error::Config("ridge system for the NPIV oracle is not positive definite".into()))?;
        Ok((xs, f.iter().copied().collect()))
    }

    /// `E[(f(X) − f*(X))²]` by quadrature over the design.
    pub fn weighted_l2_error(&self, f: Func) -> f64 {
        let zr = gauss_legendre(Z_NODES);
        let mut acc = 0.0;
        for (&z, &wz) in zr.nodes.iter().zip(&zr.weights) {
            for (x, wu) in self.design.conditional_nodes(z, &self.rule) {
                acc += wz / 2.0 * wu * (f(&[x]) - self.f_star(&[x])).powi(2);
            }
        }
        acc
    }

    /// `J(f) = E[δ̄(Z; f)²/2 + λ f(X)²]` by quadrature over the design.
    pub fn objective(&self, f: Func, lambda: f64) -> f64 {
        let zr = gauss_legendre(Z_NODES);
        let mut acc = 0.0;
        for (&z, &wz) in zr.nodes.iter().zip(&zr.weights) {
            let d = self.cond_exp(&[z], f);
            let mut reg = 0.0;
            for (x, wu) in self.design.conditional_nodes(z, &self.rule) {
                reg += wu * f(&[x]).powi(2);
            }
            acc += wz / 2.0 * (0.5 * d * d + lambda * reg);
        }
        acc
    }
}

impl GroundTruth for NpivTruth {
    fn f_star(&self, w: &[f64]) -> f64 {
        match &self.grid {
            None => npiv_structural(w[0]),
            Some((xs, ys)) => interp(xs, ys, w[0]),
        }
    }

    fn g_star(&self, z: &[f64]) -> f64 {
        match &self.grid {
            None => 0.0,
            Some(_) => self.cond_exp(z, &|w| self.f_star(w)),
        }
    }

    fn cond_exp(&self, z: &[f64], f: Func) -> f64 {
        self.design
            .conditional_nodes(z[0], &self.rule)
            .map(|(x, w)| w * (npiv_structural(x) - f(&[x])))
            .sum()
    }

    fn f0(&self, w: &[f64]) -> Option<f64> {
        Some(npiv_structural(w[0]))
    }
}

pub fn make_npiv(design: NpivDesign, lambda: f64) -> Result<(NpivProblem, NpivTruth)> {
    design.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return config(format!("lambda must be nonnegative, got {lambda}"));
    }
    let rule = gauss_hermite_normal(HERMITE_NODES);
    let grid = if lambda > 0.0 { Some(NpivTruth::solve_ridge(&design, &rule, lambda)?) } else { None };
    Ok((NpivProblem { design, lambda }, NpivTruth { design, rule, grid }))
}
