//! Linear functional conditional moment problems.
//!
//! A problem is described by a data sampler, the affine functional
//! `Φ(x, z; f) = Φ(x, z; 0) + ⟨δΦ/δf, f⟩` and a convex regularizer `Ψ`.
//! Every variation the shipped problems need is a finite signed sum of point
//! evaluations, so variations are returned as lists of [`PointMass`]es and
//! paired against test functions by evaluating them at those points.

use rand::{Rng, RngCore};

use crate::ensemble::{NetKind, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

/// An evaluable scalar function on a neuron domain.
pub type Func<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// One draw from the data distribution.
///
/// `x` lives in the primal domain, `z` in the dual domain, and `y` carries the
/// auxiliary observation (reward, outcome, or return), when there is one.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub weight: f64,
    pub point: Vec<f64>,
}

impl PointMass {
    pub fn new(weight: f64, point: Vec<f64>) -> Self {
        Self { weight, point }
    }
}

/// A signed combination of Dirac masses, acting on `h` as `Σ wₖ h(pₖ)`.
pub type Variation = Vec<PointMass>;

pub fn pair(v: &[PointMass], h: Func) -> f64 {
    v.iter().map(|m| m.weight * h(&m.point)).sum()
}

/// Penalty `weight · (f(point) − target)²` added once to the objective,
/// outside the per-sample regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub point: Vec<f64>,
    pub target: f64,
    pub weight: f64,
}

/// Cube radii of the compact primal and dual domains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainBoxes {
    pub primal: f64,
    pub dual: f64,
}

impl DomainBoxes {
    pub fn contains_primal(&self, p: &[f64]) -> bool {
        p.iter().all(|v| v.abs() <= self.primal)
    }

    pub fn contains_dual(&self, p: &[f64]) -> bool {
        p.iter().all(|v| v.abs() <= self.dual)
    }
}

pub trait MomentProblem: Send + Sync {
    fn name(&self) -> &str;

    /// Input dimension of the primal network.
    fn primal_dim(&self) -> usize;

    /// Input dimension of the dual network.
    fn dual_dim(&self) -> usize;

    fn lambda(&self) -> f64;

    fn boxes(&self) -> DomainBoxes;

    fn sample(&self, rng: &mut dyn RngCore) -> Sample;

    fn phi_at_zero(&self, s: &Sample) -> f64;

    /// `δΦ/δf` at the sample; independent of `f` since `Φ` is affine.
    fn phi_variation(&self, s: &Sample) -> Variation;

    fn phi_pairing(&self, s: &Sample, h: Func) -> f64 {
        pair(&self.phi_variation(s), h)
    }

    fn phi_value(&self, s: &Sample, f: Func) -> f64 {
        self.phi_at_zero(s) + self.phi_pairing(s, f)
    }

    /// The part of the ascent integrand that does not involve `f`:
    /// the objective contains `⟨u, g⟩` for the returned `u`.
    ///
    /// For a conditional moment problem this is `Φ(x, z; 0) · δ_z`; problems
    /// whose dual enters through a linear functional of `g` override it.
    fn dual_offset(&self, s: &Sample) -> Variation {
        vec![PointMass::new(self.phi_at_zero(s), s.z.clone())]
    }

    fn psi_value(&self, s: &Sample, f: Func) -> f64;

    /// `δΨ/δf` evaluated at `f`; linear in `f`.
    fn psi_variation(&self, s: &Sample, f: Func) -> Variation;

    fn psi_pairing(&self, s: &Sample, f: Func, h: Func) -> f64 {
        pair(&self.psi_variation(s, f), h)
    }

    /// `(c_Ψ, w)` such that `Ψ(s; f) ≥ c_Ψ f(w)²`, when strongly convex.
    fn strong_convexity(&self, _s: &Sample) -> Option<(f64, Vec<f64>)> {
        None
    }

    fn anchor(&self) -> Option<Anchor> {
        None
    }

    /// The exact data distribution as weighted samples, for finite-state
    /// problems.
    fn population(&self) -> Option<Vec<(f64, Sample)>> {
        None
    }
}

/// Oracles for a problem's saddle point.
pub trait GroundTruth: Send + Sync {
    fn f_star(&self, w: &[f64]) -> f64;

    fn g_star(&self, z: &[f64]) -> f64;

    /// `δ̄(z; f) = E[Φ(X, Z; f) | Z = z]`.
    fn cond_exp(&self, z: &[f64], f: Func) -> f64;

    /// The structural function, when the problem is realizable.
    fn f0(&self, _w: &[f64]) -> Option<f64> {
        None
    }
}

/// `Φ(x, z; f)` through the affine decomposition.
pub fn phi_eval(p: &dyn MomentProblem, s: &Sample, f: Func) -> f64 {
    p.phi_value(s, f)
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub max_violation: f64,
    pub witness: Option<String>,
}

impl CheckOutcome {
    fn new(name: &'static str) -> Self {
        Self { name, max_violation: 0.0, witness: None }
    }

    fn record(&mut self, violation: f64, witness: impl FnOnce() -> String) {
        let v = if violation.is_nan() { f64::INFINITY } else { violation };
        if v > self.max_violation {
            self.max_violation = v;
            self.witness = Some(witness());
        }
    }

    pub fn passed(&self) -> bool {
        self.max_violation < CHECK_TOLERANCE
    }
}

pub const CHECK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ProblemReport {
    pub problem: String,
    pub trials: usize,
    pub checks: Vec<CheckOutcome>,
}

impl ProblemReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckOutcome::passed)
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let lines: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.passed())
            .map(|c| {
                format!(
                    "{}: violation {:.3e} at {}",
                    c.name,
                    c.max_violation,
                    c.witness.as_deref().unwrap_or("?")
                )
            })
            .collect();
        Err(Error::ProblemCheck(format!("{}: {}", self.problem, lines.join("; "))))
    }
}

fn random_net(rng: &mut impl Rng, dim: usize) -> ParticleEnsemble {
    let alpha = rng.random_range(0.5..4.0);
    ParticleEnsemble::init_gaussian_from(NetKind::Primal, 8, dim + 2, alpha, rng, false)
        .expect("valid random network")
}

/// Checks affinity of `Φ`, `Ψ(0) = 0`, `Ψ ≥ 0`, linearity and correctness of
/// the `Ψ` variation, convexity, strong convexity and data-in-box on `trials`
/// random samples and random test networks.
pub fn check_problem(p: &dyn MomentProblem, trials: usize, seed: u64) -> ProblemReport {
    let mut rng = stream_rng(seed, stream::VERIFY);
    let boxes = p.boxes();
    let d = p.primal_dim();

    let mut affinity = CheckOutcome::new("phi affinity");
    let mut psi_zero = CheckOutcome::new("psi(0) = 0");
    let mut psi_nonneg = CheckOutcome::new("psi >= 0");
    let mut psi_linear = CheckOutcome::new("psi variation linear in f");
    let mut psi_deriv = CheckOutcome::new("psi variation matches directional derivative");
    let mut convex = CheckOutcome::new("psi convexity");
    let mut strong = CheckOutcome::new("psi strong convexity");
    let mut in_box = CheckOutcome::new("data in box");

    let zero = |_: &[f64]| 0.0;
    for _ in 0..trials.max(1) {
        let s = p.sample(&mut rng);
        let n1 = random_net(&mut rng, d);
        let n2 = random_net(&mut rng, d);
        let nh = random_net(&mut rng, d);
        let (a, b): (f64, f64) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let f1 = |w: &[f64]| n1.eval_unchecked(w);
        let f2 = |w: &[f64]| n2.eval_unchecked(w);
        let h = |w: &[f64]| nh.eval_unchecked(w);
        let comb = |w: &[f64]| a * f1(w) + b * f2(w);
        let wit = || format!("x={:?} z={:?} y={} a={a:.4} b={b:.4}", s.x, s.z, s.y);

        let mut outside = 0.0;
        if !boxes.contains_primal(&s.x) || s.x.len() != d {
            outside = 1.0;
        }
        if !boxes.contains_dual(&s.z) || s.z.len() != p.dual_dim() {
            outside = 1.0;
        }
        for m in p.phi_variation(&s).iter().chain(&p.psi_variation(&s, &f1)) {
            if !boxes.contains_primal(&m.point) {
                outside = 1.0;
            }
        }
        for m in p.dual_offset(&s) {
            if !boxes.contains_dual(&m.point) {
                outside = 1.0;
            }
        }
        in_box.record(outside, wit);

        let p0 = p.phi_value(&s, &zero);
        let lhs = p.phi_value(&s, &comb) - p0;
        let rhs = a * (p.phi_value(&s, &f1) - p0) + b * (p.phi_value(&s, &f2) - p0);
        affinity.record((lhs - rhs).abs() / (1.0 + rhs.abs()), wit);

        psi_zero.record(p.psi_value(&s, &zero).abs(), wit);
        let psi1 = p.psi_value(&s, &f1);
        let psi2 = p.psi_value(&s, &f2);
        psi_nonneg.record(-psi1.min(p.psi_value(&s, &comb)), wit);

        let lhs = p.psi_pairing(&s, &comb, &h);
        let rhs = a * p.psi_pairing(&s, &f1, &h) + b * p.psi_pairing(&s, &f2, &h);
        psi_linear.record((lhs - rhs).abs() / (1.0 + rhs.abs()), wit);

        let t = 1e-3;
        let up = |w: &[f64]| f1(w) + t * h(w);
        let dn = |w: &[f64]| f1(w) - t * h(w);
        let fd = (p.psi_value(&s, &up) - p.psi_value(&s, &dn)) / (2.0 * t);
        let an = p.psi_pairing(&s, &f1, &h);
        psi_deriv.record(((fd - an).abs() / (1.0 + an.abs()) - 1e-7).max(0.0), wit);

        let mid = |w: &[f64]| 0.5 * (f1(w) + f2(w));
        let gap = p.psi_value(&s, &mid) - 0.5 * (psi1 + psi2);
        convex.record((gap / (1.0 + psi1 + psi2)).max(0.0), wit);

        if let Some((c, w)) = p.strong_convexity(&s) {
            let fw = f1(&w);
            strong.record(((c * fw * fw - psi1) / (1.0 + psi1)).max(0.0), wit);
        }
    }

    ProblemReport {
        problem: p.name().to_string(),
        trials,
        checks: vec![affinity, psi_zero, psi_nonneg, psi_linear, psi_deriv, convex, strong, in_box],
    }
}

/// A small in-memory problem for tests: `Φ = y − f(x)`, `Ψ = f(x)²`,
/// `x = z ~ U[−1, 1]`, `y = x`.
#[cfg(test)]
pub(crate) mod toy {
    use super::*;

    pub struct Toy {
        pub lambda: f64,
    }

    impl MomentProblem for Toy {
        fn name(&self) -> &str {
            "toy"
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
            let x: f64 = rng.random_range(-1.0..=1.0);
            Sample { x: vec![x], z: vec![x], y: x }
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
}

#[cfg(test)]
mod tests {
    use super::toy::Toy;
    use super::*;

    struct ShiftedPsi(Toy);
    struct QuadraticPhi(Toy);

    macro_rules! delegate {
        ($t:ty) => {
            impl MomentProblem for $t {
                fn name(&self) -> &str {
                    "mutant"
                }
                fn primal_dim(&self) -> usize {
                    1
                }
                fn dual_dim(&self) -> usize {
                    1
                }
                fn lambda(&self) -> f64 {
                    self.0.lambda
                }
                fn boxes(&self) -> DomainBoxes {
                    self.0.boxes()
                }
                fn sample(&self, rng: &mut dyn RngCore) -> Sample {
                    self.0.sample(rng)
                }
                fn phi_at_zero(&self, s: &Sample) -> f64 {
                    self.0.phi_at_zero(s)
                }
                fn phi_variation(&self, s: &Sample) -> Variation {
                    self.0.phi_variation(s)
                }
                fn phi_value(&self, s: &Sample, f: Func) -> f64 {
                    self.mutated_phi(s, f)
                }
                fn psi_value(&self, s: &Sample, f: Func) -> f64 {
                    self.mutated_psi(s, f)
                }
                fn psi_variation(&self, s: &Sample, f: Func) -> Variation {
                    self.0.psi_variation(s, f)
                }
            }
        };
    }

    impl ShiftedPsi {
        fn mutated_phi(&self, s: &Sample, f: Func) -> f64 {
            self.0.phi_value(s, f)
        }
        fn mutated_psi(&self, s: &Sample, f: Func) -> f64 {
            self.0.psi_value(s, f) + 0.1
        }
    }

    impl QuadraticPhi {
        fn mutated_phi(&self, s: &Sample, f: Func) -> f64 {
            s.y - f(&s.x).powi(2)
        }
        fn mutated_psi(&self, s: &Sample, f: Func) -> f64 {
            self.0.psi_value(s, f)
        }
    }

    delegate!(ShiftedPsi);
    delegate!(QuadraticPhi);

    #[test]
    fn toy_problem_passes() {
        let r = check_problem(&Toy { lambda: 0.1 }, 2000, 1);
        assert!(r.passed(), "{:?}", r.into_result().unwrap_err());
    }

    #[test]
    fn shifted_regularizer_fails_psi_zero() {
        let r = check_problem(&ShiftedPsi(Toy { lambda: 0.1 }), 50, 1);
        let c = r.checks.iter().find(|c| c.name == "psi(0) = 0").unwrap();
        assert!((c.max_violation - 0.1).abs() < 1e-12);
        assert!(c.witness.is_some());
        let msg = r.into_result().unwrap_err().to_string();
        assert!(msg.contains("psi(0) = 0"), "{msg}");
    }

    #[test]
    fn quadratic_phi_fails_affinity() {
        let r = check_problem(&QuadraticPhi(Toy { lambda: 0.0 }), 50, 1);
        let c = r.checks.iter().find(|c| c.name == "phi affinity").unwrap();
        assert!(c.max_violation > 1e-3);
        assert!(!r.passed());
    }

    #[test]
    fn phi_eval_of_zero_function_is_offset() {
        let s = Sample { x: vec![0.2], z: vec![0.2], y: 0.7 };
        assert_eq!(phi_eval(&Toy { lambda: 0.0 }, &s, &|_| 0.0), 0.7);
    }

    #[test]
    fn default_dual_offset_is_phi_at_zero_at_z() {
        let s = Sample { x: vec![0.2], z: vec![-0.4], y: 0.7 };
        let u = Toy { lambda: 0.0 }.dual_offset(&s);
        assert_eq!(u, vec![PointMass::new(0.7, vec![-0.4])]);
    }
}
