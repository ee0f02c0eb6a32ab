//! Riesz representer of the shift functional `m(x; g) = g(x + δ) − g(x)`
//! under a truncated Gaussian design.
//!
//! The representer solves `E[f₀(X) g(X)] = E[m(X; g)]` for all `g`; the
//! minimax form pairs the dual with `m` instead of a conditional residual.

use rand::RngCore;
use rand_distr::{Distribution, Normal};

use crate::error::{config, Result};
use crate::problem::{DomainBoxes, Func, GroundTruth, MomentProblem, PointMass, Sample, Variation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RieszShift {
    pub delta: f64,
    pub sigma: f64,
}

impl Default for RieszShift {
    fn default() -> Self {
        Self { delta: 0.25, sigma: 1.0 }
    }
}

impl RieszShift {
    pub fn validate(&self) -> Result<()> {
        if !self.delta.is_finite() {
            return config("riesz.delta must be finite");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return config("riesz.sigma must be positive");
        }
        Ok(())
    }

    /// Truncation radius: at least four shifts and four standard deviations.
    pub fn radius(&self) -> f64 {
        (4.0 * self.delta.abs()).max(4.0 * self.sigma)
    }

    /// `p(x − δ)/p(x) − 1` for the untruncated density.
    pub fn representer(&self, x: f64) -> f64 {
        let (d, s2) = (self.delta, self.sigma * self.sigma);
        ((2.0 * d * x - d * d) / (2.0 * s2)).exp() - 1.0
    }

    /// Probability that an untruncated draw lands within `|δ|` of the
    /// truncation boundary or beyond it, which bounds how far the truncated
    /// identity can drift from the untruncated one.
    pub fn truncation_mass(&self) -> f64 {
        let r = self.radius() - self.delta.abs();
        libm::erfc(r / (self.sigma * std::f64::consts::SQRT_2))
    }

    fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        let law = Normal::new(0.0, self.sigma).expect("validated sigma");
        let c = self.radius();
        loop {
            let x = law.sample(rng);
            if x.abs() <= c {
                return x;
            }
        }
    }
}

/// Primal pairing `−h(x)`, dual offset `m(x; ·)`, `Ψ = f(x)²`, and `z = x`.
pub struct RieszProblem {
    spec: RieszShift,
    lambda: f64,
}

impl RieszProblem {
    pub fn spec(&self) -> &RieszShift {
        &self.spec
    }
}

impl MomentProblem for RieszProblem {
    fn name(&self) -> &str {
        "riesz"
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
        let b = self.spec.radius() + self.spec.delta.abs();
        DomainBoxes { primal: b, dual: b }
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Sample {
        let x = self.spec.draw(rng);
        Sample { x: vec![x], z: vec![x], y: 0.0 }
    }

    fn phi_at_zero(&self, _s: &Sample) -> f64 {
        0.0
    }

    fn phi_variation(&self, s: &Sample) -> Variation {
        vec![PointMass::new(-1.0, s.x.clone())]
    }

    fn dual_offset(&self, s: &Sample) -> Variation {
        vec![PointMass::new(1.0, vec![s.x[0] + self.spec.delta]), PointMass::new(-1.0, s.x.clone())]
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

/// `f* = f₀/(1 + 2λ)`, `g* = 2λ f₀/(1 + 2λ)`, and the unconditional residual
/// `δ̄(x; f) = f₀(x) − f(x)`.
pub struct RieszTruth {
    spec: RieszShift,
    lambda: f64,
}

impl GroundTruth for RieszTruth {
    fn f_star(&self, w: &[f64]) -> f64 {
        self.spec.representer(w[0]) / (1.0 + 2.0 * self.lambda)
    }

    fn g_star(&self, z: &[f64]) -> f64 {
        2.0 * self.lambda * self.spec.representer(z[0]) / (1.0 + 2.0 * self.lambda)
    }

    fn cond_exp(&self, z: &[f64], f: Func) -> f64 {
        self.spec.representer(z[0]) - f(z)
    }

    fn f0(&self, w: &[f64]) -> Option<f64> {
        Some(self.spec.representer(w[0]))
    }
}

pub fn make_riesz(spec: RieszShift, lambda: f64) -> Result<(RieszProblem, RieszTruth)> {
    spec.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return config(format!("lambda must be nonnegative, got {lambda}"));
    }
    Ok((RieszProblem { spec, lambda }, RieszTruth { spec, lambda }))
}

/// `(mean, standard error)` of `f₀(X) g(X) − m(X; g)` over `n` draws.
pub fn representer_gap(p: &RieszProblem, g: Func, n: usize, rng: &mut dyn RngCore) -> (f64, f64) {
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let s = p.sample(rng);
        let x = s.x[0];
        let m = g(&[x + p.spec.delta]) - g(&[x]);
        let v = p.spec.representer(x) * g(&[x]) - m;
        s1 += v;
        s2 += v * v;
    }
    let mean = s1 / n as f64;
    let var = (s2 / n as f64 - mean * mean).max(0.0);
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{NetKind, ParticleEnsemble};
    use crate::problem::check_problem;
    use crate::rng::stream_rng;

    #[test]
    fn standard_normal_half_shift_at_origin() {
        let s = RieszShift { delta: 0.5, sigma: 1.0 };
        assert!((s.representer(0.0) - (-0.117_503_097_415_404_3)).abs() < 1e-14);
    }

    #[test]
    fn zero_shift_is_trivial() {
        let s = RieszShift { delta: 0.0, sigma: 1.0 };
        let (p, t) = make_riesz(s, 0.0).unwrap();
        let smp = p.sample(&mut stream_rng(0, 0));
        assert_eq!(p.dual_offset(&smp)[0].point, smp.x);
        assert_eq!(t.f0(&[0.3]), Some(0.0));
        assert_eq!(s.representer(1.7), 0.0);
    }

    #[test]
    fn passes_problem_checks() {
        let (p, _) = make_riesz(RieszShift::default(), 0.05).unwrap();
        assert!(check_problem(&p, 10_000, 4).passed());
        assert!(RieszShift::default().truncation_mass() < 1e-3);
    }

    #[test]
    fn representer_identity_holds_for_random_networks() {
        let (p, _) = make_riesz(RieszShift::default(), 0.0).unwrap();
        let mut rng = stream_rng(5, 0);
        for k in 0..20 {
            let g = ParticleEnsemble::init_gaussian(NetKind::Dual, 16, 3, 2.0, k, false).unwrap();
            let gf = |w: &[f64]| g.eval(w).unwrap();
            let (mean, se) = representer_gap(&p, &gf, 100_000, &mut rng);
            assert!(mean.abs() < 3.0 * se + 1e-12, "network {k}: {mean} vs se {se}");
        }
    }
}
