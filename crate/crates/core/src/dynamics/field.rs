//! Velocity fields of the mean-field dynamics.
//!
//! For every shipped problem the update direction of a neuron is a finite
//! combination `v(θ) = Σₚ cₚ ∇θ φ(xₚ; θ)` of neuron gradients at data points.
//! A field is therefore stored as its "charges" `(xₚ, cₚ)`, computed once per
//! step from a frozen snapshot of both networks and then applied to each
//! particle independently.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::ensemble::ParticleEnsemble;
use crate::neuron;
use crate::problem::{Func, MomentProblem, Sample};

/// Point charges on one network's input domain.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Charges {
    input_dim: usize,
    points: Vec<f64>,
    coefs: Vec<f64>,
}

/// Accumulates charges, merging repeated points in first-seen order.
pub struct ChargeBuilder {
    charges: Charges,
    index: HashMap<Vec<u64>, usize>,
}

impl ChargeBuilder {
    pub fn new(input_dim: usize) -> Self {
        Self { charges: Charges { input_dim, ..Default::default() }, index: HashMap::new() }
    }

    pub fn add(&mut self, point: &[f64], coef: f64) {
        let key = point_key(point);
        match self.index.get(&key) {
            Some(&i) => self.charges.coefs[i] += coef,
            None => {
                self.index.insert(key, self.charges.coefs.len());
                self.charges.points.extend_from_slice(point);
                self.charges.coefs.push(coef);
            }
        }
    }

    pub fn finish(self) -> Charges {
        self.charges
    }
}

impl Charges {
    pub fn empty(input_dim: usize) -> Self {
        Self { input_dim, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.coefs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.chunks_exact(self.input_dim.max(1)).zip(self.coefs.iter().copied())
    }

    /// Adds `Σₚ cₚ ∇φ(xₚ; param)` into `out`.
    pub fn velocity_into(&self, param: &[f64], out: &mut [f64]) {
        let d = self.input_dim;
        for (k, &c) in self.coefs.iter().enumerate() {
            neuron::add_grad_unchecked(&self.points[k * d..(k + 1) * d], param, c, out);
        }
    }

    pub fn velocity(&self, param: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; param.len()];
        self.velocity_into(param, &mut out);
        out
    }
}

/// The drifts of both networks at one instant, per unit `ηε`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub primal: Charges,
    pub dual: Charges,
}

/// Work (particles × charges) above which per-particle maps go parallel.
const PARALLEL_WORK: usize = 1 << 15;

/// Adds the charges of one weighted sample, with `f`, `g` given as
/// functions and `af`, `ag` their output scales.
///
/// Primal: `−α_f w [g(z) δΦ/δf + λ δΨ/δf|_f]`.
/// Dual: `α_g w [u + (⟨δΦ/δf, f⟩ − g(z)) δ_z]` where `u` is the dual offset.
#[allow(clippy::too_many_arguments)]
pub fn add_sample_charges(
    p: &dyn MomentProblem,
    f: Func,
    g: Func,
    (af, ag): (f64, f64),
    w: f64,
    s: &Sample,
    pb: &mut ChargeBuilder,
    db: &mut ChargeBuilder,
) {
    let lambda = p.lambda();
    let gz = g(&s.z);
    let mut pairing = 0.0;
    for m in p.phi_variation(s) {
        pairing += m.weight * f(&m.point);
        pb.add(&m.point, -af * w * gz * m.weight);
    }
    if lambda != 0.0 {
        for m in p.psi_variation(s, f) {
            pb.add(&m.point, -af * w * lambda * m.weight);
        }
    }
    for m in p.dual_offset(s) {
        db.add(&m.point, ag * w * m.weight);
    }
    db.add(&s.z, ag * w * (pairing - gz));
}

/// The anchor penalty's primal charge, `−2 α_f κ (f(c) − target)` at `c`.
pub fn add_anchor_charge(p: &dyn MomentProblem, f: Func, af: f64, pb: &mut ChargeBuilder) {
    if let Some(a) = p.anchor() {
        pb.add(&a.point, -af * 2.0 * a.weight * (f(&a.point) - a.target));
    }
}

fn point_key(point: &[f64]) -> Vec<u64> {
    point.iter().map(|v| v.to_bits()).collect()
}

/// Network values cached by input point; finite-state batches revisit the
/// same few states many times.
struct Memo<'a> {
    net: &'a ParticleEnsemble,
    cache: Mutex<HashMap<Vec<u64>, f64>>,
}

impl<'a> Memo<'a> {
    fn new(net: &'a ParticleEnsemble) -> Self {
        Self { net, cache: Mutex::new(HashMap::new()) }
    }

    fn get(&self, w: &[f64]) -> f64 {
        let key = point_key(w);
        if let Some(&v) = self.cache.lock().expect("memo lock").get(&key) {
            return v;
        }
        let v = self.net.eval_unchecked(w);
        self.cache.lock().expect("memo lock").insert(key, v);
        v
    }
}

/// Estimates both velocity fields from a weighted batch of samples.
pub fn field_from_batch(
    p: &dyn MomentProblem,
    primal: &ParticleEnsemble,
    dual: &ParticleEnsemble,
    batch: &[(f64, Sample)],
) -> VelocityField {
    let scales = (primal.alpha(), dual.alpha());
    let (fm, gm) = (Memo::new(primal), Memo::new(dual));
    let (f, g) = (|w: &[f64]| fm.get(w), |w: &[f64]| gm.get(w));
    let mut pb = ChargeBuilder::new(primal.input_dim());
    let mut db = ChargeBuilder::new(dual.input_dim());
    for (w, s) in batch {
        add_sample_charges(p, &f, &g, scales, *w, s, &mut pb, &mut db);
    }
    add_anchor_charge(p, &f, scales.0, &mut pb);
    VelocityField { primal: pb.finish(), dual: db.finish() }
}

/// `θᵢ ← θᵢ + scale · v(θᵢ)` for every particle.
pub fn apply(ens: &mut ParticleEnsemble, charges: &Charges, scale: f64) {
    let dim = ens.dim();
    let step = |p: &mut [f64]| {
        let mut v = [0.0f64; 16];
        let mut heap;
        let v: &mut [f64] = if dim <= 16 {
            &mut v[..dim]
        } else {
            heap = vec![0.0; dim];
            &mut heap
        };
        charges.velocity_into(p, v);
        for (a, b) in p.iter_mut().zip(v.iter()) {
            *a += scale * b;
        }
    };
    if ens.len() * charges.len() >= PARALLEL_WORK {
        ens.as_flat_mut().par_chunks_mut(dim).for_each(step);
    } else {
        ens.as_flat_mut().chunks_mut(dim).for_each(step);
    }
}

/// `out[i] = v(θᵢ)` for every particle, as a flat `N × D` buffer.
pub fn velocities(ens: &ParticleEnsemble, charges: &Charges) -> Vec<f64> {
    let dim = ens.dim();
    let mut out = vec![0.0; ens.as_flat().len()];
    let fill = |(o, p): (&mut [f64], &[f64])| charges.velocity_into(p, o);
    if ens.len() * charges.len() >= PARALLEL_WORK {
        out.par_chunks_mut(dim).zip(ens.as_flat().par_chunks(dim)).for_each(fill);
    } else {
        out.chunks_mut(dim).zip(ens.as_flat().chunks(dim)).for_each(fill);
    }
    out
}

/// Which network a drift refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Primal,
    Dual,
}

/// Per-unit-`η` SGDA drift of neuron `i` on one sample: `ε · v(θᵢ)`.
pub fn sgda_update_direction(
    p: &dyn MomentProblem,
    sample: &Sample,
    primal: &ParticleEnsemble,
    dual: &ParticleEnsemble,
    i: usize,
    side: Side,
    eps: f64,
) -> Vec<f64> {
    let field = field_from_batch(p, primal, dual, &[(1.0, sample.clone())]);
    let (charges, param) = match side {
        Side::Primal => (&field.primal, primal.particle(i)),
        Side::Dual => (&field.dual, dual.particle(i)),
    };
    charges.velocity(param).into_iter().map(|v| eps * v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::NetKind;
    use crate::problem::toy::Toy;
    use crate::rng::stream_rng;

    #[test]
    fn repeated_points_are_merged_in_order() {
        let mut b = ChargeBuilder::new(1);
        b.add(&[0.5], 1.0);
        b.add(&[-0.5], 2.0);
        b.add(&[0.5], 0.25);
        let c = b.finish();
        let got: Vec<(Vec<f64>, f64)> = c.iter().map(|(p, c)| (p.to_vec(), c)).collect();
        assert_eq!(got, vec![(vec![0.5], 1.25), (vec![-0.5], 2.0)]);
    }

    #[test]
    fn zero_dual_and_no_regularizer_freezes_primal() {
        let p = Toy { lambda: 0.0 };
        let f = ParticleEnsemble::init_gaussian(NetKind::Primal, 8, 3, 2.0, 1, false).unwrap();
        let g = ParticleEnsemble::init_gaussian(NetKind::Dual, 8, 3, 2.0, 1, true).unwrap();
        let s = p.sample(&mut stream_rng(0, 0));
        for i in 0..8 {
            let d = sgda_update_direction(&p, &s, &f, &g, i, Side::Primal, 0.125);
            assert!(d.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn matched_dual_has_no_ascent_direction() {
        // With f ≡ 0 the residual is y, so choose y = g(z).
        let p = Toy { lambda: 0.0 };
        let f = ParticleEnsemble::init_gaussian(NetKind::Primal, 8, 3, 2.0, 1, true).unwrap();
        let g = ParticleEnsemble::init_gaussian(NetKind::Dual, 8, 3, 2.0, 2, false).unwrap();
        let z = 0.3;
        let s = Sample { x: vec![z], z: vec![z], y: g.eval(&[z]).unwrap() };
        for i in 0..8 {
            let d = sgda_update_direction(&p, &s, &f, &g, i, Side::Dual, 0.125);
            assert!(d.iter().all(|v| v.abs() < 1e-15), "{d:?}");
        }
    }

    #[test]
    fn apply_and_velocities_agree() {
        let p = Toy { lambda: 0.3 };
        let mut f = ParticleEnsemble::init_gaussian(NetKind::Primal, 6, 3, 2.0, 4, false).unwrap();
        let g = ParticleEnsemble::init_gaussian(NetKind::Dual, 6, 3, 2.0, 5, false).unwrap();
        let batch: Vec<_> = (0..4).map(|k| (0.25, p.sample(&mut stream_rng(k, 0)))).collect();
        let field = field_from_batch(&p, &f, &g, &batch);
        let v = velocities(&f, &field.primal);
        let before = f.as_flat().to_vec();
        apply(&mut f, &field.primal, 0.1);
        for k in 0..before.len() {
            assert_eq!(f.as_flat()[k], before[k] + 0.1 * v[k]);
        }
    }
}
