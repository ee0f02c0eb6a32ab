//! Empirical parameter ensembles and the scaled two-layer networks they induce.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::neuron::{self, NeuronSpec};
use crate::rng::{stream, stream_rng};

/// Which side of the minimax problem an ensemble parameterizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetKind {
    Primal,
    Dual,
}

/// One neuron `(β, θ̃)`; `hidden` holds `d` weights followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronParam {
    pub beta: f64,
    pub hidden: Vec<f64>,
}

impl NeuronParam {
    pub fn dim(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.beta);
        v.extend_from_slice(&self.hidden);
        v
    }

    pub fn from_slice(p: &[f64]) -> Self {
        Self { beta: p[0], hidden: p[1..].to_vec() }
    }
}

/// `N` particles of dimension `D` stored row-major, plus the scaling `α`.
///
/// The induced network is `x ↦ (α/N) Σᵢ φ(x; θᵢ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleRecord", into = "EnsembleRecord")]
pub struct ParticleEnsemble {
    kind: NetKind,
    alpha: f64,
    dim: usize,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EnsembleRecord {
    kind: NetKind,
    alpha: f64,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "D")]
    dim: usize,
    particles: Vec<f64>,
}

impl From<ParticleEnsemble> for EnsembleRecord {
    fn from(e: ParticleEnsemble) -> Self {
        EnsembleRecord { kind: e.kind, alpha: e.alpha, n: e.len(), dim: e.dim, particles: e.params }
    }
}

impl TryFrom<EnsembleRecord> for ParticleEnsemble {
    type Error = Error;
    fn try_from(r: EnsembleRecord) -> Result<Self> {
        if r.particles.len() != r.n * r.dim {
            return Err(Error::Dimension { expected: r.n * r.dim, got: r.particles.len() });
        }
        ParticleEnsemble::new(r.kind, r.alpha, r.dim, r.particles)
    }
}

impl ParticleEnsemble {
    pub fn new(kind: NetKind, alpha: f64, dim: usize, params: Vec<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return config(format!("alpha must be positive and finite, got {alpha}"));
        }
        if dim < 2 {
            return config(format!("particle dimension must be at least 2, got {dim}"));
        }
        if params.is_empty() || params.len() % dim != 0 {
            return config(format!(
                "particle buffer of length {} is not a nonempty multiple of D={dim}",
                params.len()
            ));
        }
        if let Some(pos) = params.iter().position(|v| !v.is_finite()) {
            return config(format!("non-finite parameter at particle {}", pos / dim));
        }
        Ok(Self { kind, alpha, dim, params })
    }

    pub fn from_particles(kind: NetKind, alpha: f64, particles: &[NeuronParam]) -> Result<Self> {
        let Some(first) = particles.first() else {
            return config("ensemble needs at least one particle");
        };
        let dim = first.dim();
        let mut params = Vec::with_capacity(dim * particles.len());
        for p in particles {
            if p.dim() != dim {
                return Err(Error::Dimension { expected: dim, got: p.dim() });
            }
            params.push(p.beta);
            params.extend_from_slice(&p.hidden);
        }
        Self::new(kind, alpha, dim, params)
    }

    /// I.i.d. `N(0, I_D)` particles. With `antithetic`, particle `2k+1` is
    /// particle `2k` with `β` negated, so the initial network is exactly zero.
    pub fn init_gaussian(
        kind: NetKind,
        n: usize,
        dim: usize,
        alpha: f64,
        seed: u64,
        antithetic: bool,
    ) -> Result<Self> {
        let stream = match kind {
            NetKind::Primal => stream::INIT_PRIMAL,
            NetKind::Dual => stream::INIT_DUAL,
        };
        Self::init_gaussian_from(kind, n, dim, alpha, &mut stream_rng(seed, stream), antithetic)
    }

    pub fn init_gaussian_from(
        kind: NetKind,
        n: usize,
        dim: usize,
        alpha: f64,
        rng: &mut impl Rng,
        antithetic: bool,
    ) -> Result<Self> {
        if n == 0 {
            return config("ensemble width must be at least 1");
        }
        if antithetic && n % 2 == 1 {
            return config(format!("antithetic initialization needs an even width, got {n}"));
        }
        let mut params = Vec::with_capacity(n * dim);
        if antithetic {
            for _ in 0..n / 2 {
                let p: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                params.extend_from_slice(&p);
                params.push(-p[0]);
                params.extend_from_slice(&p[1..]);
            }
        } else {
            params.extend((0..n * dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        }
        Self::new(kind, alpha, dim, params)
    }

    /// Zero network on 1-D inputs whose neurons are ramps
    /// `sigmoid(slope · (w − cᵢ))` with centres evenly spaced on `[lo, hi]`.
    /// A convenient hidden layer for [`Self::fit_output_layer`].
    pub fn ramps(kind: NetKind, n: usize, alpha: f64, slope: f64, lo: f64, hi: f64) -> Result<Self> {
        if n < 2 || !(lo < hi) {
            return config("ramp features need n >= 2 and lo < hi");
        }
        let mut params = Vec::with_capacity(3 * n);
        for i in 0..n {
            let c = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            params.extend_from_slice(&[0.0, slope, -slope * c]);
        }
        Self::new(kind, alpha, 3, params)
    }

    pub fn kind(&self) -> NetKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.params.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameter dimension `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Input dimension `d = D - 2`.
    pub fn input_dim(&self) -> usize {
        self.dim - 2
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.params[i * self.dim..(i + 1) * self.dim]
    }

    pub fn neuron(&self, i: usize) -> NeuronParam {
        NeuronParam::from_slice(self.particle(i))
    }

    pub fn particles(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.params.chunks_exact(self.dim)
    }

    /// Flat row-major `N × D` buffer.
    pub fn as_flat(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn eval(&self, input: &[f64]) -> Result<f64> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: input.len() });
        }
        Ok(self.eval_unchecked(input))
    }

    /// The network as a plain function; inputs must have `input_dim` entries.
    pub fn func(&self) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
        move |w| self.eval_unchecked(w)
    }

    pub(crate) fn eval_unchecked(&self, input: &[f64]) -> f64 {
        let s: f64 = self.particles().map(|p| neuron::eval_unchecked(input, p)).sum();
        self.alpha * s / self.len() as f64
    }

    /// Concatenation of two ensembles sharing kind, `α` and `D`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: other.dim });
        }
        if other.alpha != self.alpha || other.kind != self.kind {
            return config("concatenated ensembles must share kind and alpha");
        }
        let mut params = self.params.clone();
        params.extend_from_slice(&other.params);
        Self::new(self.kind, self.alpha, self.dim, params)
    }

    /// Multiplies every hidden weight and bias by `s`, leaving `β` alone.
    pub fn scale_hidden(&mut self, s: f64) {
        for p in self.params.chunks_exact_mut(self.dim) {
            p[1..].iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.kind, alpha, self.dim, self.params.clone())
    }

    pub fn max_norm(&self) -> f64 {
        self.particles()
            .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Keeps every hidden layer fixed and sets output weights so that the
    /// network matches `target` at `points` in least squares.
    ///
    /// Solves a ridge problem (minimum-norm when `ridge = 0`) for
    /// `b_i = tanh(β_i)`, with the penalty relative to the largest squared
    /// singular value. Fails if any `|b_i|` would reach 1, which means `α` is
    /// too small for the target.
    pub fn fit_output_layer(&self, points: &[Vec<f64>], target: &[f64], ridge: f64) -> Result<Self> {
        let n = self.len();
        let m = points.len();
        if target.len() != m {
            return Err(Error::Dimension { expected: m, got: target.len() });
        }
        let scale = self.alpha / n as f64;
        let mut a = nalgebra::DMatrix::<f64>::zeros(m, n);
        for (r, x) in points.iter().enumerate() {
            if x.len() != self.input_dim() {
                return Err(Error::Dimension { expected: self.input_dim(), got: x.len() });
            }
            for i in 0..n {
                let p = self.particle(i);
                a[(r, i)] = scale * neuron::sigmoid(neuron::preactivation(x, &p[1..]));
            }
        }
        let y = nalgebra::DVector::from_column_slice(target);
        let svd = a.svd(true, true);
        let (u, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
        let smax = svd.singular_values.max();
        let mut b = nalgebra::DVector::<f64>::zeros(n);
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s <= 1e-13 * smax {
                continue;
            }
            let c = u.column(k).dot(&y) * s / (s * s + ridge * smax * smax);
            b += v_t.row(k).transpose() * c;
        }
        let mut params = self.params.clone();
        for i in 0..n {
            if b[i].abs() >= 1.0 - 1e-12 {
                return config(format!(
                    "output-layer fit needs |tanh(beta)| = {:.3} >= 1; increase alpha",
                    b[i].abs()
                ));
            }
            params[i * self.dim] = b[i].atanh();
        }
        Self::new(self.kind, self.alpha, self.dim, params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// The neuron-level bounds that apply to this ensemble on a box of radius `c1`.
    pub fn spec(&self, c1: f64) -> NeuronSpec {
        NeuronSpec::new(self.input_dim(), c1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_output_weights_give_zero_network() {
        let mut e = ParticleEnsemble::init_gaussian(NetKind::Primal, 8, 3, 4.0, 1, false).unwrap();
        for i in 0..8 {
            e.as_flat_mut()[i * 3] = 0.0;
        }
        assert_eq!(e.eval(&[0.3]).unwrap(), 0.0);
    }

    #[test]
    fn single_particle_scales_by_alpha() {
        let p = [0.7, -0.4, 0.2];
        let e = ParticleEnsemble::new(NetKind::Dual, 2.0, 3, p.to_vec()).unwrap();
        let want = 2.0 * neuron::neuron_eval(&[0.5], &p).unwrap();
        assert_eq!(e.eval(&[0.5]).unwrap(), want);
    }

    #[test]
    fn antithetic_network_is_identically_zero() {
        let e = ParticleEnsemble::init_gaussian(NetKind::Primal, 64, 4, 8.0, 9, true).unwrap();
        for x in [[-1.0, 0.5], [0.0, 0.0], [0.9, -0.3]] {
            assert_eq!(e.eval(&x).unwrap(), 0.0);
        }
    }

    #[test]
    fn odd_antithetic_width_is_rejected() {
        assert!(matches!(
            ParticleEnsemble::init_gaussian(NetKind::Primal, 5, 3, 1.0, 0, true),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn initialization_is_deterministic() {
        let a = ParticleEnsemble::init_gaussian(NetKind::Dual, 32, 3, 1.0, 42, false).unwrap();
        let b = ParticleEnsemble::init_gaussian(NetKind::Dual, 32, 3, 1.0, 42, false).unwrap();
        assert_eq!(a, b);
        let c = ParticleEnsemble::init_gaussian(NetKind::Primal, 32, 3, 1.0, 42, false).unwrap();
        assert_ne!(a.as_flat(), c.as_flat());
    }

    #[test]
    fn gaussian_coordinate_means_are_within_clt_band() {
        let n = 4096;
        let e = ParticleEnsemble::init_gaussian(NetKind::Primal, n, 3, 1.0, 5, false).unwrap();
        for k in 0..3 {
            let mean: f64 = e.particles().map(|p| p[k]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "coordinate {k}: {mean}");
        }
    }

    #[test]
    fn rejects_bad_alpha_and_non_finite() {
        assert!(ParticleEnsemble::new(NetKind::Primal, -1.0, 3, vec![0.0; 3]).is_err());
        assert!(ParticleEnsemble::new(NetKind::Primal, 1.0, 3, vec![0.0, f64::NAN, 0.0]).is_err());
        assert!(ParticleEnsemble::new(NetKind::Primal, 1.0, 3, vec![0.0; 4]).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let e = ParticleEnsemble::init_gaussian(NetKind::Dual, 17, 4, 3.3, 8, false).unwrap();
        let s = e.to_json().unwrap();
        assert!(s.contains("\"N\":17") && s.contains("\"kind\":\"dual\""));
        let back = ParticleEnsemble::from_json(&s).unwrap();
        assert_eq!(e.alpha().to_bits(), back.alpha().to_bits());
        for (a, b) in e.as_flat().iter().zip(back.as_flat()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn json_with_wrong_shape_is_rejected() {
        let s = r#"{"kind":"primal","alpha":1.0,"N":2,"D":3,"particles":[0,0,0]}"#;
        assert!(ParticleEnsemble::from_json(s).is_err());
    }

    #[test]
    fn output_layer_fit_interpolates_few_points() {
        let e = ParticleEnsemble::init_gaussian(NetKind::Primal, 64, 3, 8.0, 2, false).unwrap();
        let pts: Vec<Vec<f64>> = (0..3).map(|i| vec![-1.0 + i as f64]).collect();
        let target: Vec<f64> = pts.iter().map(|x| 0.5 * x[0].sin()).collect();
        let fit = e.fit_output_layer(&pts, &target, 0.0).unwrap();
        for (x, t) in pts.iter().zip(&target) {
            assert!((fit.eval(x).unwrap() - t).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn network_is_linear_in_the_measure(
            n1 in 1usize..12, n2 in 1usize..12, seed in 0u64..1000, x in -1.0f64..1.0
        ) {
            let a = ParticleEnsemble::init_gaussian(NetKind::Primal, n1, 3, 2.5, seed, false).unwrap();
            let b = ParticleEnsemble::init_gaussian(NetKind::Dual, n2, 3, 2.5, seed, false).unwrap();
            let b = ParticleEnsemble::new(NetKind::Primal, 2.5, 3, b.as_flat().to_vec()).unwrap();
            let joint = a.concat(&b).unwrap().eval(&[x]).unwrap();
            let mix = (n1 as f64 * a.eval(&[x]).unwrap() + n2 as f64 * b.eval(&[x]).unwrap())
                / (n1 + n2) as f64;
            prop_assert!((joint - mix).abs() < 1e-12);
        }

        #[test]
        fn network_is_bounded_by_alpha(seed in 0u64..1000, x in -3.0f64..3.0, alpha in 0.1f64..20.0) {
            let e = ParticleEnsemble::init_gaussian(NetKind::Primal, 10, 3, alpha, seed, false).unwrap();
            prop_assert!(e.eval(&[x]).unwrap().abs() <= alpha);
        }
    }
}
