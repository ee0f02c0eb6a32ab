//! Weak distance between particle clouds over a fixed dictionary of bounded
//! 1-Lipschitz test functions on parameter space.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{config, Error, Result};
use crate::rng::{stream, stream_rng};

/// A test function `h` with `‖h‖∞ ≤ 1` and `Lip(h) ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// `tanh(c · x_j)`, `c ≤ 1`.
    Tanh { coord: usize, scale: f64 },
    /// `tanh(c x_j) tanh(c x_k) / √2`, `c ≤ 1`.
    Product { first: usize, second: usize, scale: f64 },
    /// `cos(wᵀx + b) / max(1, ‖w‖)`.
    Feature { weights: Vec<f64>, phase: f64 },
}

impl TestFunction {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Tanh { coord, scale } => (scale * x[*coord]).tanh(),
            Self::Product { first, second, scale } => {
                (scale * x[*first]).tanh() * (scale * x[*second]).tanh() * std::f64::consts::FRAC_1_SQRT_2
            }
            Self::Feature { weights, phase } => {
                let norm = weights.iter().map(|v| v * v).sum::<f64>().sqrt();
                let arg: f64 = weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + phase;
                arg.cos() / norm.max(1.0)
            }
        }
    }
}

const TANH_SCALES: [f64; 3] = [0.25, 0.5, 1.0];
const PRODUCT_SCALE: f64 = 0.5;
const FEATURES: usize = 32;

/// Coordinate maps at three scales, all coordinate pairs, and `FEATURES`
/// random cosine features drawn from `seed`.
pub fn default_dictionary(dim: usize, seed: u64) -> Vec<TestFunction> {
    let mut out = Vec::new();
    for coord in 0..dim {
        for scale in TANH_SCALES {
            out.push(TestFunction::Tanh { coord, scale });
        }
    }
    for first in 0..dim {
        for second in first + 1..dim {
            out.push(TestFunction::Product { first, second, scale: PRODUCT_SCALE });
        }
    }
    let mut rng = stream_rng(seed, stream::METRICS + 1);
    for _ in 0..FEATURES {
        let weights = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        out.push(TestFunction::Feature { weights, phase });
    }
    out
}

/// `max_h |mean_a h − mean_b h|` over the dictionary, for flat `n × dim` clouds
/// (sizes may differ).
pub fn weak_error(dict: &[TestFunction], a: &[f64], b: &[f64], dim: usize) -> Result<f64> {
    if dict.is_empty() {
        return config("weak error needs a nonempty dictionary");
    }
    if dim == 0 || a.len() % dim != 0 || b.len() % dim != 0 || a.is_empty() || b.is_empty() {
        return Err(Error::Dimension { expected: dim, got: a.len().min(b.len()) });
    }
    let mean = |cloud: &[f64], h: &TestFunction| {
        cloud.chunks_exact(dim).map(|x| h.eval(x)).sum::<f64>() / (cloud.len() / dim) as f64
    };
    Ok(dict.iter().map(|h| (mean(a, h) - mean(b, h)).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn grad_norm(h: &TestFunction, x: &[f64]) -> f64 {
        let step = 1e-6;
        let mut s = 0.0;
        for k in 0..x.len() {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[k] += step;
            m[k] -= step;
            let d = (h.eval(&p) - h.eval(&m)) / (2.0 * step);
            s += d * d;
        }
        s.sqrt()
    }

    #[test]
    fn dictionary_is_bounded_and_lipschitz() {
        let dict = default_dictionary(4, 7);
        let mut rng = rand::rngs::StdRng::seed_from_u64(0);
        for _ in 0..300 {
            let x: Vec<f64> = (0..4).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            for h in &dict {
                assert!(h.eval(&x).abs() <= 1.0);
                assert!(grad_norm(h, &x) <= 1.0 + 1e-6, "{h:?}");
            }
        }
    }

    #[test]
    fn identical_clouds_and_point_masses() {
        let dict = default_dictionary(2, 1);
        let a = [0.1, 0.2, -0.5, 1.0];
        assert_eq!(weak_error(&dict, &a, &a, 2).unwrap(), 0.0);
        let (u, v) = ([0.3, -0.1], [0.8, 0.4]);
        let dist = ((0.5f64).powi(2) * 2.0).sqrt();
        assert!(weak_error(&dict, &u, &v, 2).unwrap() <= dist);
        assert!(weak_error(&[], &u, &v, 2).is_err());
    }

    proptest! {
        #[test]
        fn pseudometric(seed in any::<u64>()) {
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let mut cloud = |n: usize| -> Vec<f64> { (0..n * 3).map(|_| rng.sample(StandardNormal)).collect() };
            let (a, b, c) = (cloud(5), cloud(8), cloud(3));
            let dict = default_dictionary(3, seed);
            let ab = weak_error(&dict, &a, &b, 3).unwrap();
            prop_assert_eq!(ab, weak_error(&dict, &b, &a, 3).unwrap());
            prop_assert!(ab <= weak_error(&dict, &a, &c, 3).unwrap() + weak_error(&dict, &c, &b, 3).unwrap() + 1e-12);
        }
    }
}
