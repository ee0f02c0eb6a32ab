//! Single-neuron function `φ(w; θ) = tanh(β) · sigmoid(θ̃ᵀ(w, 1))` and its
//! hand-derived derivatives.
//!
//! A parameter vector is laid out as `[β, θ̃_1, …, θ̃_d, θ̃_bias]`, so for an
//! input of dimension `d` the parameter dimension is `D = d + 2`.

use crate::error::{Error, Result};

/// max |σ''| for the logistic sigmoid, attained at σ = 1/2 ± 1/(2√3).
const SIGMOID_SECOND_MAX: f64 = 0.096_225_044_864_937_6;
/// max |d²/dβ² tanh β| = 4 / (3√3).
const TANH_SECOND_MAX: f64 = 0.769_800_358_919_501;

#[inline]
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `θ̃ᵀ(w, 1)` without bounds checks.
#[inline]
pub(crate) fn preactivation(input: &[f64], hidden: &[f64]) -> f64 {
    let d = input.len();
    let mut u = hidden[d];
    for j in 0..d {
        u += hidden[j] * input[j];
    }
    u
}

#[inline]
pub(crate) fn eval_unchecked(input: &[f64], param: &[f64]) -> f64 {
    param[0].tanh() * sigmoid(preactivation(input, &param[1..]))
}

/// Accumulates `coef · ∇θ φ(input; param)` into `out`.
#[inline]
pub(crate) fn add_grad_unchecked(input: &[f64], param: &[f64], coef: f64, out: &mut [f64]) {
    let d = input.len();
    let t = param[0].tanh();
    let s = sigmoid(preactivation(input, &param[1..]));
    out[0] += coef * (1.0 - t * t) * s;
    let h = coef * t * s * (1.0 - s);
    for j in 0..d {
        out[1 + j] += h * input[j];
    }
    out[1 + d] += h;
}

fn check_dims(input: &[f64], param: &[f64]) -> Result<()> {
    if param.len() != input.len() + 2 {
        return Err(Error::Dimension { expected: input.len() + 2, got: param.len() });
    }
    Ok(())
}

pub fn neuron_eval(input: &[f64], param: &[f64]) -> Result<f64> {
    check_dims(input, param)?;
    Ok(eval_unchecked(input, param))
}

pub fn neuron_grad(input: &[f64], param: &[f64]) -> Result<Vec<f64>> {
    check_dims(input, param)?;
    let mut out = vec![0.0; param.len()];
    add_grad_unchecked(input, param, 1.0, &mut out);
    Ok(out)
}

/// Dense Hessian `∇²θ φ`, row-major `D × D`.
pub fn neuron_hessian(input: &[f64], param: &[f64]) -> Result<Vec<f64>> {
    check_dims(input, param)?;
    let dim = param.len();
    let t = param[0].tanh();
    let sech2 = 1.0 - t * t;
    let s = sigmoid(preactivation(input, &param[1..]));
    let s1 = s * (1.0 - s);
    let s2 = s1 * (1.0 - 2.0 * s);
    let aug = |j: usize| if j < input.len() { input[j] } else { 1.0 };

    let mut h = vec![0.0; dim * dim];
    h[0] = -2.0 * t * sech2 * s;
    for j in 0..dim - 1 {
        let cross = sech2 * s1 * aug(j);
        h[j + 1] = cross;
        h[(j + 1) * dim] = cross;
        for k in 0..dim - 1 {
            h[(j + 1) * dim + k + 1] = t * s2 * aug(j) * aug(k);
        }
    }
    Ok(h)
}

/// Rescaling / activation pair together with uniform bounds valid on the input
/// box `[-c1, c1]^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronSpec {
    pub input_dim: usize,
    pub box_radius: f64,
    /// sup |φ|
    pub b0: f64,
    /// sup ‖∇θ φ‖
    pub b1: f64,
    /// sup ‖∇²θ φ‖_F
    pub b2: f64,
}

impl NeuronSpec {
    pub fn new(input_dim: usize, box_radius: f64) -> Self {
        // ‖(w, 1)‖² ≤ 1 + d c1²
        let r2 = 1.0 + input_dim as f64 * box_radius * box_radius;
        let b1 = (1.0 + r2 / 16.0).sqrt();
        let b2 = (TANH_SECOND_MAX.powi(2)
            + 2.0 * r2 / 16.0
            + SIGMOID_SECOND_MAX.powi(2) * r2 * r2)
            .sqrt();
        Self { input_dim, box_radius, b0: 1.0, b1, b2 }
    }

    pub fn param_dim(&self) -> usize {
        self.input_dim + 2
    }

    /// The odd rescaling map.
    pub fn rescale(x: f64) -> f64 {
        x.tanh()
    }

    pub fn activation(x: f64) -> f64 {
        sigmoid(x)
    }
}
