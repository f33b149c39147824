//! Temperature softmax, Shannon entropy and the entropy-adaptive softmax.
//!
//! All arithmetic here is `f64`. Every exponentiation is shifted by the row
//! maximum so logits up to roughly ±700 neither overflow nor underflow to an
//! all-zero row.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A non-empty list of finite attention logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("logit vector must be non-empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("logit {i} is not finite ({})", values[i])));
        }
        Ok(LogitVector(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Index of the largest logit, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// A probability distribution over `n` items.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Wraps values already known to form a distribution.
    pub(crate) fn from_normalized(probs: Vec<f64>) -> Self {
        ProbVector(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Exact Shannon entropy with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Coefficients of a degree-4 polynomial, stored lowest degree first.
///
/// Serializes as a JSON array of five numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolyFit(pub [f64; 5]);

impl PolyFit {
    /// The entropy-to-inverse-temperature fit shipped as the default:
    /// `1/θ ≈ -1.791 + 4.917 H - 2.3 H² + 0.481 H³ - 0.037 H⁴`.
    pub const DEFAULT: PolyFit = PolyFit([-1.791, 4.917, -2.3, 0.481, -0.037]);

    pub fn new(coefficients: [f64; 5]) -> Result<Self> {
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain("polynomial coefficients must be finite"));
        }
        Ok(PolyFit(coefficients))
    }

    /// Builds a fit from an array ordered highest degree first, as
    /// `numpy.polyval`-style code stores it.
    pub fn from_highest_first(coefficients: [f64; 5]) -> Result<Self> {
        let mut c = coefficients;
        c.reverse();
        Self::new(c)
    }

    pub fn coefficients(&self) -> &[f64; 5] {
        &self.0
    }
}

impl Default for PolyFit {
    fn default() -> Self {
        PolyFit::DEFAULT
    }
}

/// Evaluates the polynomial at `h` with Horner's rule.
pub fn polyval(poly: &PolyFit, h: f64) -> f64 {
    poly.0.iter().rev().fold(0.0, |acc, &c| acc * h + c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSoftmaxConfig {
    pub poly: PolyFit,
    /// Rows at or below this entropy are returned unchanged.
    pub entropy_threshold: f64,
    /// Lower clamp on the inverse temperature; 1 means never soften.
    pub max_beta_floor: f64,
    /// Additive constant inside the entropy logarithm.
    pub entropy_epsilon: f64,
}

impl Default for AdaptiveSoftmaxConfig {
    fn default() -> Self {
        AdaptiveSoftmaxConfig {
            poly: PolyFit::DEFAULT,
            entropy_threshold: 0.5,
            max_beta_floor: 1.0,
            entropy_epsilon: 1e-9,
        }
    }
}

impl AdaptiveSoftmaxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.entropy_threshold >= 0.0) {
            return Err(Error::domain("entropy_threshold must be >= 0"));
        }
        if !(self.max_beta_floor >= 1.0) {
            return Err(Error::domain("max_beta_floor must be >= 1"));
        }
        if !(self.entropy_epsilon > 0.0) {
            return Err(Error::domain("entropy_epsilon must be > 0"));
        }
        Ok(())
    }

    /// Inverse temperature chosen for a row of entropy `h`.
    pub fn beta_for_entropy(&self, h: f64) -> f64 {
        if h <= self.entropy_threshold {
            1.0
        } else {
            polyval(&self.poly, h).max(self.max_beta_floor)
        }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("temperature must be positive and finite, got {theta}")))
    }
}

/// Max-shifted softmax of `values / theta` written into `out`.
pub(crate) fn softmax_into(values: &[f64], theta: f64, out: &mut [f64]) {
    debug_assert_eq!(values.len(), out.len());
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(values) {
        *o = ((v - max) / theta).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// `exp(e_k / θ) / Σ_l exp(e_l / θ)`.
pub fn softmax_temp(e: &LogitVector, theta: f64) -> Result<ProbVector> {
    check_theta(theta)?;
    let mut out = vec![0.0; e.len()];
    softmax_into(e.as_slice(), theta, &mut out);
    Ok(ProbVector(out))
}

/// `-Σ p_i log(p_i + eps)`, the entropy as the adaptive rule computes it.
pub fn shannon_entropy(p: &ProbVector, eps: f64) -> f64 {
    entropy_with_eps(p.as_slice(), eps)
}

pub(crate) fn entropy_with_eps(p: &[f64], eps: f64) -> f64 {
    -p.iter().map(|&x| x * (x + eps).ln()).sum::<f64>()
}

/// Softmax whose temperature is lowered according to the row entropy.
///
/// Returns the distribution together with the inverse temperature used.
pub fn adaptive_temperature_softmax(
    e: &LogitVector,
    cfg: &AdaptiveSoftmaxConfig,
) -> Result<(ProbVector, f64)> {
    let mut out = vec![0.0; e.len()];
    let beta = adaptive_softmax_into(e.as_slice(), cfg, &mut out);
    Ok((ProbVector(out), beta))
}

pub(crate) fn adaptive_softmax_into(values: &[f64], cfg: &AdaptiveSoftmaxConfig, out: &mut [f64]) -> f64 {
    softmax_into(values, 1.0, out);
    let h = entropy_with_eps(out, cfg.entropy_epsilon);
    if h <= cfg.entropy_threshold {
        return 1.0;
    }
    let beta = cfg.beta_for_entropy(h);
    let scaled: Vec<f64> = values.iter().map(|v| v * beta).collect();
    softmax_into(&scaled, 1.0, out);
    beta
}

/// Entropy of the Boltzmann distribution `p_i ∝ exp(-β e_i)` at each β.
pub fn boltzmann_entropy_curve(e: &LogitVector, betas: &[f64]) -> Result<Vec<(f64, f64)>> {
    if let Some(b) = betas.iter().find(|b| !b.is_finite()) {
        return Err(Error::domain(format!("beta must be finite, got {b}")));
    }
    Ok(betas.iter().map(|&b| (b, boltzmann_entropy(e.as_slice(), b))).collect())
}

/// `H = log Z - Σ p_i s_i` with `s_i = -β e_i` shifted by its maximum.
pub(crate) fn boltzmann_entropy(e: &[f64], beta: f64) -> f64 {
    let (log_z, mean_shifted) = boltzmann_moments(e, beta);
    (log_z - mean_shifted).max(0.0)
}

fn boltzmann_moments(e: &[f64], beta: f64) -> (f64, f64) {
    let max = e.iter().map(|&v| -beta * v).fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut weighted = 0.0;
    for &v in e {
        let s = -beta * v - max;
        let w = s.exp();
        z += w;
        weighted += w * s;
    }
    (z.ln(), weighted / z)
}

/// Analytic `dH/dβ = -β Var_p(e)` for the Boltzmann distribution.
pub fn boltzmann_entropy_slope(e: &LogitVector, beta: f64) -> f64 {
    let e = e.as_slice();
    let max = e.iter().map(|&v| -beta * v).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = e.iter().map(|&v| (-beta * v - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mean = e.iter().zip(&weights).map(|(v, w)| v * w).sum::<f64>() / z;
    let var = e
        .iter()
        .zip(&weights)
        .map(|(v, w)| w * (v - mean).powi(2))
        .sum::<f64>()
        / z;
    -beta * var
}

/// Number of power-series logits in [`entropy_landscape`].
pub const LANDSCAPE_ITEMS: usize = 10;

/// Entropy of `softmax_θ(a)` with `a_i = λ^i, i = 1..=10` over a grid.
///
/// Rows follow `lambda_grid`, columns follow `theta_grid`.
pub fn entropy_landscape(lambda_grid: &[f64], theta_grid: &[f64]) -> Result<Array2<f64>> {
    if lambda_grid.is_empty() || theta_grid.is_empty() {
        return Err(Error::domain("landscape grids must be non-empty"));
    }
    for &t in theta_grid {
        check_theta(t)?;
    }
    if let Some(l) = lambda_grid.iter().find(|l| !l.is_finite()) {
        return Err(Error::domain(format!("lambda must be finite, got {l}")));
    }
    let mut out = Array2::zeros((lambda_grid.len(), theta_grid.len()));
    let mut probs = [0.0; LANDSCAPE_ITEMS];
    for (r, &lambda) in lambda_grid.iter().enumerate() {
        let logits: Vec<f64> = (1..=LANDSCAPE_ITEMS as i32).map(|i| lambda.powi(i)).collect();
        for (c, &theta) in theta_grid.iter().enumerate() {
            softmax_into(&logits, theta, &mut probs);
            out[(r, c)] = ProbVector(probs.to_vec()).entropy();
        }
    }
    Ok(out)
}
