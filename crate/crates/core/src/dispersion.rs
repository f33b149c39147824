//! Logit spread, coefficient bounds, dispersion thresholds and the
//! spectral-norm bound on achievable spread.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::retrieval::{ModelParams, RetrievalExample};
use crate::softmax::LogitVector;

/// `max e - min e`.
pub fn logit_spread(e: &LogitVector) -> f64 {
    e.max() - e.min()
}

pub(crate) fn spread_of(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// Bounds on any single coefficient of an `n`-item softmax whose logits
/// span at most `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadBound {
    pub delta: f64,
    pub theta: f64,
    pub n: u64,
    pub lower: f64,
    pub upper: f64,
}

impl SpreadBound {
    pub fn contains(&self, alpha: f64, slack: f64) -> bool {
        alpha >= self.lower - slack && alpha <= self.upper + slack
    }
}

/// `(exp(-δ/θ)/n, exp(δ/θ)/n)`.
pub fn lemma1_bounds(delta: f64, theta: f64, n: u64) -> Result<SpreadBound> {
    if !(theta > 0.0) {
        return Err(Error::domain(format!("temperature must be positive, got {theta}")));
    }
    if n == 0 {
        return Err(Error::domain("item count must be at least 1"));
    }
    if !(delta >= 0.0) {
        return Err(Error::domain(format!("spread must be non-negative, got {delta}")));
    }
    let r = delta / theta;
    let n_f = n as f64;
    Ok(SpreadBound {
        delta,
        theta,
        n,
        lower: (-r).exp() / n_f,
        upper: r.exp() / n_f,
    })
}

/// Least item count beyond which every coefficient is below ε.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispersionThreshold {
    pub n: u64,
    /// Set when the true threshold exceeds `u64` range; `n` is then saturated.
    pub overflow: bool,
}

/// Smallest integer `n*` with `n* > exp(δ/θ)/ε`.
pub fn dispersion_threshold(delta: f64, theta: f64, epsilon: f64) -> Result<DispersionThreshold> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::domain(format!("spread must be finite and non-negative, got {delta}")));
    }
    if !(theta > 0.0) || !(epsilon > 0.0) {
        return Err(Error::domain("temperature and epsilon must be positive"));
    }
    const SATURATED: u64 = i64::MAX as u64;
    let log_ratio = delta / theta - epsilon.ln();
    if log_ratio >= (SATURATED as f64).ln() {
        return Ok(DispersionThreshold {
            n: SATURATED,
            overflow: true,
        });
    }
    let ratio = (delta / theta).exp() / epsilon;
    let ratio = if ratio.is_finite() { ratio } else { log_ratio.exp() };
    let n = ratio.floor() as u64 + 1;
    Ok(DispersionThreshold {
        n: n.min(SATURATED),
        overflow: false,
    })
}

/// Largest singular value, by power iteration on `MᵀM`.
pub fn spectral_norm(m: ArrayView2<f64>) -> Result<f64> {
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::domain("spectral norm of an empty matrix"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("matrix has non-finite entries"));
    }
    if m.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    const TOL: f64 = 1e-12;
    const MAX_ITERS: usize = 10_000;

    // Deterministic start vectors; a restart adds a spike on a different axis.
    let start = |restart: usize| -> Array1<f64> {
        let mut v = Array1::from_shape_fn(cols, |j| 1.0 + 0.01 * (((j + 7 * restart) * 7919 % 97) as f64) / 97.0);
        if restart > 0 {
            v[(restart - 1) % cols] += restart as f64;
        }
        let norm = v.dot(&v).sqrt();
        v / norm
    };

    let mut restart = 0;
    let mut v = start(restart);
    let mut lambda = 0.0;
    for _ in 0..MAX_ITERS {
        let mv = m.dot(&v);
        let w = m.t().dot(&mv);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            // v fell into the null space; try another direction.
            restart += 1;
            v = start(restart);
            lambda = 0.0;
            continue;
        }
        let next = mv.dot(&mv);
        v = w / norm;
        if (next - lambda).abs() <= TOL * next {
            lambda = next;
            break;
        }
        lambda = next;
    }
    let mv = m.dot(&v);
    Ok(mv.dot(&mv).sqrt().max(lambda.sqrt()))
}

/// Spectral bound on the logit spread of a dot-product attention row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBound {
    pub sigma_max_q: f64,
    pub sigma_max_k: f64,
    pub query_norm: f64,
    pub max_item_norm: f64,
    /// `2 σ_Q σ_K ‖y‖ max ‖x_i‖`
    pub bound: f64,
    /// Spread of the logits actually produced, when they were computed.
    pub observed_spread: f64,
    pub holds: bool,
}

impl NormBound {
    pub fn from_parts(sigma_max_q: f64, sigma_max_k: f64, query_norm: f64, max_item_norm: f64, observed_spread: f64) -> Self {
        let bound = 2.0 * sigma_max_q * sigma_max_k * query_norm * max_item_norm;
        NormBound {
            sigma_max_q,
            sigma_max_k,
            query_norm,
            max_item_norm,
            bound,
            observed_spread,
            holds: bound_holds(observed_spread, bound),
        }
    }
}

/// The singular values come from an iterative solver, so the comparison
/// allows a relative 1e-9 on the bound.
pub(crate) fn bound_holds(spread: f64, bound: f64) -> bool {
    spread <= bound * (1.0 + 1e-9) + 1e-12
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// Evaluates `e_k = ⟨Q y, K x_k⟩` and the spectral bound on their spread.
///
/// `Q` is `m' × m` acting on `y`; `K` is `m' × m_x` acting on each `x_k`.
pub fn prop1_bound(q: ArrayView2<f64>, k: ArrayView2<f64>, y: ArrayView1<f64>, xs: &[ArrayView1<f64>]) -> Result<NormBound> {
    if xs.is_empty() {
        return Err(Error::domain("need at least one item"));
    }
    if q.ncols() != y.len() {
        return Err(Error::domain(format!("Q has {} columns but y has {} entries", q.ncols(), y.len())));
    }
    if q.nrows() != k.nrows() {
        return Err(Error::domain(format!("Q has {} rows but K has {}", q.nrows(), k.nrows())));
    }
    if let Some(x) = xs.iter().find(|x| x.len() != k.ncols()) {
        return Err(Error::domain(format!("K has {} columns but an item has {} entries", k.ncols(), x.len())));
    }
    let qy = q.dot(&y);
    let logits: Vec<f64> = xs.iter().map(|x| qy.dot(&k.dot(x))).collect();
    let max_item_norm = xs.iter().map(|x| norm(*x)).fold(0.0, f64::max);
    Ok(NormBound::from_parts(
        spectral_norm(q)?,
        spectral_norm(k)?,
        norm(y),
        max_item_norm,
        spread_of(&logits),
    ))
}

/// Coefficient on the distinguished item as the set grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureDemoReport {
    pub n_values: Vec<u64>,
    /// Coefficient on `v_a` at each `n`.
    pub alpha_1: Vec<f64>,
    pub predicted_class: Vec<usize>,
    /// `exp(δ)/n` upper bound at each `n`, with δ the observed spread.
    pub alpha_upper: Vec<f64>,
    /// Whether the top two class logits tie at each `n`.
    pub tie: Vec<bool>,
    /// Observed spread `|e_a - e_b|`.
    pub delta: f64,
    /// Prediction for a set made only of copies of `v_b`.
    pub pure_b_class: usize,
    /// Prediction for the single-item set `{v_a}`.
    pub single_a_class: usize,
    pub class_a: usize,
    pub class_b: usize,
    pub machine_epsilon: f64,
    /// Dispersion threshold for `(δ, θ = 1, machine_epsilon)`.
    pub threshold: DispersionThreshold,
}

impl FailureDemoReport {
    /// First reported `n` at which `α_1 < ε` and the prediction matches the
    /// all-`v_b` set.
    pub fn collapse_n(&self) -> Option<u64> {
        (0..self.n_values.len())
            .find(|&i| self.alpha_1[i] < self.machine_epsilon && self.predicted_class[i] == self.pure_b_class)
            .map(|i| self.n_values[i])
    }
}

/// Single-precision machine epsilon, the default for the failure demo.
pub const SINGLE_EPSILON: f64 = f32::EPSILON as f64;

/// Evaluates the sets `{v_a, v_b, …, v_b}` of each size in `n_values`.
#[allow(clippy::too_many_arguments)]
pub fn corollary_failure_demo<T: Scalar>(
    model: &ModelParams<T>,
    rho_a: f64,
    rho_b: f64,
    class_a: usize,
    class_b: usize,
    query_scalar: f64,
    n_values: &[u64],
    machine_epsilon: f64,
) -> Result<FailureDemoReport> {
    if !(rho_a > rho_b) {
        return Err(Error::domain("the distinguished item must have the higher priority"));
    }
    if n_values.is_empty() || n_values.windows(2).any(|w| w[0] >= w[1]) || n_values[0] == 0 {
        return Err(Error::domain("n_values must be positive and strictly ascending"));
    }
    if !model.is_finite() {
        return Err(Error::domain("model parameters contain non-finite values"));
    }
    let v_a = RetrievalExample::from_items(&[rho_a], &[class_a], query_scalar)?;
    let v_b = RetrievalExample::from_items(&[rho_b], &[class_b], query_scalar)?;

    let single_a = model.forward_multiset(&[(v_a.clone(), 1)], query_scalar, 1.0)?;
    let pure_b = model.forward_multiset(&[(v_b.clone(), 1)], query_scalar, 1.0)?;
    let pair = model.forward_multiset(&[(v_a.clone(), 1), (v_b.clone(), 1)], query_scalar, 1.0)?;
    let delta = (pair.logits[0] - pair.logits[1]).abs();

    let rows: Vec<_> = crate::par::map_slice(crate::par::Execution::default(), n_values, |&n| {
        let items = if n == 1 {
            vec![(v_a.clone(), 1)]
        } else {
            vec![(v_a.clone(), 1), (v_b.clone(), n - 1)]
        };
        model.forward_multiset(&items, query_scalar, 1.0).map(|out| {
            let mut sorted = out.class_logits.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let tie = sorted.len() > 1 && sorted[0] == sorted[1];
            (out.alpha_per_copy[0], out.predicted, tie)
        })
    });
    let mut report = FailureDemoReport {
        n_values: n_values.to_vec(),
        alpha_1: Vec::with_capacity(n_values.len()),
        predicted_class: Vec::with_capacity(n_values.len()),
        alpha_upper: Vec::with_capacity(n_values.len()),
        tie: Vec::with_capacity(n_values.len()),
        delta,
        pure_b_class: pure_b.predicted,
        single_a_class: single_a.predicted,
        class_a,
        class_b,
        machine_epsilon,
        threshold: dispersion_threshold(delta, 1.0, machine_epsilon)?,
    };
    for (row, &n) in rows.into_iter().zip(n_values) {
        let (alpha, predicted, tie) = row?;
        report.alpha_1.push(alpha);
        report.predicted_class.push(predicted);
        report.alpha_upper.push(lemma1_bounds(delta, 1.0, n)?.upper);
        report.tie.push(tie);
    }
    Ok(report)
}
