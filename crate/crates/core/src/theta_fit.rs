//! Fitting the entropy → inverse temperature polynomial.
//!
//! Hard examples (the target item does not hold the largest attention
//! logit) are harvested from a trained model. For each one the temperature
//! that maximises the target's coefficient is found on a 0.1 grid, and a
//! degree-4 polynomial is fitted to `(H, 1/θ)` by least squares.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::par::{self, Execution};
use crate::retrieval::data::{derived_rng, generate_batch};
use crate::retrieval::ModelParams;
use crate::softmax::{polyval, softmax_into, AdaptiveSoftmaxConfig, LogitVector, PolyFit};

const HARVEST_TAG: u64 = 0x4a7e;

/// Number of grid points; temperatures are `k / 10` for `k = 1..=100`.
pub const GRID_STEPS: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSample {
    pub entropy: f64,
    pub theta_opt: f64,
    pub inv_theta_opt: f64,
}

impl FitSample {
    pub fn new(entropy: f64, theta_opt: f64) -> Result<Self> {
        if !(entropy >= 0.0) || !entropy.is_finite() {
            return Err(Error::domain(format!("entropy must be finite and non-negative, got {entropy}")));
        }
        if !(theta_opt > 0.0 && theta_opt <= 10.0) {
            return Err(Error::domain(format!("optimal temperature {theta_opt} outside (0, 10]")));
        }
        Ok(FitSample {
            entropy,
            theta_opt,
            inv_theta_opt: 1.0 / theta_opt,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(rename = "coefficients")]
    pub poly: PolyFit,
    pub rmse: f64,
    pub n_samples: usize,
    pub n_discarded: usize,
}

impl FitResult {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn grid_theta(k: u32) -> f64 {
    k as f64 / 10.0
}

/// The grid temperature that gives `target_index` the largest coefficient.
/// Ties go to the smaller temperature.
pub fn grid_search_theta(logits: &LogitVector, target_index: usize) -> Result<f64> {
    let values = logits.as_slice();
    if target_index >= values.len() {
        return Err(Error::domain(format!(
            "target index {target_index} out of range for {} logits",
            values.len()
        )));
    }
    if values[target_index] >= logits.max() {
        return Err(Error::domain("target already holds the largest logit; optimal temperature is zero"));
    }
    let mut probs = vec![0.0; values.len()];
    let mut best = (f64::NEG_INFINITY, grid_theta(1));
    for k in 1..=GRID_STEPS {
        let theta = grid_theta(k);
        softmax_into(values, theta, &mut probs);
        if probs[target_index] > best.0 {
            best = (probs[target_index], theta);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarvestConfig {
    pub seed: u64,
    pub n_batches: usize,
    pub batch_size: usize,
    /// Batch `b` uses `sizes[b % sizes.len()]` items per example.
    pub sizes: Vec<usize>,
    /// Temperature of the trained model's attention.
    pub theta: f64,
    pub exec: Execution,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        HarvestConfig {
            seed: 0,
            n_batches: 40,
            batch_size: 128,
            sizes: vec![16, 32, 64, 128],
            theta: 1.0,
            exec: Execution::default(),
        }
    }
}

/// Harvested samples and the number of examples skipped because the
/// target already had the largest logit.
#[derive(Debug, Clone, PartialEq)]
pub struct Harvest {
    pub samples: Vec<FitSample>,
    pub n_discarded: usize,
}

/// Runs the model on fresh examples and records `(H, θ*)` for each example
/// whose target item does not hold the largest logit.
pub fn harvest_samples<T: Scalar>(params: &ModelParams<T>, cfg: &HarvestConfig) -> Result<Harvest> {
    if cfg.sizes.is_empty() || cfg.sizes.contains(&0) {
        return Err(Error::domain("harvest sizes must be non-empty and positive"));
    }
    if cfg.batch_size == 0 || !(cfg.theta > 0.0) {
        return Err(Error::domain("batch size and theta must be positive"));
    }
    let batches = par::map_range(cfg.exec, cfg.n_batches, |b| -> Result<(Vec<FitSample>, usize)> {
        let n = cfg.sizes[b % cfg.sizes.len()];
        let mut rng = derived_rng(cfg.seed, HARVEST_TAG, b as u64);
        let examples = generate_batch(&mut rng, cfg.batch_size, n)?;
        let emb = params.embed(&examples)?;
        let mut kept = Vec::new();
        let mut discarded = 0;
        let mut probs = vec![0.0; n];
        for (ex, row) in examples.iter().zip(emb.logits.chunks(n)) {
            let target = ex.target_index();
            let scaled = LogitVector::from_slice(row)?.scaled(1.0 / cfg.theta)?;
            if scaled.as_slice()[target] >= scaled.max() {
                discarded += 1;
                continue;
            }
            softmax_into(scaled.as_slice(), 1.0, &mut probs);
            let h = -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
            kept.push(FitSample::new(h.max(0.0), grid_search_theta(&scaled, target)?)?);
        }
        Ok((kept, discarded))
    });
    let mut samples = Vec::new();
    let mut n_discarded = 0;
    for r in batches {
        let (kept, discarded) = r?;
        samples.extend(kept);
        n_discarded += discarded;
    }
    if samples.is_empty() {
        return Err(Error::EmptyHarvest {
            discarded: n_discarded,
        });
    }
    Ok(Harvest { samples, n_discarded })
}

/// Degree-4 least-squares fit of `1/θ*` against `H`.
pub fn fit_polynomial(samples: &[FitSample]) -> Result<FitResult> {
    fit_polynomial_degree(samples, 4)
}

/// Fits the harvested samples and records how many were discarded.
pub fn fit_harvest(harvest: &Harvest) -> Result<FitResult> {
    let mut fit = fit_polynomial(&harvest.samples)?;
    fit.n_discarded = harvest.n_discarded;
    Ok(fit)
}

/// Least-squares fit of degree at most 4; unused higher coefficients are 0.
///
/// `H` is centred and scaled before forming the normal equations, which are
/// solved by Gaussian elimination with partial pivoting.
pub fn fit_polynomial_degree(samples: &[FitSample], degree: usize) -> Result<FitResult> {
    if degree > 4 {
        return Err(Error::domain(format!("degree {degree} exceeds 4")));
    }
    let terms = degree + 1;
    if samples.len() < terms {
        return Err(Error::domain(format!(
            "{} samples cannot determine a degree-{degree} fit",
            samples.len()
        )));
    }
    if samples.iter().any(|s| !s.entropy.is_finite() || !s.inv_theta_opt.is_finite()) {
        return Err(Error::domain("samples must be finite"));
    }
    let count = samples.len() as f64;
    let center = samples.iter().map(|s| s.entropy).sum::<f64>() / count;
    let mut scale = samples.iter().map(|s| (s.entropy - center).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        scale = 1.0;
    }

    let mut normal = vec![vec![0.0; terms + 1]; terms];
    let mut powers = vec![0.0; terms];
    for s in samples {
        let u = (s.entropy - center) / scale;
        let mut p = 1.0;
        for x in powers.iter_mut() {
            *x = p;
            p *= u;
        }
        for r in 0..terms {
            for c in 0..terms {
                normal[r][c] += powers[r] * powers[c];
            }
            normal[r][terms] += powers[r] * s.inv_theta_opt;
        }
    }
    let scaled_coeffs = solve_augmented(normal)?;

    // p(H) = Σ c_k ((H - center) / scale)^k, expanded into powers of H.
    let mut coeffs = [0.0; 5];
    for (k, &c) in scaled_coeffs.iter().enumerate() {
        let factor = c / scale.powi(k as i32);
        for j in 0..=k {
            coeffs[j] += factor * binomial(k, j) * (-center).powi((k - j) as i32);
        }
    }
    let poly = PolyFit::new(coeffs)?;
    let sse: f64 = samples
        .iter()
        .map(|s| (polyval(&poly, s.entropy) - s.inv_theta_opt).powi(2))
        .sum();
    Ok(FitResult {
        poly,
        rmse: (sse / count).sqrt(),
        n_samples: samples.len(),
        n_discarded: 0,
    })
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn solve_augmented(mut a: Vec<Vec<f64>>) -> Result<Vec<f64>> {
    let n = a.len();
    let magnitude = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    let tol = magnitude.max(f64::MIN_POSITIVE) * 1e-13;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        let pivot = a[pivot_row][col];
        if pivot.abs() <= tol {
            return Err(Error::SingularFit { column: col, pivot });
        }
        a.swap(col, pivot_row);
        for r in col + 1..n {
            let f = a[r][col] / pivot;
            for c in col..=n {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][n] - tail) / a[r][r];
    }
    Ok(x)
}

/// Wraps a fitted polynomial with the default threshold and floor.
pub fn make_adaptive_config(fit: &FitResult) -> AdaptiveSoftmaxConfig {
    AdaptiveSoftmaxConfig {
        poly: fit.poly,
        ..AdaptiveSoftmaxConfig::default()
    }
}

#[derive(Serialize, Deserialize)]
struct SampleRow {
    #[serde(rename = "H")]
    entropy: f64,
    theta_opt: f64,
}

/// Writes samples as CSV with columns `H,theta_opt`.
pub fn write_samples_csv(path: &Path, samples: &[FitSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(SampleRow {
            entropy: s.entropy,
            theta_opt: s.theta_opt,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<FitSample>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<SampleRow>()
        .map(|row| {
            let row = row?;
            FitSample::new(row.entropy, row.theta_opt)
        })
        .collect()
}
