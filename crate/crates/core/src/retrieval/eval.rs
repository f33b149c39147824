use serde::{Deserialize, Serialize};

use super::data::{derived_rng, generate_example, RetrievalExample};
use super::model::{argmax_row, ModelParams, Normalizer};
use crate::dispersion::spread_of;
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::par::{self, Execution};
use crate::softmax::{AdaptiveSoftmaxConfig, ProbVector};

const EVAL_TAG: u64 = 0xe7a1_0000;

/// Set sizes from 16 to 16,384, doubling.
pub fn default_sizes() -> Vec<usize> {
    (4..=14).map(|k| 1usize << k).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub sizes: Vec<usize>,
    pub n_eval: usize,
    pub seed: u64,
    pub theta: f64,
    pub adaptive: AdaptiveSoftmaxConfig,
    pub exec: Execution,
    /// Approximate number of item rows embedded per work unit.
    pub chunk_items: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sizes: default_sizes(),
            n_eval: 10_000,
            seed: 0,
            theta: 1.0,
            adaptive: AdaptiveSoftmaxConfig::default(),
            exec: Execution::default(),
            chunk_items: 4096,
        }
    }
}

/// Accuracy and attention statistics of one inference mode at one size.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmStats {
    pub accuracy: f64,
    pub mean_max_alpha: f64,
    pub mean_entropy: f64,
    pub correct: usize,
    pub count: usize,
}

/// Baseline and adaptive inference on identical examples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeEval {
    pub size: usize,
    pub baseline: ArmStats,
    pub adaptive: ArmStats,
    pub mean_spread: f64,
    /// Largest per-example `max α · n / exp(δ)`; at most 1 by the spread bound.
    pub max_bound_ratio: f64,
}

#[derive(Default)]
struct Sums {
    correct: usize,
    max_alpha: f64,
    entropy: f64,
}

// Per-example values; summed afterwards in index order so the totals do
// not depend on chunking or scheduling.
#[derive(Default)]
struct ChunkValues {
    base: Vec<(bool, f64, f64)>,
    adapt: Vec<(bool, f64, f64)>,
    spread: Vec<f64>,
    bound_ratio: f64,
}

/// Draws example `index` of the evaluation sweep at `size`.
pub fn eval_example(seed: u64, size: usize, index: usize) -> Result<RetrievalExample> {
    generate_example(&mut derived_rng(seed, EVAL_TAG + size as u64, index as u64), size)
}

/// Evaluates both inference modes on the same examples for every size.
pub fn evaluate_paired<T: Scalar>(params: &ModelParams<T>, cfg: &EvalConfig) -> Result<Vec<SizeEval>> {
    if cfg.n_eval == 0 {
        return Err(Error::domain("n_eval must be positive"));
    }
    cfg.sizes.iter().map(|&size| evaluate_size(params, cfg, size)).collect()
}

fn evaluate_size<T: Scalar>(params: &ModelParams<T>, cfg: &EvalConfig, size: usize) -> Result<SizeEval> {
    if size == 0 {
        return Err(Error::domain("set size must be positive"));
    }
    let per_chunk = (cfg.chunk_items / size).max(1);
    let chunks = cfg.n_eval.div_ceil(per_chunk);
    let base_norm = Normalizer::Softmax { theta: cfg.theta };
    let adapt_norm = Normalizer::Adaptive {
        theta: cfg.theta,
        cfg: cfg.adaptive,
    };
    let results = par::map_range(cfg.exec, chunks, |c| -> Result<ChunkValues> {
        let lo = c * per_chunk;
        let hi = ((c + 1) * per_chunk).min(cfg.n_eval);
        let examples = (lo..hi)
            .map(|i| eval_example(cfg.seed, size, i))
            .collect::<Result<Vec<_>>>()?;
        let emb = params.embed(&examples)?;
        let mut sums = ChunkValues::default();
        let base_alpha = params.coefficients(&emb, &base_norm).0;
        let adapt_alpha = params.coefficients(&emb, &adapt_norm).0;
        for (alpha, acc) in [(&base_alpha, &mut sums.base), (&adapt_alpha, &mut sums.adapt)] {
            let head = params.head(&emb, alpha)?;
            for (b, ex) in examples.iter().enumerate() {
                let hit = argmax_row(head.class_logits.row(b)) == ex.label;
                let row = ProbVector::from_normalized(alpha[b * size..(b + 1) * size].to_vec());
                acc.push((hit, row.max(), row.entropy()));
            }
        }
        for (b, row) in emb.logits.chunks(size).enumerate() {
            let delta = spread_of(row);
            sums.spread.push(delta);
            let max_alpha = base_alpha[b * size..(b + 1) * size].iter().copied().fold(0.0, f64::max);
            let ratio = max_alpha * size as f64 / (delta / cfg.theta).exp();
            sums.bound_ratio = sums.bound_ratio.max(ratio);
        }
        Ok(sums)
    });
    let mut base = Sums::default();
    let mut adapt = Sums::default();
    let mut spread = 0.0;
    let mut bound_ratio = 0.0f64;
    for r in results {
        let r = r?;
        for (dst, src) in [(&mut base, r.base), (&mut adapt, r.adapt)] {
            for (hit, max_alpha, entropy) in src {
                dst.correct += usize::from(hit);
                dst.max_alpha += max_alpha;
                dst.entropy += entropy;
            }
        }
        for d in r.spread {
            spread += d;
        }
        bound_ratio = bound_ratio.max(r.bound_ratio);
    }
    let count = cfg.n_eval;
    let stats = |s: Sums| ArmStats {
        accuracy: s.correct as f64 / count as f64,
        mean_max_alpha: s.max_alpha / count as f64,
        mean_entropy: s.entropy / count as f64,
        correct: s.correct,
        count,
    };
    Ok(SizeEval {
        size,
        baseline: stats(base),
        adaptive: stats(adapt),
        mean_spread: spread / count as f64,
        max_bound_ratio: bound_ratio,
    })
}

/// Evaluates a single inference mode; `adaptive` switches the softmax only,
/// the parameters are untouched.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, cfg: &EvalConfig, adaptive: bool) -> Result<Vec<(usize, ArmStats)>> {
    Ok(evaluate_paired(params, cfg)?
        .into_iter()
        .map(|s| (s.size, if adaptive { s.adaptive } else { s.baseline }))
        .collect())
}
