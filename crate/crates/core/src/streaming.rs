//! Constant-memory attention entropy and attention output for one query.
//!
//! Entropy of `softmax(l)` over a stream of logits `l_j` needs only three
//! running numbers: the maximum `m`, the shifted normaliser
//! `Λ = Σ exp(l_j - m)` and the shifted weighted sum `𝒦 = Σ exp(l_j - m) l_j`.
//! When `m` grows both sums are rescaled by `exp(m_old - m_new)`. Then
//! `H = m + log Λ - 𝒦 / Λ`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::softmax::AdaptiveSoftmaxConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    pub running_max: f64,
    pub normalizer: f64,
    pub weighted_logit_sum: f64,
    pub count: u64,
}

impl Default for StreamState {
    fn default() -> Self {
        StreamState {
            running_max: f64::NEG_INFINITY,
            normalizer: 0.0,
            weighted_logit_sum: 0.0,
            count: 0,
        }
    }
}

impl StreamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds one logit in.
    pub fn update(&self, logit: f64) -> Result<StreamState> {
        if !logit.is_finite() {
            return Err(Error::domain(format!("streamed logit is not finite ({logit})")));
        }
        Ok(self.push(logit))
    }

    #[inline]
    fn push(&self, logit: f64) -> StreamState {
        let new_max = self.running_max.max(logit);
        let rescale = (self.running_max - new_max).exp();
        let weight = (logit - new_max).exp();
        StreamState {
            running_max: new_max,
            normalizer: self.normalizer * rescale + weight,
            weighted_logit_sum: self.weighted_logit_sum * rescale + weight * logit,
            count: self.count + 1,
        }
    }

    /// Shannon entropy of the softmax over every logit seen so far.
    pub fn entropy(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::domain("entropy of an empty stream"));
        }
        let h = self.running_max + self.normalizer.ln() - self.weighted_logit_sum / self.normalizer;
        Ok(h.max(0.0))
    }
}

/// `state` after folding in `logit`.
pub fn stream_update(state: &StreamState, logit: f64) -> Result<StreamState> {
    state.update(logit)
}

/// Entropy of the streamed row.
pub fn stream_entropy(state: &StreamState) -> Result<f64> {
    state.entropy()
}

/// Streams a whole slice of logits.
pub fn stream_logits(logits: &[f64]) -> Result<StreamState> {
    logits.iter().try_fold(StreamState::new(), |s, &l| s.update(l))
}

/// Callback receiving one `(key, value)` pair.
pub type PairVisitor<'a> = dyn FnMut(&[f64], &[f64]) -> Result<()> + 'a;

/// A sequence of `(key, value)` pairs that can be replayed.
///
/// Every call to `visit` must yield the same pairs in the same order.
pub trait KeyValueSource {
    fn visit(&self, f: &mut PairVisitor<'_>) -> Result<()>;
}

/// Keys and values held in row-major slices.
#[derive(Debug, Clone, Copy)]
pub struct SliceSource<'a> {
    keys: &'a [f64],
    values: &'a [f64],
    key_dim: usize,
    value_dim: usize,
}

impl<'a> SliceSource<'a> {
    pub fn new(keys: &'a [f64], key_dim: usize, values: &'a [f64], value_dim: usize) -> Result<Self> {
        if key_dim == 0 || value_dim == 0 {
            return Err(Error::domain("key and value dimensions must be positive"));
        }
        if !keys.len().is_multiple_of(key_dim) || !values.len().is_multiple_of(value_dim) {
            return Err(Error::domain("flat buffers are not a whole number of rows"));
        }
        if keys.len() / key_dim != values.len() / value_dim {
            return Err(Error::domain(format!(
                "{} keys but {} values",
                keys.len() / key_dim,
                values.len() / value_dim
            )));
        }
        Ok(SliceSource {
            keys,
            values,
            key_dim,
            value_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len() / self.key_dim
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

impl KeyValueSource for SliceSource<'_> {
    fn visit(&self, f: &mut PairVisitor<'_>) -> Result<()> {
        for (k, v) in self.keys.chunks(self.key_dim).zip(self.values.chunks(self.value_dim)) {
            f(k, v)?;
        }
        Ok(())
    }
}

/// Pairs produced on the fly by `fill(index, key, value)`; only two row
/// buffers are alive at a time.
pub struct GeneratedSource<F> {
    pub len: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub fill: F,
}

impl<F: Fn(usize, &mut [f64], &mut [f64])> KeyValueSource for GeneratedSource<F> {
    fn visit(&self, f: &mut PairVisitor<'_>) -> Result<()> {
        let mut key = vec![0.0; self.key_dim];
        let mut value = vec![0.0; self.value_dim];
        for i in 0..self.len {
            (self.fill)(i, &mut key, &mut value);
            f(&key, &value)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRowResult {
    /// `Σ α_j v_j`
    pub output: Vec<f64>,
    /// Entropy of the unscaled row `softmax(q·k)`, which selects β.
    pub entropy: f64,
    /// Entropy of the coefficients actually applied.
    pub output_entropy: f64,
    pub beta: f64,
    pub n: u64,
}

fn dot_checked(query: &[f64], key: &[f64]) -> Result<f64> {
    if key.len() != query.len() {
        return Err(Error::domain(format!(
            "key has {} entries, query has {}",
            key.len(),
            query.len()
        )));
    }
    Ok(query.iter().zip(key).map(|(a, b)| a * b).sum())
}

fn check_value(acc: &mut Vec<f64>, value: &[f64]) -> Result<()> {
    if acc.is_empty() {
        if value.is_empty() {
            return Err(Error::domain("values must be non-empty"));
        }
        acc.resize(value.len(), 0.0);
    } else if acc.len() != value.len() {
        return Err(Error::domain(format!(
            "value has {} entries, expected {}",
            value.len(),
            acc.len()
        )));
    }
    Ok(())
}

/// Attention of one query over a replayable key/value stream.
///
/// With `adaptive` the source is read twice: once for the row entropy that
/// fixes β, once to accumulate values under logits scaled by β. Without it a
/// single fused pass rescales the accumulator whenever the maximum moves.
/// Extra memory is the accumulator plus a constant.
pub fn streamed_adaptive_attention(
    query: &[f64],
    source: &dyn KeyValueSource,
    cfg: &AdaptiveSoftmaxConfig,
    adaptive: bool,
) -> Result<AttentionRowResult> {
    if query.is_empty() {
        return Err(Error::domain("query must be non-empty"));
    }
    if !adaptive {
        return single_pass(query, source);
    }

    let mut state = StreamState::new();
    source.visit(&mut |k, _| {
        state = state.update(dot_checked(query, k)?)?;
        Ok(())
    })?;
    let entropy = state.entropy()?;
    let beta = cfg.beta_for_entropy(entropy);

    // β ≥ 0, so the scaled maximum is β·m and needs no rescaling.
    let shift = beta * state.running_max;
    let mut acc: Vec<f64> = Vec::new();
    let mut total = 0.0;
    let mut scaled = StreamState::new();
    source.visit(&mut |k, v| {
        check_value(&mut acc, v)?;
        let l = beta * dot_checked(query, k)?;
        let w = (l - shift).exp();
        total += w;
        for (a, x) in acc.iter_mut().zip(v) {
            *a += w * x;
        }
        scaled = scaled.update(l)?;
        Ok(())
    })?;
    if scaled.count != state.count {
        return Err(Error::domain("source yielded a different number of pairs on replay"));
    }
    for a in acc.iter_mut() {
        *a /= total;
    }
    Ok(AttentionRowResult {
        output: acc,
        entropy,
        output_entropy: scaled.entropy()?,
        beta,
        n: state.count,
    })
}

fn single_pass(query: &[f64], source: &dyn KeyValueSource) -> Result<AttentionRowResult> {
    let mut state = StreamState::new();
    let mut acc: Vec<f64> = Vec::new();
    source.visit(&mut |k, v| {
        check_value(&mut acc, v)?;
        let l = dot_checked(query, k)?;
        let next = state.update(l)?;
        let rescale = (state.running_max - next.running_max).exp();
        let w = (l - next.running_max).exp();
        for (a, x) in acc.iter_mut().zip(v) {
            *a = *a * rescale + w * x;
        }
        state = next;
        Ok(())
    })?;
    let entropy = state.entropy()?;
    for a in acc.iter_mut() {
        *a /= state.normalizer;
    }
    Ok(AttentionRowResult {
        output: acc,
        entropy,
        output_entropy: entropy,
        beta: 1.0,
        n: state.count,
    })
}

/// Timing and memory of one streamed row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamBenchRow {
    pub n: usize,
    pub wall_ms: f64,
    /// Peak bytes allocated during the call; `None` without the counting allocator.
    pub peak_extra_bytes: Option<usize>,
    pub entropy: f64,
    pub beta: f64,
}

/// Deterministic pseudo-random value in `[-1, 1)` for benchmark inputs.
pub fn hash_unit(seed: u64, i: u64) -> f64 {
    let mut z = seed ^ i.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Runs adaptive streamed attention over generated inputs of each size,
/// recording wall time and peak extra heap use.
pub fn stream_benchmark(sizes: &[usize], dim: usize, seed: u64) -> Result<Vec<StreamBenchRow>> {
    let query: Vec<f64> = (0..dim).map(|i| 3.0 * hash_unit(seed, i as u64)).collect();
    let cfg = AdaptiveSoftmaxConfig::default();
    sizes
        .iter()
        .map(|&n| {
            let source = GeneratedSource {
                len: n,
                key_dim: dim,
                value_dim: dim,
                fill: |i: usize, k: &mut [f64], v: &mut [f64]| {
                    let base = (i * 2 * dim) as u64;
                    for (j, x) in k.iter_mut().enumerate() {
                        *x = hash_unit(seed + 1, base + j as u64);
                    }
                    for (j, x) in v.iter_mut().enumerate() {
                        *x = hash_unit(seed + 2, base + j as u64);
                    }
                },
            };
            let start = Instant::now();
            let (res, peak) = crate::alloc_probe::measure_peak(|| streamed_adaptive_attention(&query, &source, &cfg, true));
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let res = res?;
            Ok(StreamBenchRow {
                n,
                wall_ms,
                peak_extra_bytes: peak,
                entropy: res.entropy,
                beta: res.beta,
            })
        })
        .collect()
}
