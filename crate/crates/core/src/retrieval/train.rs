use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamMoments};
use super::data::{derived_rng, generate_batch};
use super::grad::loss_and_grads;
use super::model::{Embedded, ModelParams};
use crate::dispersion::{spectral_norm, spread_of, NormBound};
use crate::error::{Error, Result};
use crate::num::{FlushSubnormals, Scalar};

const INIT_TAG: u64 = 0x1a17;
const DATA_TAG: u64 = 0xda7a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Inclusive range the per-step set size is drawn from.
    pub n_min: usize,
    pub n_max: usize,
    pub seed: u64,
    /// Must stay `false`: training only ever uses the plain softmax.
    pub adaptive_temperature: bool,
    pub precision: Precision,
    pub log_every: u64,
    pub theta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 100_000,
            batch_size: 128,
            lr: 1e-3,
            weight_decay: 1e-3,
            n_min: 5,
            n_max: 16,
            seed: 0,
            adaptive_temperature: false,
            precision: Precision::Single,
            log_every: 1000,
            theta: 1.0,
        }
    }
}

impl TrainConfig {
    /// Reduced 20,000-step schedule used for CI-sized runs.
    pub fn desk_scale() -> Self {
        TrainConfig {
            steps: 20_000,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(Error::domain("set-size range must be non-empty and start at 1 or more"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::domain("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be positive"));
        }
        if self.adaptive_temperature {
            return Err(Error::domain("training with adaptive temperature is not supported"));
        }
        if !(self.theta > 0.0) || !(self.weight_decay >= 0.0) || self.log_every == 0 {
            return Err(Error::domain("theta must be positive, weight decay non-negative, log_every positive"));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    /// Number of updates applied before this batch.
    pub step: u64,
    pub loss: f64,
    pub accuracy: f64,
    /// Largest logit spread over the batch.
    pub delta: f64,
    /// Spectral bound using the batch's largest query and item norms.
    pub bound: f64,
    pub sigma_q: f64,
    pub sigma_k: f64,
    pub query_norm: f64,
    pub item_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Final parameters, or the last finite ones if training diverged.
    pub params: ModelParams<T>,
    pub log: Vec<LogEntry>,
    pub diverged_at: Option<u64>,
}

/// Initial parameters for a seed.
pub fn init_params<T: Scalar>(seed: u64) -> ModelParams<T> {
    ModelParams::init(&mut derived_rng(seed, INIT_TAG, 0))
}

/// Spectral bound for a batch: the query matrix includes the `1/√d` logit scale.
pub fn batch_norm_bound<T: Scalar>(params: &ModelParams<T>, emb: &Embedded<T>) -> Result<NormBound> {
    let scale = ModelParams::<T>::scale_factor().f64();
    let wq = params.w_query.mapv(|v| v.f64());
    let wk = params.w_key.mapv(|v| v.f64());
    let sigma_q = spectral_norm(wq.view())? * scale;
    let sigma_k = spectral_norm(wk.view())?;
    let row_norm = |a: &ndarray::Array2<T>| {
        a.rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    };
    let delta = emb
        .logits
        .chunks(emb.n)
        .map(spread_of)
        .fold(0.0, f64::max);
    Ok(NormBound::from_parts(
        sigma_q,
        sigma_k,
        row_norm(&emb.query),
        row_norm(&emb.items),
        delta,
    ))
}

/// Trains from the seed's initialisation.
pub fn train<T: Scalar>(cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_from(init_params(cfg.seed), cfg, |_| {})
}

/// Runs the training loop from `params`, calling `on_log` for each log row.
pub fn train_from<T: Scalar>(
    mut params: ModelParams<T>,
    cfg: &TrainConfig,
    mut on_log: impl FnMut(&LogEntry),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let _flush = FlushSubnormals::enable();
    let mut rng = derived_rng(cfg.seed, DATA_TAG, 0);
    let mut moments = AdamMoments::<T>::zeros();
    let adam = AdamConfig::default();
    let mut log = Vec::new();
    for step in 0..cfg.steps {
        let n = rng.random_range(cfg.n_min..=cfg.n_max);
        let batch = generate_batch(&mut rng, cfg.batch_size, n)?;
        let result = loss_and_grads(&params, &batch, cfg.weight_decay, cfg.theta);
        let (parts, grads) = match result {
            Ok(r) if grads_finite(&r.1) => r,
            _ => {
                return Ok(TrainOutcome {
                    params,
                    log,
                    diverged_at: Some(step),
                })
            }
        };
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            let emb = params.embed(&batch)?;
            let b = batch_norm_bound(&params, &emb)?;
            let entry = LogEntry {
                step,
                loss: parts.total(),
                accuracy: parts.correct as f64 / parts.count as f64,
                delta: b.observed_spread,
                bound: b.bound,
                sigma_q: b.sigma_max_q,
                sigma_k: b.sigma_max_k,
                query_norm: b.query_norm,
                item_norm: b.max_item_norm,
            };
            on_log(&entry);
            log.push(entry);
        }
        adam_step(&mut params, &mut moments, &grads, cfg.lr, step + 1, &adam);
    }
    Ok(TrainOutcome {
        params,
        log,
        diverged_at: None,
    })
}

fn grads_finite<T: Scalar>(g: &ModelParams<T>) -> bool {
    g.is_finite()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steps_returns_initialisation() {
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default().with_seed(7)
        };
        let out = train::<f32>(&cfg).unwrap();
        assert_eq!(out.params, init_params::<f32>(7));
        assert!(out.log.is_empty());
    }

    #[test]
    fn short_run_is_deterministic_and_logs_valid_bounds() {
        let cfg = TrainConfig {
            steps: 30,
            batch_size: 16,
            log_every: 10,
            ..TrainConfig::default().with_seed(3)
        };
        let a = train::<f32>(&cfg).unwrap();
        let b = train::<f32>(&cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.iter().map(|e| e.step).collect::<Vec<_>>(), vec![0, 10, 20, 29]);
        for e in &a.log {
            assert!(e.delta <= e.bound, "{e:?}");
        }
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            adaptive_temperature: true,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            n_min: 9,
            n_max: 4,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(TrainConfig::desk_scale().steps, 20_000);
    }
}
