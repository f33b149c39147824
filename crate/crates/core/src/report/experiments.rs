use std::path::Path;

use ndarray::Array2;

use super::svg::{emit_svg, PlotKind, PlotSpec, Series};
use super::tables::{write_csv, write_table1_layout, EvalReport, FailedSeed, FailureRow, SpreadBoundRow};
use crate::dispersion::{corollary_failure_demo, DispersionThreshold, FailureDemoReport, SINGLE_EPSILON};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::par::{self, Execution};
use crate::retrieval::data::{derived_rng, generate_example};
use crate::retrieval::{default_sizes, evaluate_paired, train, EvalConfig, LogEntry, ModelParams, Normalizer, TrainConfig, TrainOutcome};
use crate::softmax::{entropy_landscape, AdaptiveSoftmaxConfig};

const DISPERSION_TAG: u64 = 0xd15b_0000;

/// A trained model and its seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: TrainOutcome<f32>,
}

/// Trains one model per seed; seeds run in parallel when enabled.
pub fn train_seeds(seeds: &[u64], cfg: &TrainConfig, exec: Execution) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    par::map_slice(exec, seeds, |&seed| {
        train::<f32>(&cfg.clone().with_seed(seed)).map(|outcome| SeedRun { seed, outcome })
    })
    .into_iter()
    .collect()
}

/// Paired evaluation of every run that finished training. Diverged runs are
/// listed in `failed`; at least two must survive.
pub fn evaluate_runs(runs: &[SeedRun], cfg: &EvalConfig) -> Result<EvalReport> {
    let mut failed = Vec::new();
    let mut evals = Vec::new();
    for run in runs {
        if let Some(step) = run.outcome.diverged_at {
            failed.push(FailedSeed {
                seed: run.seed,
                diverged_at: step,
            });
            continue;
        }
        let seed_cfg = EvalConfig {
            seed: run.seed,
            ..cfg.clone()
        };
        evals.push((run.seed, evaluate_paired(&run.outcome.params, &seed_cfg)?));
    }
    if evals.len() < 2 {
        return Err(Error::domain(format!(
            "only {} seed(s) finished training; at least 2 are needed",
            evals.len()
        )));
    }
    EvalReport::from_evals(evals, failed)
}

/// Trains and evaluates each seed with and without adaptive temperature.
pub fn run_table1(seeds: &[u64], train_cfg: &TrainConfig, eval_cfg: &EvalConfig) -> Result<(EvalReport, Vec<SeedRun>)> {
    let mut unique = seeds.to_vec();
    unique.sort_unstable();
    unique.dedup();
    if unique.len() < 2 {
        return Err(Error::domain("a paired comparison needs at least two distinct seeds"));
    }
    let runs = train_seeds(&unique, train_cfg, eval_cfg.exec)?;
    Ok((evaluate_runs(&runs, eval_cfg)?, runs))
}

impl EvalReport {
    /// Writes `eval.csv`, `table1_summary.csv`, `table1.csv` and
    /// `accuracy.svg` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_csv(&dir.join("eval.csv"), &self.rows)?;
        write_csv(&dir.join("table1_summary.csv"), &self.summary)?;
        write_table1_layout(&dir.join("table1.csv"), &self.summary)?;
        if !self.failed.is_empty() {
            write_csv(&dir.join("failed_seeds.csv"), &self.failed)?;
        }
        let line = |adaptive: bool| {
            self.summary
                .iter()
                .map(|s| (s.size as f64, if adaptive { s.adaptive_mean } else { s.baseline_mean }))
                .collect()
        };
        emit_svg(&PlotSpec {
            title: "Accuracy against set size".into(),
            x_label: "items".into(),
            y_label: "mean accuracy".into(),
            kind: PlotKind::Line {
                series: vec![Series::new("baseline", line(false)), Series::new("adaptive", line(true))],
                log_x: true,
                log_y: false,
            },
            path: dir.join("accuracy.svg"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionConfig {
    pub sizes: Vec<usize>,
    /// Examples per size (heatmap rows).
    pub batch: usize,
    pub seed: u64,
    pub theta: f64,
    pub adaptive: AdaptiveSoftmaxConfig,
    pub exec: Execution,
}

impl Default for DispersionConfig {
    fn default() -> Self {
        DispersionConfig {
            sizes: default_sizes(),
            batch: 32,
            seed: 0,
            theta: 1.0,
            adaptive: AdaptiveSoftmaxConfig::default(),
            exec: Execution::default(),
        }
    }
}

/// Coefficients on the highest-priority items, one row per example.
/// Columns are sorted by ascending priority, so the last column is the target.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionHeatmap {
    pub size: usize,
    pub adaptive: bool,
    pub values: Array2<f64>,
}

impl DispersionHeatmap {
    /// Mean coefficient on the target column.
    pub fn mean_target_alpha(&self) -> f64 {
        let last = self.values.ncols() - 1;
        self.values.column(last).mean().unwrap_or(f64::NAN)
    }
}

const TOP_ITEMS: usize = 16;

/// Attention on the 16 highest-priority items at each size, for the
/// baseline and the adaptive softmax.
pub fn run_dispersion_figure<T: Scalar>(params: &ModelParams<T>, cfg: &DispersionConfig) -> Result<Vec<DispersionHeatmap>> {
    if cfg.batch == 0 || cfg.sizes.is_empty() || cfg.sizes.contains(&0) {
        return Err(Error::domain("dispersion figure needs positive sizes and batch"));
    }
    let norms = [
        Normalizer::Softmax { theta: cfg.theta },
        Normalizer::Adaptive {
            theta: cfg.theta,
            cfg: cfg.adaptive,
        },
    ];
    let mut maps = Vec::new();
    for &size in &cfg.sizes {
        let cols = size.min(TOP_ITEMS);
        let rows = par::map_range(cfg.exec, cfg.batch, |b| -> Result<[Vec<f64>; 2]> {
            let ex = generate_example(&mut derived_rng(cfg.seed, DISPERSION_TAG + size as u64, b as u64), size)?;
            let emb = params.embed(std::slice::from_ref(&ex))?;
            let mut order: Vec<usize> = (0..size).collect();
            order.sort_by(|&i, &j| ex.priority(j).total_cmp(&ex.priority(i)).then(i.cmp(&j)));
            order.truncate(cols);
            order.reverse();
            let pick = |norm: &Normalizer| {
                let (alpha, _) = params.coefficients(&emb, norm);
                order.iter().map(|&i| alpha[i]).collect::<Vec<f64>>()
            };
            Ok([pick(&norms[0]), pick(&norms[1])])
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        for (arm, adaptive) in [false, true].into_iter().enumerate() {
            let values = Array2::from_shape_fn((cfg.batch, cols), |(r, c)| rows[r][arm][c]);
            maps.push(DispersionHeatmap { size, adaptive, values });
        }
    }
    Ok(maps)
}

#[derive(serde::Serialize)]
struct DispersionCell {
    size: usize,
    adaptive: bool,
    example: usize,
    column: usize,
    alpha: f64,
}

/// Writes `dispersion.csv` and one heatmap SVG per size and mode.
pub fn write_dispersion_figure(maps: &[DispersionHeatmap], dir: &Path) -> Result<()> {
    let mut cells = Vec::new();
    for m in maps {
        for ((r, c), &alpha) in m.values.indexed_iter() {
            cells.push(DispersionCell {
                size: m.size,
                adaptive: m.adaptive,
                example: r,
                column: c,
                alpha,
            });
        }
        let mode = if m.adaptive { "adaptive" } else { "baseline" };
        emit_svg(&PlotSpec {
            title: format!("Top-{} coefficients, {} items ({mode})", m.values.ncols(), m.size),
            x_label: "item rank by priority (ascending)".into(),
            y_label: "example".into(),
            kind: PlotKind::Heatmap {
                grid: m.values.clone(),
                x_range: (1.0, m.values.ncols() as f64),
                y_range: (m.values.nrows() as f64, 1.0),
            },
            path: dir.join(format!("dispersion_{}_{mode}.svg", m.size)),
        })?;
    }
    write_csv(&dir.join("dispersion.csv"), &cells)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub lambdas: Vec<f64>,
    pub thetas: Vec<f64>,
    /// Rows follow `lambdas`, columns follow `thetas`.
    pub entropy: Array2<f64>,
}

impl LandscapeGrid {
    /// λ from 0 to 1 in steps of 0.01; θ log-spaced from 1e-3 to 10.
    pub fn default_axes() -> (Vec<f64>, Vec<f64>) {
        let lambdas = (0..=100).map(|i| i as f64 / 100.0).collect();
        let thetas = (0..=80).map(|i| 10f64.powf(-3.0 + i as f64 / 20.0)).collect();
        (lambdas, thetas)
    }
}

#[derive(serde::Serialize)]
struct LandscapeCell {
    lambda: f64,
    theta: f64,
    entropy: f64,
}

/// Entropy of power-series logits over `(λ, θ)`; writes `landscape.csv`
/// and `landscape.svg` when `dir` is given.
pub fn run_entropy_landscape(lambdas: &[f64], thetas: &[f64], dir: Option<&Path>) -> Result<LandscapeGrid> {
    let entropy = entropy_landscape(lambdas, thetas)?;
    if let Some(dir) = dir {
        let mut cells = Vec::with_capacity(entropy.len());
        for ((r, c), &h) in entropy.indexed_iter() {
            cells.push(LandscapeCell {
                lambda: lambdas[r],
                theta: thetas[c],
                entropy: h,
            });
        }
        write_csv(&dir.join("landscape.csv"), &cells)?;
        let first = |v: &[f64]| v[0];
        let last = |v: &[f64]| v[v.len() - 1];
        emit_svg(&PlotSpec {
            title: "Entropy of power-series logits".into(),
            x_label: "theta (column index, log-spaced)".into(),
            y_label: "lambda".into(),
            kind: PlotKind::Heatmap {
                grid: entropy.clone(),
                x_range: (first(thetas), last(thetas)),
                y_range: (last(lambdas), first(lambdas)),
            },
            path: dir.join("landscape.svg"),
        })?;
    }
    Ok(LandscapeGrid {
        lambdas: lambdas.to_vec(),
        thetas: thetas.to_vec(),
        entropy,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundFigure {
    pub rows: Vec<SpreadBoundRow>,
    /// Every logged spread is at most its bound.
    pub dominated: bool,
}

/// Observed spread against the spectral bound over training; writes
/// `bound.csv` and `bound.svg` when `dir` is given.
pub fn run_bound_figure(log: &[LogEntry], dir: Option<&Path>) -> Result<BoundFigure> {
    if log.is_empty() {
        return Err(Error::domain("training log is empty"));
    }
    let rows: Vec<SpreadBoundRow> = log
        .iter()
        .map(|e| SpreadBoundRow {
            step: e.step,
            delta: e.delta,
            bound: e.bound,
        })
        .collect();
    let dominated = rows.iter().all(|r| r.delta <= r.bound);
    if let Some(dir) = dir {
        write_csv(&dir.join("bound.csv"), &rows)?;
        let series = |f: fn(&SpreadBoundRow) -> f64| rows.iter().map(|r| (r.step as f64, f(r))).collect();
        emit_svg(&PlotSpec {
            title: "Logit spread and its spectral bound".into(),
            x_label: "training step".into(),
            y_label: "logit spread".into(),
            kind: PlotKind::Line {
                series: vec![
                    Series::new("observed spread", series(|r| r.delta)),
                    Series::new("bound", series(|r| r.bound)),
                ],
                log_x: false,
                log_y: true,
            },
            path: dir.join("bound.svg"),
        })?;
    }
    Ok(BoundFigure { rows, dominated })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureDemoConfig {
    pub rho_a: f64,
    pub rho_b: f64,
    pub class_a: usize,
    pub class_b: usize,
    pub query_scalar: f64,
    pub epsilon: f64,
}

impl Default for FailureDemoConfig {
    fn default() -> Self {
        FailureDemoConfig {
            rho_a: 0.9,
            rho_b: 0.8,
            class_a: 0,
            class_b: 1,
            query_scalar: 0.5,
            epsilon: SINGLE_EPSILON,
        }
    }
}

/// Powers of two up to 16× the threshold (capped at 2^63), plus the
/// threshold and its predecessor.
pub fn failure_demo_sizes(threshold: &DispersionThreshold) -> Vec<u64> {
    let limit = threshold.n.saturating_mul(16);
    let mut sizes: Vec<u64> = (0..64).map(|k| 1u64 << k).take_while(|&n| n / 2 < limit).collect();
    sizes.push(threshold.n);
    sizes.push(threshold.n.saturating_sub(1).max(1));
    sizes.sort_unstable();
    sizes.dedup();
    sizes
}

/// Runs the `{v_a, v_b, …, v_b}` construction over sizes chosen around the
/// dispersion threshold; writes `failure.csv` and `failure.svg` when `dir`
/// is given.
pub fn run_failure_demo<T: Scalar>(params: &ModelParams<T>, cfg: &FailureDemoConfig, dir: Option<&Path>) -> Result<FailureDemoReport> {
    let demo = |sizes: &[u64]| {
        corollary_failure_demo(
            params,
            cfg.rho_a,
            cfg.rho_b,
            cfg.class_a,
            cfg.class_b,
            cfg.query_scalar,
            sizes,
            cfg.epsilon,
        )
    };
    let probe = demo(&[1, 2])?;
    let report = demo(&failure_demo_sizes(&probe.threshold))?;
    if let Some(dir) = dir {
        write_csv(&dir.join("failure.csv"), &FailureRow::from_report(&report))?;
        let points = |ys: &[f64]| {
            report
                .n_values
                .iter()
                .zip(ys)
                .filter(|(_, &y)| y > 0.0)
                .map(|(&n, &y)| (n as f64, y))
                .collect::<Vec<_>>()
        };
        let eps = vec![cfg.epsilon; report.n_values.len()];
        emit_svg(&PlotSpec {
            title: "Coefficient on the distinguished item".into(),
            x_label: "items".into(),
            y_label: "coefficient".into(),
            kind: PlotKind::Line {
                series: vec![
                    Series::new("alpha_1", points(&report.alpha_1)),
                    Series::new("upper bound", points(&report.alpha_upper)),
                    Series::new("epsilon", points(&eps)),
                ],
                log_x: true,
                log_y: true,
            },
            path: dir.join("failure.svg"),
        })?;
    }
    Ok(report)
}
