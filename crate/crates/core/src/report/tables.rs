use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::stats::{mean_std, paired_t_test};
use crate::dispersion::FailureDemoReport;
use crate::error::{Error, Result};
use crate::retrieval::SizeEval;

/// One `(seed, size, mode)` evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub seed: u64,
    pub size: usize,
    pub adaptive: bool,
    pub accuracy: f64,
    pub mean_max_alpha: f64,
    pub mean_entropy: f64,
}

/// Across-seed aggregate at one size. `t` and `p` compare adaptive against
/// baseline (positive `t`: adaptive is better) and need two or more seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub seeds: usize,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub adaptive_mean: f64,
    pub adaptive_std: f64,
    pub baseline_max_alpha: f64,
    pub adaptive_max_alpha: f64,
    pub t: Option<f64>,
    pub p: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailedSeed {
    pub seed: u64,
    pub diverged_at: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    /// Sorted by seed, size, then baseline before adaptive.
    pub rows: Vec<EvalRow>,
    pub summary: Vec<SizeSummary>,
    pub failed: Vec<FailedSeed>,
}

impl EvalReport {
    /// Builds rows and aggregates from per-seed paired evaluations.
    pub fn from_evals(mut evals: Vec<(u64, Vec<SizeEval>)>, failed: Vec<FailedSeed>) -> Result<Self> {
        evals.sort_by_key(|(seed, _)| *seed);
        let mut rows = Vec::new();
        let mut by_size: BTreeMap<usize, Vec<SizeEval>> = BTreeMap::new();
        for (seed, sizes) in &evals {
            let mut sizes = sizes.clone();
            sizes.sort_by_key(|s| s.size);
            for s in sizes {
                for (adaptive, arm) in [(false, s.baseline), (true, s.adaptive)] {
                    rows.push(EvalRow {
                        seed: *seed,
                        size: s.size,
                        adaptive,
                        accuracy: arm.accuracy,
                        mean_max_alpha: arm.mean_max_alpha,
                        mean_entropy: arm.mean_entropy,
                    });
                }
                by_size.entry(s.size).or_default().push(s);
            }
        }
        let mut summary = Vec::new();
        for (size, evals) in by_size {
            let base: Vec<f64> = evals.iter().map(|e| e.baseline.accuracy).collect();
            let adapt: Vec<f64> = evals.iter().map(|e| e.adaptive.accuracy).collect();
            let (baseline_mean, baseline_std) = mean_std(&base);
            let (adaptive_mean, adaptive_std) = mean_std(&adapt);
            let test = if evals.len() >= 2 { Some(paired_t_test(&adapt, &base)?) } else { None };
            summary.push(SizeSummary {
                size,
                seeds: evals.len(),
                baseline_mean,
                baseline_std,
                adaptive_mean,
                adaptive_std,
                baseline_max_alpha: mean_std(&evals.iter().map(|e| e.baseline.mean_max_alpha).collect::<Vec<_>>()).0,
                adaptive_max_alpha: mean_std(&evals.iter().map(|e| e.adaptive.mean_max_alpha).collect::<Vec<_>>()).0,
                t: test.map(|t| t.t),
                p: test.map(|t| t.p),
                degenerate: test.is_some_and(|t| t.degenerate),
            });
        }
        Ok(EvalReport { rows, summary, failed })
    }

    pub fn size(&self, size: usize) -> Option<&SizeSummary> {
        self.summary.iter().find(|s| s.size == size)
    }

    /// Accuracies of one mode at one size, in seed order.
    pub fn accuracies(&self, size: usize, adaptive: bool) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.size == size && r.adaptive == adaptive)
            .map(|r| r.accuracy)
            .collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut seeds: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        seeds.dedup();
        seeds
    }
}

/// `(step, delta, bound)` row of the spread-bound figure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadBoundRow {
    pub step: u64,
    pub delta: f64,
    pub bound: f64,
}

/// `(n, alpha_1, predicted_class)` row of the vanishing-coefficient demo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub n: u64,
    pub alpha_1: f64,
    pub predicted_class: usize,
}

impl FailureRow {
    pub fn from_report(r: &FailureDemoReport) -> Vec<FailureRow> {
        (0..r.n_values.len())
            .map(|i| FailureRow {
                n: r.n_values[i],
                alpha_1: r.alpha_1[i],
                predicted_class: r.predicted_class[i],
            })
            .collect()
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Writes serialisable records with a header row.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

const LAYOUT_ROWS: [&str; 6] = ["baseline_mean", "baseline_std", "adaptive_mean", "adaptive_std", "t", "p"];

/// Writes the summary transposed: one column per size, one row per statistic.
pub fn write_table1_layout(path: &Path, summary: &[SizeSummary]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["row".to_string()];
    header.extend(summary.iter().map(|s| s.size.to_string()));
    w.write_record(&header)?;
    for name in LAYOUT_ROWS {
        let mut rec = vec![name.to_string()];
        for s in summary {
            let v = match name {
                "baseline_mean" => Some(s.baseline_mean),
                "baseline_std" => Some(s.baseline_std),
                "adaptive_mean" => Some(s.adaptive_mean),
                "adaptive_std" => Some(s.adaptive_std),
                "t" => s.t,
                _ => s.p,
            };
            rec.push(v.map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a layout file back into `(size, statistic) → value`.
pub fn read_table1_layout(path: &Path) -> Result<BTreeMap<(usize, String), Option<f64>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let sizes: Vec<usize> = r
        .headers()?
        .iter()
        .skip(1)
        .map(|h| h.parse().map_err(|_| Error::domain(format!("bad size column {h:?}"))))
        .collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let name = rec.get(0).unwrap_or_default().to_string();
        for (size, field) in sizes.iter().zip(rec.iter().skip(1)) {
            let v = if field.is_empty() {
                None
            } else {
                Some(field.parse().map_err(|_| Error::domain(format!("bad value {field:?}")))?)
            };
            out.insert((*size, name.clone()), v);
        }
    }
    Ok(out)
}
