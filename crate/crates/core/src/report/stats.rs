use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Two-sided paired t-test result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
    /// The differences had zero variance; `p` is 1 for a zero mean, else 0.
    pub degenerate: bool,
}

/// Paired t-test of `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::domain(format!("paired samples differ in length ({} vs {})", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::domain("a paired t-test needs at least two pairs"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::domain("paired samples must be finite"));
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = a.len() - 1;
    if var == 0.0 {
        let (t, p) = if mean == 0.0 { (0.0, 1.0) } else { (f64::INFINITY.copysign(mean), 0.0) };
        return Ok(TTest { t, p, df, degenerate: true });
    }
    let t = mean / (var / n).sqrt();
    let nu = df as f64;
    let p = beta_reg(nu / 2.0, 0.5, nu / (nu + t * t)).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        p,
        df,
        degenerate: false,
    })
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
