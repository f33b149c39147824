//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.
//!
//! `ACCEPTANCE_ONLY=1,5,9` restricts the run to the listed criteria.
//! Artifacts (tables, figures, logs) go to `$CARGO_TARGET_TMPDIR/acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use softmax_dispersion::alloc_probe::{measure_peak, CountingAlloc};
use softmax_dispersion::dispersion::{dispersion_threshold, lemma1_bounds, logit_spread, SINGLE_EPSILON};
use softmax_dispersion::report::{
    evaluate_runs, run_bound_figure, run_failure_demo, EvalReport, FailureDemoConfig, SeedRun,
};
use softmax_dispersion::retrieval::data::derived_rng;
use softmax_dispersion::retrieval::train::init_params;
use softmax_dispersion::retrieval::{
    batch_loss, generate_batch, loss_and_grads, train, EvalConfig, ModelParams, TrainConfig,
};
use softmax_dispersion::softmax::{
    adaptive_temperature_softmax, boltzmann_entropy_curve, softmax_temp, AdaptiveSoftmaxConfig, LogitVector,
    PolyFit,
};
use softmax_dispersion::streaming::{stream_logits, streamed_adaptive_attention, GeneratedSource, SliceSource};
use softmax_dispersion::theta_fit::{fit_polynomial, grid_search_theta, FitSample};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

const TABLE_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const TABLE_N_EVAL: usize = 2000;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64, detail: String) -> Outcome {
    ensure(
        elapsed.as_secs_f64() < limit_s,
        format!("{detail}; took {:.1}s (limit {limit_s}s)", elapsed.as_secs_f64()),
    )
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xacce_0000 + tag)
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn artifacts() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).expect("artifact dir");
    dir
}

/// Plain two-pass softmax and entropy.
fn naive_softmax(logits: &[f64], beta: f64) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (beta * (l - m)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

fn naive_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------

fn coefficient_bounds() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(1);
    let thetas = [0.1, 1.0, 10.0];
    let mut checked = 0usize;
    let (mut near_upper, mut near_lower): (f64, f64) = (0.0, 0.0);
    for case in 0..10_000 {
        let n = log_uniform(&mut rng, 2.0, 100_001.0).floor() as usize;
        let scale = log_uniform(&mut rng, 1e-3, 30.0);
        let theta = thetas[case % 3];
        let logits: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = logits.iter().copied().fold(f64::INFINITY, f64::min);
        let delta = max - min;
        let lo = (-delta / theta).exp() / n as f64;
        let hi = (delta / theta).exp() / n as f64;

        let e = LogitVector::new(logits).map_err(|e| e.to_string())?;
        if logit_spread(&e) != delta {
            return Err(format!("case {case}: spread {} vs {delta}", logit_spread(&e)));
        }
        let bound = lemma1_bounds(delta, theta, n as u64).map_err(|e| e.to_string())?;
        if bound.lower != lo || bound.upper != hi {
            return Err(format!("case {case}: library bounds ({}, {}) vs ({lo}, {hi})", bound.lower, bound.upper));
        }
        let p = softmax_temp(&e, theta).map_err(|e| e.to_string())?;
        for &a in p.as_slice() {
            near_upper = near_upper.max(a / hi);
            near_lower = near_lower.max(lo / a);
            if a < lo - 1e-12 || a > hi + 1e-12 {
                return Err(format!("case {case}: n {n}, theta {theta}, delta {delta}: alpha {a} outside [{lo}, {hi}]"));
            }
            checked += 1;
        }
    }
    within(
        start.elapsed(),
        60.0,
        format!(
            "10000 vectors, {checked} coefficients inside the bounds, \
             largest alpha/upper {near_upper:.6}, largest lower/alpha {near_lower:.6}"
        ),
    )
}

fn dispersion_threshold_value() -> Outcome {
    let start = Instant::now();
    let t = dispersion_threshold(5.0, 1.0, 1e-3).map_err(|e| e.to_string())?;
    // smallest n with e^5 / n < 1e-3
    let oracle = (5f64.exp() / 1e-3).floor() as u64 + 1;
    let at = lemma1_bounds(5.0, 1.0, t.n).map_err(|e| e.to_string())?.upper;
    let before = lemma1_bounds(5.0, 1.0, t.n - 1).map_err(|e| e.to_string())?.upper;
    let ok = t.n == 148_414 && t.n == oracle && !t.overflow && at < 1e-3 && before >= 1e-3;
    within(
        start.elapsed(),
        1.0,
        format!("threshold {} (expected 148414), upper bound there {at:.9} < 1e-3, at n-1 {before:.9}", t.n),
    )
    .and_then(|d| ensure(ok, d))
}

fn entropy_monotone_in_beta() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(3);
    let positive: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
    let negative: Vec<f64> = positive.iter().map(|b| -b).collect();
    let h = 1e-5;
    let (mut pairs, mut slopes, mut skipped) = (0usize, 0usize, 0usize);
    for case in 0..1000 {
        let scale = log_uniform(&mut rng, 0.05, 5.0);
        let e: Vec<f64> = (0..10).map(|_| scale * normal(&mut rng)).collect();
        let logits = LogitVector::from_slice(&e).map_err(|e| e.to_string())?;
        for grid in [&positive, &negative] {
            let curve = boltzmann_entropy_curve(&logits, grid).map_err(|e| e.to_string())?;
            for w in curve.windows(2) {
                if w[1].1 > w[0].1 + 1e-9 {
                    return Err(format!("case {case}: H({}) = {} > H({}) = {}", w[1].0, w[1].1, w[0].0, w[0].1));
                }
                pairs += 1;
            }
            for &beta in grid.iter() {
                let around = boltzmann_entropy_curve(&logits, &[beta - h, beta + h]).map_err(|e| e.to_string())?;
                let fd = (around[1].1 - around[0].1) / (2.0 * h);
                if fd.abs() <= 1e-8 {
                    skipped += 1;
                    continue;
                }
                // Var(e) under p ∝ exp(-β e)
                let p = naive_softmax(&e, -beta);
                let mean: f64 = p.iter().zip(&e).map(|(p, x)| p * x).sum();
                let var: f64 = p.iter().zip(&e).map(|(p, x)| p * (x - mean).powi(2)).sum();
                let expected = -beta * var;
                if fd.signum() != expected.signum() {
                    return Err(format!("case {case}, beta {beta}: slope {fd:e} but -beta Var = {expected:e}"));
                }
                slopes += 1;
            }
        }
    }
    within(
        start.elapsed(),
        60.0,
        format!("1000 vectors, {pairs} monotone steps, {slopes} slope signs agree ({skipped} below 1e-8)"),
    )
}

// ---------------------------------------------------------------------------

struct Trained {
    runs: Vec<SeedRun>,
    times: Vec<Duration>,
}

static TRAINED: OnceLock<Result<Trained, String>> = OnceLock::new();

fn trained() -> Result<&'static Trained, String> {
    TRAINED
        .get_or_init(|| {
            let mut runs = Vec::new();
            let mut times = Vec::new();
            for &seed in &TABLE_SEEDS {
                let start = Instant::now();
                let outcome = train::<f32>(&TrainConfig::desk_scale().with_seed(seed)).map_err(|e| e.to_string())?;
                times.push(start.elapsed());
                eprintln!(
                    "  trained seed {seed} in {:.0}s (final batch accuracy {:.3})",
                    start.elapsed().as_secs_f64(),
                    outcome.log.last().map_or(f64::NAN, |e| e.accuracy)
                );
                runs.push(SeedRun { seed, outcome });
            }
            Ok(Trained { runs, times })
        })
        .as_ref()
        .map_err(Clone::clone)
}

static REPORT: OnceLock<Result<EvalReport, String>> = OnceLock::new();

fn table_report() -> Result<&'static EvalReport, String> {
    REPORT
        .get_or_init(|| {
            let t = trained()?;
            let start = Instant::now();
            let cfg = EvalConfig {
                n_eval: TABLE_N_EVAL,
                ..EvalConfig::default()
            };
            let report = evaluate_runs(&t.runs, &cfg).map_err(|e| e.to_string())?;
            report.write(&artifacts()).map_err(|e| e.to_string())?;
            eprintln!("  evaluated {} seeds in {:.0}s", t.runs.len(), start.elapsed().as_secs_f64());
            Ok(report)
        })
        .as_ref()
        .map_err(Clone::clone)
}

fn spread_bound_during_training() -> Outcome {
    let t = trained()?;
    let run = &t.runs[0];
    let log = &run.outcome.log;
    let dir = artifacts();
    let fig = run_bound_figure(log, Some(&dir)).map_err(|e| e.to_string())?;
    let csv = std::fs::read_to_string(dir.join("bound.csv")).map_err(|e| e.to_string())?;
    let emitted = csv.starts_with("step,delta,bound\n") && csv.lines().count() == log.len() + 1;
    let mut worst: f64 = 0.0;
    for e in log {
        worst = worst.max(e.delta / e.bound);
        if e.delta > e.bound || e.delta.is_nan() {
            return Err(format!("step {}: spread {} exceeds bound {}", e.step, e.delta, e.bound));
        }
        let parts = 2.0 * e.sigma_q * e.sigma_k * e.query_norm * e.item_norm;
        if (parts - e.bound).abs() > 1e-9 * e.bound {
            return Err(format!("step {}: bound {} disagrees with its factors {parts}", e.step, e.bound));
        }
    }
    let detail = format!(
        "seed {}: {} logged steps, both series in bound.csv, largest spread/bound {worst:.3}",
        run.seed,
        log.len()
    );
    within(t.times[0], 1800.0, detail).and_then(|d| ensure(emitted && fig.dominated && run.outcome.diverged_at.is_none(), d))
}

fn streaming_matches_materialised() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(5);
    let cfg = AdaptiveSoftmaxConfig::default();

    let logits: Vec<f64> = (0..131_072).map(|_| 3.0 * normal(&mut rng)).collect();
    let streamed = stream_logits(&logits)
        .and_then(|s| s.entropy())
        .map_err(|e| e.to_string())?;
    let naive = naive_entropy(&naive_softmax(&logits, 1.0));
    let entropy_err = (streamed - naive).abs();

    let (n, kd, vd) = (4096, 16, 8);
    let keys: Vec<f64> = (0..n * kd).map(|_| normal(&mut rng)).collect();
    let values: Vec<f64> = (0..n * vd).map(|_| normal(&mut rng)).collect();
    let query: Vec<f64> = (0..kd).map(|_| 0.75 * normal(&mut rng)).collect();
    let source = SliceSource::new(&keys, kd, &values, vd).map_err(|e| e.to_string())?;
    let row_logits: Vec<f64> = (0..n)
        .map(|j| (0..kd).map(|d| query[d] * keys[j * kd + d]).sum())
        .collect();
    let h = naive_entropy(&naive_softmax(&row_logits, 1.0));
    // default rule written out: skip at H <= 0.5, else max(poly(H), 1)
    let poly = |h: f64| -1.791 + 4.917 * h - 2.3 * h * h + 0.481 * h.powi(3) - 0.037 * h.powi(4);
    let beta = if h <= 0.5 { 1.0 } else { poly(h).max(1.0) };
    let mut output_err: f64 = 0.0;
    for (adaptive, b) in [(true, beta), (false, 1.0)] {
        let alpha = naive_softmax(&row_logits, b);
        let got = streamed_adaptive_attention(&query, &source, &cfg, adaptive).map_err(|e| e.to_string())?;
        for c in 0..vd {
            let want: f64 = (0..n).map(|j| alpha[j] * values[j * vd + c]).sum();
            output_err = output_err.max((got.output[c] - want).abs());
        }
    }

    let mut peaks = Vec::new();
    for exp in 10..=17 {
        let src = GeneratedSource {
            len: 1usize << exp,
            key_dim: 64,
            value_dim: 64,
            fill: |i: usize, k: &mut [f64], v: &mut [f64]| {
                for (d, x) in k.iter_mut().enumerate() {
                    *x = ((i * 31 + d * 17) % 101) as f64 / 101.0 - 0.5;
                }
                v.fill(i as f64 % 7.0);
            },
        };
        let q = vec![0.3; 64];
        let (r, peak) = measure_peak(|| streamed_adaptive_attention(&q, &src, &cfg, true));
        r.map_err(|e| e.to_string())?;
        peaks.push(peak.ok_or("allocation counter inactive")?);
    }
    let flat = peaks.windows(2).all(|w| w[0] == w[1]);
    let detail = format!(
        "entropy error {entropy_err:.2e} at n=131072, attention error {output_err:.2e} at n=4096 (beta {beta:.3}), \
         extra bytes {} for n=2^10..2^17",
        if flat { format!("{} each", peaks[0]) } else { format!("{peaks:?}") }
    );
    within(start.elapsed(), 60.0, detail)
        .and_then(|d| ensure(entropy_err <= 1e-5 && output_err <= 1e-5 && beta > 1.0 && flat, d))
}

fn full_gradient_check() -> Outcome {
    let start = Instant::now();
    let mut params: ModelParams<f64> = init_params(11);
    // move away from zero biases so every parameter is exercised
    let mut r = rng(6);
    for (_, t) in params.tensors_mut() {
        for x in t.iter_mut() {
            *x += 0.05 * normal(&mut r);
        }
    }
    let batch = generate_batch(&mut derived_rng(6, 6, 0), 2, 3).map_err(|e| e.to_string())?;
    let (decay, theta, h) = (1e-3, 1.0, 1e-4);
    let (_, grads) = loss_and_grads(&params, &batch, decay, theta).map_err(|e| e.to_string())?;
    let analytic: Vec<(&'static str, Vec<f64>)> = grads.tensors().into_iter().map(|(n, g)| (n, g.to_vec())).collect();
    let decayed: Vec<bool> = ModelParams::<f64>::layout().into_iter().map(|(_, _, w)| w).collect();
    let mut count = 0usize;
    let (mut worst_abs, mut worst_rel, mut by_rel): (f64, f64, usize) = (0.0, 0.0, 0);
    for (t, (name, g)) in analytic.iter().enumerate() {
        for (j, &g) in g.iter().enumerate() {
            let orig = params.tensors()[t].1[j];
            // Only this coordinate's decay term changes; the rest of the
            // squared norm cancels exactly in the difference.
            let own_decay = if decayed[t] { decay } else { 0.0 };
            let mut at = |v: f64| -> Result<f64, String> {
                params.tensors_mut()[t].1[j] = v;
                let data = batch_loss(&params, &batch, 0.0, theta).map_err(|e| e.to_string())?.total();
                Ok(data + own_decay * v * v)
            };
            let fd = (at(orig + h)? - at(orig - h)?) / (2.0 * h);
            params.tensors_mut()[t].1[j] = orig;
            let abs = (g - fd).abs();
            let rel = abs / g.abs().max(fd.abs());
            if abs > 1e-6 && rel > 1e-4 {
                return Err(format!("{name}[{j}]: analytic {g:e}, difference quotient {fd:e}"));
            }
            worst_abs = worst_abs.max(abs);
            if g.abs() > 1e-4 {
                worst_rel = worst_rel.max(rel);
                by_rel += 1;
            }
            count += 1;
        }
    }
    within(
        start.elapsed(),
        60.0,
        format!(
            "{count} parameters on 2 sets of 3 items, worst absolute error {worst_abs:.2e}, \
             worst relative {worst_rel:.2e} over the {by_rel} gradients above 1e-4"
        ),
    )
}

fn table_direction() -> Outcome {
    let report = table_report()?;
    let mut failures = Vec::new();
    for row in report.rows.iter().filter(|r| r.size == 16 && !r.adaptive) {
        if row.accuracy < 0.90 {
            failures.push(format!("seed {} ID accuracy {:.3}", row.seed, row.accuracy));
        }
    }
    let at = |size| report.size(size).ok_or(format!("size {size} missing"));
    let largest = at(16_384)?;
    if largest.baseline_mean >= 0.35 {
        failures.push(format!("baseline at 16384 is {:.3}", largest.baseline_mean));
    }
    for s in report.summary.iter().filter(|s| s.size >= 512) {
        if s.adaptive_mean < s.baseline_mean {
            failures.push(format!("adaptive below baseline at {}", s.size));
        }
    }
    // paired t-test on per-seed accuracies, adaptive minus baseline
    let s1024 = at(1024)?;
    let (t, p) = (s1024.t.unwrap_or(f64::NAN), s1024.p.unwrap_or(f64::NAN));
    if !(t > 0.0 && p < 0.1) {
        failures.push(format!("t {t:.3}, p {p:.4} at 1024"));
    }
    let id_min = report
        .rows
        .iter()
        .filter(|r| r.size == 16 && !r.adaptive)
        .map(|r| r.accuracy)
        .fold(1.0, f64::min);
    let gains: Vec<String> = report
        .summary
        .iter()
        .filter(|s| s.size >= 512)
        .map(|s| format!("{}:{:+.3}", s.size, s.adaptive_mean - s.baseline_mean))
        .collect();
    let detail = format!(
        "{} seeds, min ID accuracy {id_min:.3}, baseline at 16384 {:.3}, adaptive gain {}, t {t:.2} p {p:.4} at 1024",
        report.seeds().len(),
        largest.baseline_mean,
        gains.join(" ")
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

fn dispersion_ratio() -> Outcome {
    let report = table_report()?;
    let alpha = |seed, size, adaptive| {
        report
            .rows
            .iter()
            .find(|r| r.seed == seed && r.size == size && r.adaptive == adaptive)
            .map(|r| r.mean_max_alpha)
            .ok_or(format!("missing row seed {seed} size {size}"))
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for seed in report.seeds() {
        let base = alpha(seed, 16_384, false)? / alpha(seed, 16, false)?;
        let adapt = alpha(seed, 16_384, true)? / alpha(seed, 16, true)?;
        ok &= base <= 0.2 && adapt > base;
        parts.push(format!("seed {seed} {base:.3}->{adapt:.3}"));
    }
    ensure(ok, format!("max-coefficient ratio 16384/16, baseline->adaptive: {}", parts.join(", ")))
}

fn adaptive_contracts() -> Outcome {
    let start = Instant::now();
    let cfg = AdaptiveSoftmaxConfig::default();
    let caption = PolyFit::from_highest_first([-0.037, 0.481, -2.3, 4.917, -1.791]).map_err(|e| e.to_string())?;
    if cfg.poly != caption || cfg.poly.coefficients() != &[-1.791, 4.917, -2.3, 0.481, -0.037] {
        return Err(format!("default polynomial {:?}", cfg.poly));
    }
    let mut rng = rng(9);
    let (mut passthrough, mut sharpened) = (0, 0);
    for case in 0..10_000 {
        let n = rng.random_range(2..=256);
        let scale = log_uniform(&mut rng, 1e-2, 50.0);
        let e: Vec<f64> = (0..n).map(|_| scale * normal(&mut rng)).collect();
        let logits = LogitVector::from_slice(&e).map_err(|e| e.to_string())?;
        let plain = softmax_temp(&logits, 1.0).map_err(|e| e.to_string())?;
        let (out, beta) = adaptive_temperature_softmax(&logits, &cfg).map_err(|e| e.to_string())?;
        let h_in = naive_entropy(plain.as_slice());
        let h_out = naive_entropy(out.as_slice());
        if h_out > h_in + 1e-9 {
            return Err(format!("case {case}: entropy rose from {h_in} to {h_out}"));
        }
        if argmax(out.as_slice()) != argmax(&e) {
            return Err(format!("case {case}: argmax moved"));
        }
        let rule_h = -plain.as_slice().iter().map(|p| p * (p + 1e-9).ln()).sum::<f64>();
        if rule_h <= 0.5 - 1e-9 {
            let same = out.as_slice().iter().zip(plain.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same || beta != 1.0 {
                return Err(format!("case {case}: entropy {rule_h} <= 0.5 but the row changed"));
            }
            passthrough += 1;
        } else if beta > 1.0 {
            sharpened += 1;
        }
    }
    let detail = format!("10000 rows, {passthrough} passed through bit-identically, {sharpened} sharpened, caption polynomial");
    ensure(passthrough >= 500 && sharpened >= 500, detail).and_then(|d| within(start.elapsed(), 60.0, d))
}

fn polynomial_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(10);
    let mut worst_coeff: f64 = 0.0;
    let mut polys = 0;
    while polys < 50 {
        let c: [f64; 5] = [
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.03..0.03),
        ];
        let y = |h: f64| c[0] + c[1] * h + c[2] * h * h + c[3] * h.powi(3) + c[4] * h.powi(4);
        let hs: Vec<f64> = (0..200).map(|k| 0.5 + 5.5 * k as f64 / 199.0).collect();
        // the sample stores a temperature in (0, 10], so 1/θ must be at least 0.1
        if hs.iter().any(|&h| y(h) < 0.1) {
            continue;
        }
        let samples: Vec<FitSample> = hs
            .iter()
            .map(|&h| FitSample::new(h, 1.0 / y(h)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let fit = fit_polynomial(&samples).map_err(|e| e.to_string())?;
        for (got, want) in fit.poly.coefficients().iter().zip(&c) {
            worst_coeff = worst_coeff.max((got - want).abs());
        }
        polys += 1;
    }

    let mut worst_gap: f64 = 0.0;
    let mut cases = 0;
    while cases < 1000 {
        let n = rng.random_range(2..=32);
        let scale = log_uniform(&mut rng, 0.1, 10.0);
        let e: Vec<f64> = (0..n).map(|_| scale * normal(&mut rng)).collect();
        let target = rng.random_range(0..n);
        if e[target] >= e.iter().copied().fold(f64::NEG_INFINITY, f64::max) {
            continue;
        }
        let logits = LogitVector::from_slice(&e).map_err(|e| e.to_string())?;
        let grid = grid_search_theta(&logits, target).map_err(|e| e.to_string())?;
        let mut dense = (f64::NEG_INFINITY, 0.0);
        for k in 1..=10_000 {
            let theta = k as f64 * 1e-3;
            let a = naive_softmax(&e, 1.0 / theta)[target];
            if a > dense.0 {
                dense = (a, theta);
            }
        }
        worst_gap = worst_gap.max((grid - dense.1).abs());
        cases += 1;
    }
    let detail = format!(
        "50 noiseless quartics, worst coefficient error {worst_coeff:.2e}; 1000 grid searches, \
         largest distance to the dense optimum {worst_gap:.4}"
    );
    ensure(worst_coeff <= 1e-6 && worst_gap <= 0.1 + 1e-9, detail).and_then(|d| within(start.elapsed(), 300.0, d))
}

/// The property is checked on the seed-0 model, the same run as the spread
/// bound check. Other seeds are reported: a model whose spread puts the
/// threshold past the largest representable size cannot show the collapse.
fn vanishing_coefficient_demo() -> Outcome {
    let t = trained()?;
    let cfg = FailureDemoConfig::default();
    let mut parts = Vec::new();
    let mut ok = true;
    let mut collapsed = 0;
    for run in &t.runs {
        let dir = artifacts().join(format!("failure_seed{}", run.seed));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let report = run_failure_demo(&run.outcome.params, &cfg, Some(&dir)).map_err(|e| e.to_string())?;
        let checked = run.seed == t.runs[0].seed;
        match report.collapse_n() {
            Some(n) => {
                let i = report.n_values.iter().position(|&m| m == n).unwrap();
                ok &= report.alpha_1[i] < SINGLE_EPSILON
                    && report.predicted_class[i] == report.pure_b_class
                    && report.alpha_1[i] <= report.alpha_upper[i];
                collapsed += 1;
                parts.push(format!(
                    "seed {}{}: alpha_1 {:.1e} at n={n}, class {} (alone {})",
                    run.seed,
                    if checked { " (checked)" } else { "" },
                    report.alpha_1[i],
                    report.pure_b_class,
                    report.single_a_class
                ));
            }
            None => {
                ok &= !checked;
                parts.push(format!(
                    "seed {}{}: no collapse, spread {:.3} puts the threshold at {}{}",
                    run.seed,
                    if checked { " (checked)" } else { "" },
                    report.delta,
                    report.threshold.n,
                    if report.threshold.overflow { " (saturated)" } else { "" }
                ));
            }
        }
    }
    ensure(ok, format!("{collapsed} of {} models collapse; {}", t.runs.len(), parts.join("; ")))
}

// ---------------------------------------------------------------------------

type Check = (u32, &'static str, fn() -> Outcome);

const CHECKS: &[Check] = &[
    (1, "softmax coefficient bounds from logit spread", coefficient_bounds),
    (2, "dispersion threshold", dispersion_threshold_value),
    (3, "entropy monotone in inverse temperature", entropy_monotone_in_beta),
    (5, "streaming entropy and attention", streaming_matches_materialised),
    (6, "gradients against central differences", full_gradient_check),
    (9, "adaptive softmax contracts", adaptive_contracts),
    (10, "polynomial fit and temperature grid search", polynomial_recovery),
    (4, "logit spread below spectral bound during training", spread_bound_during_training),
    (7, "baseline vs adaptive accuracy across sizes", table_direction),
    (8, "attention sharpness ratio", dispersion_ratio),
    (11, "vanishing coefficient flips the prediction", vanishing_coefficient_demo),
];

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    for &(id, name, check) in CHECKS {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS [{secs:>7.1}s] {name}: {detail}"),
            Err(detail) => {
                println!("criterion {id:>2} FAIL [{secs:>7.1}s] {name}: {detail}");
                failed.push(id);
            }
        }
    }
    if !failed.is_empty() {
        println!("acceptance: {} criteria failed: {failed:?}", failed.len());
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
