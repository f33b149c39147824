use std::time::Instant;

use anyhow::Context;
use softmax_dispersion::alloc_probe::measure_peak;
use softmax_dispersion::report::{
    read_csv, run_bound_figure, run_dispersion_figure, run_entropy_landscape, run_failure_demo, run_table1,
    write_csv, write_dispersion_figure, DispersionConfig, EvalReport, FailureDemoConfig, LandscapeGrid,
};
use softmax_dispersion::retrieval::{
    default_sizes, evaluate_paired, save_params, train, EvalConfig, LogEntry, Precision, TrainConfig,
};
use softmax_dispersion::softmax::{adaptive_temperature_softmax, softmax_temp, AdaptiveSoftmaxConfig, LogitVector};
use softmax_dispersion::streaming::{
    hash_unit, stream_logits, streamed_adaptive_attention, GeneratedSource, StreamBenchRow,
};
use softmax_dispersion::theta_fit::{
    fit_harvest, fit_polynomial, harvest_samples, make_adaptive_config, read_samples_csv, write_samples_csv, FitResult,
    Harvest, HarvestConfig,
};
use softmax_dispersion::Execution;

use crate::{checkpoint_path, load_model, CheckFailed, Cli, Command, Global, PrecisionArg};

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    std::fs::create_dir_all(&g.out_dir).with_context(|| format!("creating {}", g.out_dir.display()))?;
    let failures = match &cli.command {
        Command::Train(a) => train_cmd(g, a.steps, a.precision)?,
        Command::Eval(a) => eval_cmd(g, a)?,
        Command::Table1(a) => table1_cmd(g, a)?,
        Command::DispersionFig(a) => dispersion_cmd(g, a)?,
        Command::Landscape => {
            let (l, t) = LandscapeGrid::default_axes();
            run_entropy_landscape(&l, &t, Some(&g.out_dir))?;
            println!("wrote landscape.csv and landscape.svg to {}", g.out_dir.display());
            Vec::new()
        }
        Command::BoundFig(a) => {
            let path = a
                .log
                .clone()
                .unwrap_or_else(|| g.out_dir.join(format!("train_log_seed{}.csv", g.seed)));
            if !path.exists() {
                anyhow::bail!("training log {} not found; run `dispersion train` first or pass --log", path.display());
            }
            let log: Vec<LogEntry> = read_csv(&path)?;
            let fig = run_bound_figure(&log, Some(&g.out_dir))?;
            println!("{} logged steps, bound dominates: {}", fig.rows.len(), fig.dominated);
            check(!fig.dominated, "observed spread exceeded the bound")
        }
        Command::FailureDemo(a) => failure_cmd(g, a)?,
        Command::ThetaFit(a) => theta_fit_cmd(g, a)?,
        Command::StreamCheck(a) => stream_cmd(g, a.max_exp, a.dim)?,
    };
    if g.check && !failures.is_empty() {
        return Err(CheckFailed(failures).into());
    }
    Ok(())
}

fn check(failed: bool, msg: &str) -> Vec<String> {
    if failed {
        vec![msg.to_string()]
    } else {
        Vec::new()
    }
}

fn exec(g: &Global) -> Execution {
    if g.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn train_config(g: &Global) -> TrainConfig {
    let base = if g.desk_scale {
        TrainConfig::desk_scale()
    } else {
        TrainConfig::default()
    };
    base.with_seed(g.seed)
}

fn adaptive_config(fit: &Option<std::path::PathBuf>) -> anyhow::Result<AdaptiveSoftmaxConfig> {
    match fit {
        Some(p) => Ok(make_adaptive_config(&FitResult::load_json(p)?)),
        None => Ok(AdaptiveSoftmaxConfig::default()),
    }
}

fn train_cmd(g: &Global, steps: Option<u64>, precision: PrecisionArg) -> anyhow::Result<Vec<String>> {
    let mut cfg = train_config(g);
    if let Some(s) = steps {
        cfg.steps = s;
    }
    cfg.precision = match precision {
        PrecisionArg::Single => Precision::Single,
        PrecisionArg::Double => Precision::Double,
    };
    let start = Instant::now();
    let (log, diverged) = match cfg.precision {
        Precision::Single => {
            let out = train::<f32>(&cfg)?;
            save_params(&out.params, &g.out_dir.join(format!("model_seed{}.json", g.seed)))?;
            (out.log, out.diverged_at)
        }
        Precision::Double => {
            let out = train::<f64>(&cfg)?;
            save_params(&out.params, &g.out_dir.join(format!("model_seed{}.json", g.seed)))?;
            (out.log, out.diverged_at)
        }
    };
    write_csv(&g.out_dir.join(format!("train_log_seed{}.csv", g.seed)), &log)?;
    if let Some(last) = log.last() {
        println!(
            "seed {} trained {} steps in {:.1}s: loss {:.4}, batch accuracy {:.3}",
            g.seed,
            last.step + 1,
            start.elapsed().as_secs_f64(),
            last.loss,
            last.accuracy
        );
    }
    if let Some(step) = diverged {
        eprintln!("training diverged at step {step}; saved the last finite parameters");
    }
    let mut failures = check(diverged.is_some(), "training diverged");
    failures.extend(check(log.iter().any(|e| e.delta > e.bound), "observed spread exceeded the bound"));
    Ok(failures)
}

fn eval_cmd(g: &Global, a: &crate::EvalArgs) -> anyhow::Result<Vec<String>> {
    let params = load_model(&checkpoint_path(g, &a.checkpoint))?;
    let cfg = EvalConfig {
        sizes: a.sizes.clone().unwrap_or_else(default_sizes),
        n_eval: a.n_eval,
        seed: g.seed,
        adaptive: adaptive_config(&a.fit)?,
        exec: exec(g),
        ..EvalConfig::default()
    };
    let evals = evaluate_paired(&params, &cfg)?;
    let report = EvalReport::from_evals(vec![(g.seed, evals.clone())], Vec::new())?;
    write_csv(&g.out_dir.join(format!("eval_seed{}.csv", g.seed)), &report.rows)?;
    println!("{:>6}  {:>8}  {:>8}  {:>10}", "size", "baseline", "adaptive", "max alpha");
    for s in &evals {
        println!(
            "{:>6}  {:>8.4}  {:>8.4}  {:>10.4}",
            s.size, s.baseline.accuracy, s.adaptive.accuracy, s.baseline.mean_max_alpha
        );
    }
    Ok(check(
        evals.iter().any(|s| s.max_bound_ratio > 1.0 + 1e-9),
        "a coefficient exceeded its spread bound",
    ))
}

fn table1_cmd(g: &Global, a: &crate::Table1Args) -> anyhow::Result<Vec<String>> {
    let seeds = a
        .seeds
        .clone()
        .unwrap_or_else(|| (0..if g.desk_scale { 5 } else { 10 }).collect());
    let eval_cfg = EvalConfig {
        sizes: a.sizes.clone().unwrap_or_else(default_sizes),
        n_eval: a.n_eval,
        adaptive: adaptive_config(&a.fit)?,
        exec: exec(g),
        ..EvalConfig::default()
    };
    let (report, runs) = run_table1(&seeds, &train_config(g), &eval_cfg)?;
    for run in &runs {
        save_params(&run.outcome.params, &g.out_dir.join(format!("model_seed{}.json", run.seed)))?;
        write_csv(&g.out_dir.join(format!("train_log_seed{}.csv", run.seed)), &run.outcome.log)?;
    }
    report.write(&g.out_dir)?;
    println!("{:>6}  {:>15}  {:>15}  {:>8}", "size", "baseline", "adaptive", "p");
    for s in &report.summary {
        println!(
            "{:>6}  {:>7.4} ± {:<5.3}  {:>7.4} ± {:<5.3}  {:>8}",
            s.size,
            s.baseline_mean,
            s.baseline_std,
            s.adaptive_mean,
            s.adaptive_std,
            s.p.map(|p| format!("{p:.4}")).unwrap_or_default()
        );
    }
    for f in &report.failed {
        eprintln!("seed {} diverged at step {} and was excluded", f.seed, f.diverged_at);
    }
    Ok(table1_checks(&report))
}

fn table1_checks(report: &EvalReport) -> Vec<String> {
    let mut failures = Vec::new();
    let smallest = report.summary.first().map(|s| s.size);
    if let Some(size) = smallest {
        for r in report.rows.iter().filter(|r| r.size == size && !r.adaptive) {
            if r.accuracy < 0.90 {
                failures.push(format!("seed {} accuracy {:.4} at size {size} is below 0.90", r.seed, r.accuracy));
            }
        }
    }
    if let Some(s) = report.size(16384) {
        if s.baseline_mean >= 0.35 {
            failures.push(format!("baseline accuracy {:.4} at 16384 is not below 0.35", s.baseline_mean));
        }
    }
    for s in report.summary.iter().filter(|s| s.size >= 512) {
        if s.adaptive_mean < s.baseline_mean {
            failures.push(format!("adaptive below baseline at size {}", s.size));
        }
    }
    if let Some(s) = report.size(1024) {
        if !(s.t.unwrap_or(0.0) > 0.0 && s.p.unwrap_or(1.0) < 0.1) {
            failures.push(format!("no significant improvement at 1024 (t {:?}, p {:?})", s.t, s.p));
        }
    }
    failures
}

fn dispersion_cmd(g: &Global, a: &crate::DispersionArgs) -> anyhow::Result<Vec<String>> {
    let params = load_model(&checkpoint_path(g, &a.checkpoint))?;
    let cfg = DispersionConfig {
        sizes: a.sizes.clone().unwrap_or_else(default_sizes),
        batch: a.batch,
        seed: g.seed,
        adaptive: adaptive_config(&a.fit)?,
        exec: exec(g),
        ..DispersionConfig::default()
    };
    let maps = run_dispersion_figure(&params, &cfg)?;
    write_dispersion_figure(&maps, &g.out_dir)?;
    let row_max_mean = |adaptive: bool, size: usize| {
        maps.iter()
            .find(|m| m.adaptive == adaptive && m.size == size)
            .map(|m| m.values.rows().into_iter().map(|r| r.fold(0.0f64, |a, &b| a.max(b))).sum::<f64>() / m.values.nrows() as f64)
            .unwrap_or(f64::NAN)
    };
    for m in maps.iter().filter(|m| !m.adaptive) {
        println!(
            "{:>6}  target alpha {:.4} (adaptive {:.4})",
            m.size,
            m.mean_target_alpha(),
            row_max_mean(true, m.size)
        );
    }
    let (lo, hi) = (cfg.sizes.iter().min().copied(), cfg.sizes.iter().max().copied());
    Ok(match (lo, hi) {
        (Some(lo), Some(hi)) if lo < hi => check(
            row_max_mean(false, hi) > 0.2 * row_max_mean(false, lo),
            "largest-size max coefficient is above 0.2x the smallest",
        ),
        _ => Vec::new(),
    })
}

fn failure_cmd(g: &Global, a: &crate::FailureArgs) -> anyhow::Result<Vec<String>> {
    let params = load_model(&checkpoint_path(g, &a.checkpoint))?;
    let defaults = FailureDemoConfig::default();
    let cfg = FailureDemoConfig {
        rho_a: a.rho_a,
        rho_b: a.rho_b,
        class_a: a.class_a,
        class_b: a.class_b,
        query_scalar: a.query,
        epsilon: a.epsilon.unwrap_or(defaults.epsilon),
    };
    let report = run_failure_demo(&params, &cfg, Some(&g.out_dir))?;
    println!(
        "spread {:.4}, threshold n* = {}{}, prediction for {{v_a}}: {}, for {{v_b}}: {}",
        report.delta,
        report.threshold.n,
        if report.threshold.overflow { " (saturated)" } else { "" },
        report.single_a_class,
        report.pure_b_class
    );
    match report.collapse_n() {
        Some(n) => println!("alpha_1 < {:e} and prediction = {} from n = {n}", cfg.epsilon, report.pure_b_class),
        None => println!("no reported n drove alpha_1 below {:e} with the all-v_b prediction", cfg.epsilon),
    }
    Ok(check(report.collapse_n().is_none(), "no collapse within the reported sizes"))
}

fn theta_fit_cmd(g: &Global, a: &crate::ThetaFitArgs) -> anyhow::Result<Vec<String>> {
    let (fit, params) = match &a.samples {
        Some(path) => (fit_polynomial(&read_samples_csv(path)?)?, None),
        None => {
            let params = load_model(&checkpoint_path(g, &a.checkpoint))?;
            let harvest: Harvest = harvest_samples(
                &params,
                &HarvestConfig {
                    seed: g.seed,
                    n_batches: a.batches,
                    batch_size: a.batch_size,
                    sizes: a.sizes.clone(),
                    exec: exec(g),
                    ..HarvestConfig::default()
                },
            )?;
            write_samples_csv(&g.out_dir.join("theta_samples.csv"), &harvest.samples)?;
            (fit_harvest(&harvest)?, Some(params))
        }
    };
    fit.save_json(&g.out_dir.join("theta_fit.json"))?;
    println!(
        "coefficients (constant first) {:?}, rmse {:.4}, {} samples, {} discarded",
        fit.poly.coefficients(),
        fit.rmse,
        fit.n_samples,
        fit.n_discarded
    );
    let Some(params) = params.filter(|_| g.check) else {
        return Ok(Vec::new());
    };
    let cfg = EvalConfig {
        sizes: vec![16],
        n_eval: 2000,
        seed: g.seed,
        adaptive: make_adaptive_config(&fit),
        exec: exec(g),
        ..EvalConfig::default()
    };
    let s = evaluate_paired(&params, &cfg)?[0];
    println!("size 16: baseline {:.4}, fitted adaptive {:.4}", s.baseline.accuracy, s.adaptive.accuracy);
    Ok(check(
        s.adaptive.accuracy < s.baseline.accuracy - 0.01,
        "fitted config lowers accuracy at 16 items by more than one point",
    ))
}

#[derive(serde::Serialize)]
struct StreamCheckRow {
    n: usize,
    entropy: f64,
    naive_entropy: f64,
    abs_error: f64,
    output_error: f64,
    beta: f64,
    peak_extra_bytes: Option<usize>,
}

fn stream_cmd(g: &Global, max_exp: u32, dim: usize) -> anyhow::Result<Vec<String>> {
    if !(10..=24).contains(&max_exp) || dim == 0 {
        return Err(softmax_dispersion::Error::Domain("max-exp must be in 10..=24 and dim positive".into()).into());
    }
    let seed = g.seed;
    let query: Vec<f64> = (0..dim).map(|i| 3.0 * hash_unit(seed, i as u64) / (dim as f64).sqrt()).collect();
    let fill = move |i: usize, k: &mut [f64], v: &mut [f64]| {
        let base = (i * 2 * k.len()) as u64;
        for (j, x) in k.iter_mut().enumerate() {
            *x = hash_unit(seed + 1, base + j as u64);
        }
        for (j, x) in v.iter_mut().enumerate() {
            *x = hash_unit(seed + 2, base + j as u64);
        }
    };
    let cfg = AdaptiveSoftmaxConfig::default();
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    println!("{:>8}  {:>10}  {:>12}  {:>10}  {:>6}", "n", "wall ms", "peak bytes", "entropy", "beta");
    for e in 10..=max_exp {
        let n = 1usize << e;
        let source = GeneratedSource {
            len: n,
            key_dim: dim,
            value_dim: dim,
            fill,
        };
        let start = Instant::now();
        let (res, peak) = measure_peak(|| streamed_adaptive_attention(&query, &source, &cfg, true));
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let res = res?;

        // materialised reference: every logit and coefficient held at once
        let mut k = vec![0.0; dim];
        let mut v = vec![0.0; dim];
        let logits: Vec<f64> = (0..n)
            .map(|i| {
                fill(i, &mut k, &mut v);
                k.iter().zip(&query).map(|(a, b)| a * b).sum()
            })
            .collect();
        let lv = LogitVector::new(logits)?;
        let naive_entropy = softmax_temp(&lv, 1.0)?.entropy();
        let (alpha, _) = adaptive_temperature_softmax(&lv, &cfg)?;
        let mut out = vec![0.0; dim];
        for (i, a) in alpha.as_slice().iter().enumerate() {
            fill(i, &mut k, &mut v);
            for (o, x) in out.iter_mut().zip(&v) {
                *o += a * x;
            }
        }
        let output_error = out.iter().zip(&res.output).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let entropy = stream_logits(lv.as_slice())?.entropy()?;
        println!("{n:>8}  {wall_ms:>10.2}  {:>12}  {entropy:>10.5}  {:>6.3}", peak.map(|p| p.to_string()).unwrap_or("n/a".into()), res.beta);
        timing.push(StreamBenchRow {
            n,
            wall_ms,
            peak_extra_bytes: peak,
            entropy: res.entropy,
            beta: res.beta,
        });
        rows.push(StreamCheckRow {
            n,
            entropy,
            naive_entropy,
            abs_error: (entropy - naive_entropy).abs(),
            output_error,
            beta: res.beta,
            peak_extra_bytes: peak,
        });
    }
    write_csv(&g.out_dir.join("stream_check.csv"), &rows)?;
    let mut failures = Vec::new();
    if rows.iter().any(|r| r.abs_error > 1e-5 || r.output_error > 1e-5) {
        failures.push("streamed result differs from the materialised computation by more than 1e-5".to_string());
    }
    let peaks: Vec<Option<usize>> = timing.iter().map(|t| t.peak_extra_bytes).collect();
    if peaks.windows(2).any(|w| w[0] != w[1]) {
        failures.push(format!("peak extra memory varies with n: {peaks:?}"));
    }
    Ok(failures)
}
