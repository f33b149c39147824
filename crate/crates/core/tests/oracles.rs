//! Library numerics against independent reference computations.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softmax_dispersion::dispersion::{prop1_bound, spectral_norm};
use softmax_dispersion::report::paired_t_test;

/// Largest singular value by one-sided Jacobi rotations.
fn jacobi_sigma_max(m: &Array2<f64>) -> f64 {
    let mut a = m.clone();
    let cols = a.ncols();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..cols {
            for q in p + 1..cols {
                let (cp, cq) = (a.column(p).to_owned(), a.column(q).to_owned());
                let alpha = cp.dot(&cp);
                let beta = cq.dot(&cq);
                let gamma = cp.dot(&cq);
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..a.nrows() {
                    let (x, y) = (a[(r, p)], a[(r, q)]);
                    a[(r, p)] = c * x - s * y;
                    a[(r, q)] = s * x + c * y;
                }
            }
        }
        if off < 1e-14 {
            break;
        }
    }
    (0..cols).map(|j| a.column(j).dot(&a.column(j)).sqrt()).fold(0.0, f64::max)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

#[test]
fn spectral_norm_matches_jacobi_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..30 {
        let r = rng.random_range(1..20);
        let c = rng.random_range(1..20);
        let m = random_matrix(&mut rng, r, c);
        let got = spectral_norm(m.view()).unwrap();
        let want = jacobi_sigma_max(&m);
        assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{got} vs {want} ({r}x{c})");
    }
    // rank one with a repeated direction
    let u = Array1::from_vec(vec![1.0f64, 2.0, 3.0]);
    let v = Array1::from_vec(vec![0.5f64, -0.5]);
    let m = u.clone().insert_axis(ndarray::Axis(1)).dot(&v.clone().insert_axis(ndarray::Axis(0)));
    let want = u.dot(&u).sqrt() * v.dot(&v).sqrt();
    assert!((spectral_norm(m.view()).unwrap() - want).abs() < 1e-10);
}

#[test]
fn spread_never_exceeds_the_spectral_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let (mp, m, mx) = (rng.random_range(1..8), rng.random_range(1..8), rng.random_range(1..8));
        let q = random_matrix(&mut rng, mp, m) * rng.random_range(0.1..5.0);
        let k = random_matrix(&mut rng, mp, mx) * rng.random_range(0.1..5.0);
        let y = Array1::from_shape_fn(m, |_| rng.random_range(-3.0..3.0));
        let xs: Vec<Array1<f64>> = (0..rng.random_range(1..30))
            .map(|_| Array1::from_shape_fn(mx, |_| rng.random_range(-3.0..3.0)))
            .collect();
        let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
        let b = prop1_bound(q.view(), k.view(), y.view(), &views).unwrap();
        // independent spread: logits (Qy)·(Kx_i)
        let qy = q.dot(&y);
        let logits: Vec<f64> = xs.iter().map(|x| qy.dot(&k.dot(x))).collect();
        let spread = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - logits.iter().copied().fold(f64::INFINITY, f64::min);
        assert!((b.observed_spread - spread).abs() < 1e-9 * (1.0 + spread));
        assert!(spread <= b.bound * (1.0 + 1e-12), "{spread} > {}", b.bound);
        assert!(b.holds);
    }
}

/// Student t density.
fn t_density(x: f64, nu: f64) -> f64 {
    let ln_c = statrs::function::gamma::ln_gamma((nu + 1.0) / 2.0)
        - statrs::function::gamma::ln_gamma(nu / 2.0)
        - 0.5 * (nu * std::f64::consts::PI).ln();
    (ln_c - (nu + 1.0) / 2.0 * (1.0 + x * x / nu).ln()).exp()
}

/// Two-sided p-value by composite Simpson integration of the density on [0, |t|].
fn simpson_p(t: f64, nu: f64) -> f64 {
    let steps = 20_000;
    let h = t.abs() / steps as f64;
    let mut s = t_density(0.0, nu) + t_density(t.abs(), nu);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * t_density(i as f64 * h, nu);
    }
    1.0 - 2.0 * s * h / 3.0
}

#[test]
fn textbook_paired_case() {
    // ten differences with mean 1 and sample standard deviation 1
    let spread = (9.0f64 / 10.0).sqrt();
    let d: Vec<f64> = (0..10).map(|i| 1.0 + if i % 2 == 0 { spread } else { -spread }).collect();
    let zeros = vec![0.0; 10];
    let r = paired_t_test(&d, &zeros).unwrap();
    assert!((r.t - 10f64.sqrt()).abs() < 1e-12);
    let oracle = simpson_p(r.t, 9.0);
    assert!((oracle - 0.0115).abs() < 1e-3, "oracle {oracle}");
    assert!((r.p - oracle).abs() < 1e-3);
    assert!((r.p - oracle).abs() < 1e-8, "{} vs {oracle}", r.p);
}

#[test]
fn random_cases_match_simpson() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let n = rng.random_range(2..15);
        let a: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 0.8).collect();
        let r = paired_t_test(&a, &b).unwrap();
        let oracle = simpson_p(r.t, (n - 1) as f64);
        assert!((r.p - oracle).abs() < 1e-7, "n={n} t={} p={} oracle={oracle}", r.t, r.p);
    }
}
