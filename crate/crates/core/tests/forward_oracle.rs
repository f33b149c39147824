//! The batched forward pass against a plain-loop reimplementation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softmax_dispersion::retrieval::train::init_params;
use softmax_dispersion::retrieval::{ModelParams, RetrievalExample};

type Mat = Vec<Vec<f64>>;

fn to_mat(a: &ndarray::Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn affine(x: &[f64], k: &Mat, b: Option<&[f64]>) -> Vec<f64> {
    let out_dim = k[0].len();
    (0..out_dim)
        .map(|j| {
            let mut s = b.map_or(0.0, |b| b[j]);
            for (i, xi) in x.iter().enumerate() {
                s += xi * k[i][j];
            }
            s
        })
        .collect()
}

fn gelu(v: Vec<f64>) -> Vec<f64> {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    v.into_iter()
        .map(|x| 0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh()))
        .collect()
}

fn straight_line(p: &ModelParams<f64>, ex: &RetrievalExample) -> Vec<f64> {
    let k = |a: &ndarray::Array2<f64>| to_mat(a);
    let h: Vec<Vec<f64>> = (0..ex.n())
        .map(|i| {
            let x = ex.features.row(i).to_vec();
            let h0 = gelu(affine(&x, &k(&p.psi_x[0].kernel), p.psi_x[0].bias.as_slice()));
            gelu(affine(&h0, &k(&p.psi_x[1].kernel), p.psi_x[1].bias.as_slice()))
        })
        .collect();
    let q0 = gelu(affine(&[ex.query_scalar], &k(&p.psi_q[0].kernel), p.psi_q[0].bias.as_slice()));
    let q = affine(&q0, &k(&p.psi_q[1].kernel), p.psi_q[1].bias.as_slice());
    let qp = affine(&q, &k(&p.w_query), None);
    let logits: Vec<f64> = h
        .iter()
        .map(|hi| {
            let ki = affine(hi, &k(&p.w_key), None);
            qp.iter().zip(&ki).map(|(a, b)| a * b).sum::<f64>() / 128f64.sqrt()
        })
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut z = vec![0.0; 128];
    for (hi, wi) in h.iter().zip(&w) {
        let vi = affine(hi, &k(&p.w_value), None);
        for (zj, vj) in z.iter_mut().zip(vi) {
            *zj += wi / total * vj;
        }
    }
    let o = affine(&z, &k(&p.attn_out.kernel), p.attn_out.bias.as_slice());
    let f0 = gelu(affine(&o, &k(&p.phi[0].kernel), p.phi[0].bias.as_slice()));
    affine(&f0, &k(&p.phi[1].kernel), p.phi[1].bias.as_slice())
}

fn fixed_example() -> RetrievalExample {
    RetrievalExample::from_items(&[0.2, 0.9, 0.5], &[3, 7, 1], 0.35).unwrap()
}

#[test]
fn constant_tiny_weights() {
    let mut p = ModelParams::<f64>::zeros();
    for ((_, t), (_, _, is_weight)) in p.tensors_mut().into_iter().zip(ModelParams::<f64>::layout()) {
        if is_weight {
            t.fill(0.01);
        }
    }
    let ex = fixed_example();
    let got = p.forward(&ex, 1.0, false).unwrap().class_logits.to_vec();
    let want = straight_line(&p, &ex);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn random_weights_random_examples() {
    let p = init_params::<f64>(11);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let n = rng.random_range(1..12);
        let rho: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let cls: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let ex = RetrievalExample::from_items(&rho, &cls, rng.random()).unwrap();
        let got = p.forward(&ex, 1.0, false).unwrap().class_logits.to_vec();
        for (a, b) in got.iter().zip(straight_line(&p, &ex)) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn permuting_items_keeps_class_logits() {
    let p = init_params::<f32>(3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let n = rng.random_range(2..40);
        let rho: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let cls: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let q = rng.random();
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        order.rotate_left(n / 3);
        let a = RetrievalExample::from_items(&rho, &cls, q).unwrap();
        let b = RetrievalExample::from_items(
            &order.iter().map(|&i| rho[i]).collect::<Vec<_>>(),
            &order.iter().map(|&i| cls[i]).collect::<Vec<_>>(),
            q,
        )
        .unwrap();
        let ya = p.forward(&a, 1.0, false).unwrap().class_logits;
        let yb = p.forward(&b, 1.0, false).unwrap().class_logits;
        for (x, y) in ya.iter().zip(yb.iter()) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }
}

#[test]
fn attention_rows_are_distributions() {
    let p = init_params::<f32>(6);
    let ex = RetrievalExample::from_items(&[0.1, 0.4, 0.3, 0.8], &[0, 1, 2, 3], 0.7).unwrap();
    for adaptive in [false, true] {
        let t = p.forward(&ex, 1.0, adaptive).unwrap();
        assert!((t.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        assert!(t.alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
        assert!(t.beta >= 1.0);
    }
}
