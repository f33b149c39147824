//! Single-head attention set classifier.
//!
//! ```text
//! h_i = ψ_x(x_i)            two dense layers, GeLU after each
//! q   = ψ_q(q)              dense, GeLU, dense
//! e_i = ⟨W_q q, W_k h_i⟩ / √d
//! α   = softmax_θ(e)        or the entropy-adaptive softmax at inference
//! z   = W_o (Σ α_i W_v h_i) + b_o
//! y   = φ(z)                dense, GeLU, dense
//! ```
//!
//! Dense kernels are stored `in × out` so a batch of rows is `X·W + b`.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::data::{RetrievalExample, FEATURE_WIDTH, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::softmax::{self, AdaptiveSoftmaxConfig};

/// Embedding width.
pub const EMBED_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `in × out`
    pub kernel: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            kernel: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Truncated-normal fan-in initialisation with zero bias.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, inputs: usize, outputs: usize) -> Self {
        Dense {
            kernel: lecun_normal(rng, inputs, outputs),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn apply(&self, x: &Array2<T>) -> Array2<T> {
        x.dot(&self.kernel) + &self.bias
    }
}

/// Samples `N(0, 1/fan_in)` truncated at two standard deviations, with the
/// usual rescaling so the truncated distribution keeps unit variance.
fn lecun_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R, inputs: usize, outputs: usize) -> Array2<T> {
    // standard deviation of N(0,1) truncated to [-2, 2]
    const TRUNC_STD: f64 = 0.879_625_661_034_239_8;
    let std = (1.0 / inputs as f64).sqrt() / TRUNC_STD;
    Array2::from_shape_simple_fn((inputs, outputs), || loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            break T::of(z * std);
        }
    })
}

/// All trainable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub psi_x: [Dense<T>; 2],
    pub psi_q: [Dense<T>; 2],
    /// Query, key and value projections, `in × out`, no bias.
    pub w_query: Array2<T>,
    pub w_key: Array2<T>,
    pub w_value: Array2<T>,
    pub attn_out: Dense<T>,
    pub phi: [Dense<T>; 2],
}

/// Name, shape and whether the tensor is a weight (subject to L2) or a bias.
pub type TensorInfo = (&'static str, Vec<usize>, bool);

impl<T: Scalar> ModelParams<T> {
    pub fn zeros() -> Self {
        let d = EMBED_DIM;
        ModelParams {
            psi_x: [Dense::zeros(FEATURE_WIDTH, d), Dense::zeros(d, d)],
            psi_q: [Dense::zeros(1, d), Dense::zeros(d, d)],
            w_query: Array2::zeros((d, d)),
            w_key: Array2::zeros((d, d)),
            w_value: Array2::zeros((d, d)),
            attn_out: Dense::zeros(d, d),
            phi: [Dense::zeros(d, d), Dense::zeros(d, NUM_CLASSES)],
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let d = EMBED_DIM;
        ModelParams {
            psi_x: [Dense::init(rng, FEATURE_WIDTH, d), Dense::init(rng, d, d)],
            psi_q: [Dense::init(rng, 1, d), Dense::init(rng, d, d)],
            w_query: lecun_normal(rng, d, d),
            w_key: lecun_normal(rng, d, d),
            w_value: lecun_normal(rng, d, d),
            attn_out: Dense::init(rng, d, d),
            phi: [Dense::init(rng, d, d), Dense::init(rng, d, NUM_CLASSES)],
        }
    }

    /// Every tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[T])> {
        vec![
            ("psi_x.0.kernel", self.psi_x[0].kernel.as_slice().unwrap()),
            ("psi_x.0.bias", self.psi_x[0].bias.as_slice().unwrap()),
            ("psi_x.1.kernel", self.psi_x[1].kernel.as_slice().unwrap()),
            ("psi_x.1.bias", self.psi_x[1].bias.as_slice().unwrap()),
            ("psi_q.0.kernel", self.psi_q[0].kernel.as_slice().unwrap()),
            ("psi_q.0.bias", self.psi_q[0].bias.as_slice().unwrap()),
            ("psi_q.1.kernel", self.psi_q[1].kernel.as_slice().unwrap()),
            ("psi_q.1.bias", self.psi_q[1].bias.as_slice().unwrap()),
            ("attn.query", self.w_query.as_slice().unwrap()),
            ("attn.key", self.w_key.as_slice().unwrap()),
            ("attn.value", self.w_value.as_slice().unwrap()),
            ("attn.out.kernel", self.attn_out.kernel.as_slice().unwrap()),
            ("attn.out.bias", self.attn_out.bias.as_slice().unwrap()),
            ("phi.0.kernel", self.phi[0].kernel.as_slice().unwrap()),
            ("phi.0.bias", self.phi[0].bias.as_slice().unwrap()),
            ("phi.1.kernel", self.phi[1].kernel.as_slice().unwrap()),
            ("phi.1.bias", self.phi[1].bias.as_slice().unwrap()),
        ]
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        let ModelParams {
            psi_x,
            psi_q,
            w_query,
            w_key,
            w_value,
            attn_out,
            phi,
        } = self;
        let [x0, x1] = psi_x;
        let [q0, q1] = psi_q;
        let [p0, p1] = phi;
        vec![
            ("psi_x.0.kernel", x0.kernel.as_slice_mut().unwrap()),
            ("psi_x.0.bias", x0.bias.as_slice_mut().unwrap()),
            ("psi_x.1.kernel", x1.kernel.as_slice_mut().unwrap()),
            ("psi_x.1.bias", x1.bias.as_slice_mut().unwrap()),
            ("psi_q.0.kernel", q0.kernel.as_slice_mut().unwrap()),
            ("psi_q.0.bias", q0.bias.as_slice_mut().unwrap()),
            ("psi_q.1.kernel", q1.kernel.as_slice_mut().unwrap()),
            ("psi_q.1.bias", q1.bias.as_slice_mut().unwrap()),
            ("attn.query", w_query.as_slice_mut().unwrap()),
            ("attn.key", w_key.as_slice_mut().unwrap()),
            ("attn.value", w_value.as_slice_mut().unwrap()),
            ("attn.out.kernel", attn_out.kernel.as_slice_mut().unwrap()),
            ("attn.out.bias", attn_out.bias.as_slice_mut().unwrap()),
            ("phi.0.kernel", p0.kernel.as_slice_mut().unwrap()),
            ("phi.0.bias", p0.bias.as_slice_mut().unwrap()),
            ("phi.1.kernel", p1.kernel.as_slice_mut().unwrap()),
            ("phi.1.bias", p1.bias.as_slice_mut().unwrap()),
        ]
    }

    /// Names, shapes and the weight/bias split, same order as `tensors`.
    pub fn layout() -> Vec<TensorInfo> {
        let d = EMBED_DIM;
        vec![
            ("psi_x.0.kernel", vec![FEATURE_WIDTH, d], true),
            ("psi_x.0.bias", vec![d], false),
            ("psi_x.1.kernel", vec![d, d], true),
            ("psi_x.1.bias", vec![d], false),
            ("psi_q.0.kernel", vec![1, d], true),
            ("psi_q.0.bias", vec![d], false),
            ("psi_q.1.kernel", vec![d, d], true),
            ("psi_q.1.bias", vec![d], false),
            ("attn.query", vec![d, d], true),
            ("attn.key", vec![d, d], true),
            ("attn.value", vec![d, d], true),
            ("attn.out.kernel", vec![d, d], true),
            ("attn.out.bias", vec![d], false),
            ("phi.0.kernel", vec![d, d], true),
            ("phi.0.bias", vec![d], false),
            ("phi.1.kernel", vec![d, NUM_CLASSES], true),
            ("phi.1.bias", vec![NUM_CLASSES], false),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Sum of squared kernel entries; biases are excluded.
    pub fn weight_sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .zip(Self::layout())
            .filter(|(_, (_, _, is_weight))| *is_weight)
            .map(|((_, t), _)| t.iter().map(|v| v.f64() * v.f64()).sum::<f64>())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros();
        for ((_, dst), (_, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::of(s.f64());
            }
        }
        out
    }

    /// Applies `f(param, other)` elementwise against a model of the same shape.
    pub fn zip_apply(&mut self, other: &ModelParams<T>, mut f: impl FnMut(&mut T, T)) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                f(d, s);
            }
        }
    }

    pub fn scale_factor() -> T {
        T::of(1.0 / (EMBED_DIM as f64).sqrt())
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

// libm tanh is several times slower than exp and dominated evaluation time.
// Beyond ±20 the result rounds to ±1 in both precisions; returning it
// directly also keeps GeLU of large negative inputs from going subnormal,
// which slowed training several-fold.
#[inline]
fn tanh<T: Scalar>(x: T) -> T {
    let limit = T::of(20.0);
    if x > limit {
        T::one()
    } else if x < -limit {
        -T::one()
    } else {
        T::one() - T::of(2.0) / ((x + x).exp() + T::one())
    }
}

/// Tanh-approximated GeLU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let inner = T::of(GELU_C) * (x + T::of(GELU_A) * x * x * x);
    half * x * (T::one() + tanh(inner))
}

/// Derivative of [`gelu`].
#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let x2 = x * x;
    let t = tanh(c * (x + a * x2 * x));
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x2)
}

pub(crate) fn gelu_map<T: Scalar>(a: &Array2<T>) -> Array2<T> {
    a.mapv(gelu)
}

/// How the attention row is normalised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalizer {
    /// `softmax(e / θ)`
    Softmax { theta: f64 },
    /// Entropy-adaptive softmax applied to `e / θ`.
    Adaptive { theta: f64, cfg: AdaptiveSoftmaxConfig },
}

impl Normalizer {
    pub fn new(theta: f64, adaptive: bool) -> Self {
        if adaptive {
            Normalizer::Adaptive {
                theta,
                cfg: AdaptiveSoftmaxConfig::default(),
            }
        } else {
            Normalizer::Softmax { theta }
        }
    }

    pub fn theta(&self) -> f64 {
        match *self {
            Normalizer::Softmax { theta } | Normalizer::Adaptive { theta, .. } => theta,
        }
    }

    /// Normalises one row, returning the inverse temperature applied on top of `1/θ`.
    pub fn apply(&self, logits: &[f64], out: &mut [f64]) -> f64 {
        match self {
            Normalizer::Softmax { theta } => {
                softmax::softmax_into(logits, *theta, out);
                1.0
            }
            Normalizer::Adaptive { theta, cfg } => {
                let scaled: Vec<f64> = logits.iter().map(|e| e / theta).collect();
                softmax::adaptive_softmax_into(&scaled, cfg, out)
            }
        }
    }
}

/// Item and query embeddings plus attention logits for a batch of examples
/// that all have the same number of items.
#[derive(Debug, Clone)]
pub struct Embedded<T> {
    pub batch: usize,
    pub n: usize,
    pub features: Array2<T>,
    pub x_pre: [Array2<T>; 2],
    pub x_act0: Array2<T>,
    /// `(batch·n) × d`, the item embeddings `h_i`.
    pub items: Array2<T>,
    pub queries_in: Array2<T>,
    pub q_pre0: Array2<T>,
    pub q_act0: Array2<T>,
    /// `batch × d`, the query embeddings.
    pub query: Array2<T>,
    /// `batch × d`, `q W_q`.
    pub query_proj: Array2<T>,
    /// `batch × d`, `(q W_q) W_kᵀ / √d`: logits are `h_i · key_dir`.
    pub key_dir: Array2<T>,
    /// `batch·n` scaled logits, row-major by example.
    pub logits: Vec<f64>,
}

/// Post-attention activations.
#[derive(Debug, Clone)]
pub struct Head<T> {
    /// `batch × d`, `Σ α_i h_i`.
    pub pooled: Array2<T>,
    /// `batch × d`, `pooled · W_v`.
    pub attended: Array2<T>,
    pub out: Array2<T>,
    pub phi_pre: Array2<T>,
    pub phi_act: Array2<T>,
    /// `batch × classes`
    pub class_logits: Array2<T>,
}

fn check_finite<T: Scalar>(layer: &'static str, a: &Array2<T>) -> Result<()> {
    if let Some(v) = a.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            layer,
            detail: format!("activation {v}"),
        });
    }
    Ok(())
}

impl<T: Scalar> ModelParams<T> {
    /// Embeds a batch of equally sized examples and computes the logits.
    pub fn embed(&self, examples: &[RetrievalExample]) -> Result<Embedded<T>> {
        let batch = examples.len();
        if batch == 0 {
            return Err(Error::domain("empty batch"));
        }
        let n = examples[0].n();
        if examples.iter().any(|e| e.n() != n) {
            return Err(Error::domain("all examples in a batch must have the same size"));
        }
        let mut features = Array2::zeros((batch * n, FEATURE_WIDTH));
        for (b, ex) in examples.iter().enumerate() {
            features
                .slice_mut(s![b * n..(b + 1) * n, ..])
                .assign(&ex.features.mapv(T::of));
        }
        let queries_in = Array2::from_shape_fn((batch, 1), |(b, _)| T::of(examples[b].query_scalar));
        self.embed_rows(features, queries_in, n)
    }

    pub(crate) fn embed_rows(&self, features: Array2<T>, queries_in: Array2<T>, n: usize) -> Result<Embedded<T>> {
        let batch = queries_in.nrows();
        let x_pre0 = self.psi_x[0].apply(&features);
        let x_act0 = gelu_map(&x_pre0);
        let x_pre1 = self.psi_x[1].apply(&x_act0);
        let items = gelu_map(&x_pre1);
        check_finite("psi_x", &items)?;

        let q_pre0 = self.psi_q[0].apply(&queries_in);
        let q_act0 = gelu_map(&q_pre0);
        let query = self.psi_q[1].apply(&q_act0);
        check_finite("psi_q", &query)?;

        let query_proj = query.dot(&self.w_query);
        let key_dir = query_proj.dot(&self.w_key.t()) * Self::scale_factor();
        let mut logits = Vec::with_capacity(batch * n);
        for b in 0..batch {
            let dir = key_dir.row(b);
            for i in 0..n {
                logits.push(items.row(b * n + i).dot(&dir).f64());
            }
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: "attention logits",
                detail: "non-finite logit".into(),
            });
        }
        Ok(Embedded {
            batch,
            n,
            features,
            x_pre: [x_pre0, x_pre1],
            x_act0,
            items,
            queries_in,
            q_pre0,
            q_act0,
            query,
            query_proj,
            key_dir,
            logits,
        })
    }

    /// Runs the post-attention layers given per-item coefficients.
    pub fn head(&self, emb: &Embedded<T>, alpha: &[f64]) -> Result<Head<T>> {
        let (batch, n) = (emb.batch, emb.n);
        let d = EMBED_DIM;
        let mut pooled = Array2::<T>::zeros((batch, d));
        for b in 0..batch {
            let mut acc = pooled.row_mut(b);
            for i in 0..n {
                let a = T::of(alpha[b * n + i]);
                acc.scaled_add(a, &emb.items.row(b * n + i));
            }
        }
        let attended = pooled.dot(&self.w_value);
        let out = self.attn_out.apply(&attended);
        let phi_pre = self.phi[0].apply(&out);
        let phi_act = gelu_map(&phi_pre);
        let class_logits = self.phi[1].apply(&phi_act);
        check_finite("phi", &class_logits)?;
        Ok(Head {
            pooled,
            attended,
            out,
            phi_pre,
            phi_act,
            class_logits,
        })
    }

    /// Normalises every attention row; returns coefficients and per-row β.
    pub fn coefficients(&self, emb: &Embedded<T>, norm: &Normalizer) -> (Vec<f64>, Vec<f64>) {
        let n = emb.n;
        let mut alpha = vec![0.0; emb.logits.len()];
        let betas = emb
            .logits
            .chunks(n)
            .zip(alpha.chunks_mut(n))
            .map(|(row, out)| norm.apply(row, out))
            .collect();
        (alpha, betas)
    }

    /// Full forward pass for one example.
    pub fn forward(&self, example: &RetrievalExample, theta: f64, adaptive: bool) -> Result<ForwardTrace<T>> {
        let norm = Normalizer::new(theta, adaptive);
        self.forward_with(example, &norm)
    }

    pub fn forward_with(&self, example: &RetrievalExample, norm: &Normalizer) -> Result<ForwardTrace<T>> {
        let emb = self.embed(std::slice::from_ref(example))?;
        let (alpha, betas) = self.coefficients(&emb, norm);
        let head = self.head(&emb, &alpha)?;
        let class_logits = head.class_logits.row(0).to_owned();
        Ok(ForwardTrace {
            item_embeddings: emb.items.clone(),
            query_embedding: emb.query.row(0).to_owned(),
            logits: emb.logits.clone(),
            alpha,
            beta: betas[0],
            attended: head.out.row(0).to_owned(),
            predicted: argmax_row(class_logits.view()),
            class_logits,
            embedded: emb,
            head,
        })
    }

    /// Forward pass over a multiset of distinct items with multiplicities.
    ///
    /// Copies of an item share one logit, so the coefficient on each copy is
    /// `exp(e_j) / Σ_k m_k exp(e_k)`; this evaluates sets far larger than
    /// could be materialised. Coefficients and the pooled sum are in `f64`,
    /// the pooled vector is rounded to `T` before the value projection.
    pub fn forward_multiset(
        &self,
        items: &[(RetrievalExample, u64)],
        query_scalar: f64,
        theta: f64,
    ) -> Result<MultisetOutput> {
        if items.is_empty() || items.iter().any(|(_, m)| *m == 0) {
            return Err(Error::domain("multiset needs at least one item with positive multiplicity"));
        }
        let mut features = Array2::zeros((items.len(), FEATURE_WIDTH));
        for (j, (ex, _)) in items.iter().enumerate() {
            if ex.n() != 1 {
                return Err(Error::domain("multiset entries must be single-item examples"));
            }
            features.row_mut(j).assign(&ex.features.row(0).mapv(T::of));
        }
        let queries = Array2::from_elem((1, 1), T::of(query_scalar));
        let emb = self.embed_rows(features, queries, items.len())?;
        let max = emb.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = emb.logits.iter().map(|e| ((e - max) / theta).exp()).collect();
        let total: f64 = weights.iter().zip(items).map(|(w, (_, m))| w * *m as f64).sum();
        let per_copy: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut pooled = Array1::<f64>::zeros(EMBED_DIM);
        for (j, (_, m)) in items.iter().enumerate() {
            let mass = per_copy[j] * *m as f64;
            pooled.scaled_add(mass, &emb.items.row(j).mapv(|v| v.f64()));
        }
        let pooled_t = pooled.mapv(T::of).insert_axis(Axis(0));
        let attended = pooled_t.dot(&self.w_value);
        let out = self.attn_out.apply(&attended);
        let phi_act = gelu_map(&self.phi[0].apply(&out));
        let class_logits = self.phi[1].apply(&phi_act);
        check_finite("phi", &class_logits)?;
        let row = class_logits.row(0);
        Ok(MultisetOutput {
            logits: emb.logits.clone(),
            alpha_per_copy: per_copy,
            predicted: argmax_row(row),
            class_logits: row.iter().map(|v| v.f64()).collect(),
        })
    }
}

/// Class index with the largest logit, lowest index on ties.
pub fn argmax_row<T: Scalar>(row: ArrayView1<T>) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Intermediates of a single-example forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub item_embeddings: Array2<T>,
    pub query_embedding: Array1<T>,
    pub logits: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: f64,
    /// Output of the attention block, `W_o z + b_o`.
    pub attended: Array1<T>,
    pub class_logits: Array1<T>,
    pub predicted: usize,
    pub embedded: Embedded<T>,
    pub head: Head<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultisetOutput {
    /// One logit per distinct item.
    pub logits: Vec<f64>,
    /// Coefficient on a single copy of each distinct item.
    pub alpha_per_copy: Vec<f64>,
    pub class_logits: Vec<f64>,
    pub predicted: usize,
}
