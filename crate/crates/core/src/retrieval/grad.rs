//! Cross-entropy loss with L2 on kernels and its exact gradient.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};

use super::data::RetrievalExample;
use super::model::{gelu_grad, Embedded, Head, ModelParams, Normalizer, EMBED_DIM};
use crate::error::{Error, Result};
use crate::num::Scalar;

/// Loss terms and classification counts for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    /// Mean softmax cross-entropy.
    pub data: f64,
    /// `λ · Σ w²` over kernels.
    pub l2: f64,
    pub correct: usize,
    pub count: usize,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.data + self.l2
    }
}

fn dense_backward<T: Scalar>(input: &Array2<T>, upstream: &Array2<T>) -> (Array2<T>, ndarray::Array1<T>) {
    (input.t().dot(upstream), upstream.sum_axis(Axis(0)))
}

fn gelu_backward<T: Scalar>(pre: &Array2<T>, upstream: &Array2<T>) -> Array2<T> {
    let mut out = upstream.clone();
    out.zip_mut_with(pre, |g, &x| *g *= gelu_grad(x));
    out
}

/// Row-wise log-softmax cross entropy; returns (sum of losses, dlogits, correct).
fn cross_entropy<T: Scalar>(class_logits: &Array2<T>, labels: &[usize], scale: f64) -> (f64, Array2<T>, usize) {
    let mut grad = Array2::zeros(class_logits.raw_dim());
    let mut total = 0.0;
    let mut correct = 0;
    for (b, row) in class_logits.rows().into_iter().enumerate() {
        let vals: Vec<f64> = row.iter().map(|v| v.f64()).collect();
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = vals.iter().map(|v| (v - max).exp()).sum();
        let log_z = z.ln() + max;
        total += log_z - vals[labels[b]];
        if super::model::argmax_row(row) == labels[b] {
            correct += 1;
        }
        for (c, v) in vals.iter().enumerate() {
            let p = (v - log_z).exp();
            let target = if c == labels[b] { 1.0 } else { 0.0 };
            grad[(b, c)] = T::of((p - target) * scale);
        }
    }
    (total, grad, correct)
}

/// Loss of a batch without gradients.
pub fn batch_loss<T: Scalar>(params: &ModelParams<T>, batch: &[RetrievalExample], weight_decay: f64, theta: f64) -> Result<LossParts> {
    let mut parts = LossParts {
        data: 0.0,
        l2: if weight_decay == 0.0 { 0.0 } else { weight_decay * params.weight_sq_norm() },
        correct: 0,
        count: batch.len(),
    };
    let norm = Normalizer::Softmax { theta };
    for group in group_by_size(batch) {
        let emb = params.embed(&group)?;
        let (alpha, _) = params.coefficients(&emb, &norm);
        let head = params.head(&emb, &alpha)?;
        let labels: Vec<usize> = group.iter().map(|e| e.label).collect();
        let (sum, _, correct) = cross_entropy(&head.class_logits, &labels, 1.0);
        parts.data += sum;
        parts.correct += correct;
    }
    parts.data /= batch.len() as f64;
    check_loss(&parts)?;
    Ok(parts)
}

fn check_loss(parts: &LossParts) -> Result<()> {
    if parts.total().is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            layer: "loss",
            detail: format!("data {} l2 {}", parts.data, parts.l2),
        })
    }
}

fn group_by_size(batch: &[RetrievalExample]) -> Vec<Vec<RetrievalExample>> {
    if batch.iter().all(|e| e.n() == batch[0].n()) {
        return vec![batch.to_vec()];
    }
    let mut groups: BTreeMap<usize, Vec<RetrievalExample>> = BTreeMap::new();
    for ex in batch {
        groups.entry(ex.n()).or_default().push(ex.clone());
    }
    groups.into_values().collect()
}

/// Mean cross-entropy plus `λ Σ w²` and its gradient with respect to
/// every parameter.
pub fn loss_and_grads<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[RetrievalExample],
    weight_decay: f64,
    theta: f64,
) -> Result<(LossParts, ModelParams<T>)> {
    if batch.is_empty() {
        return Err(Error::domain("loss needs a non-empty batch"));
    }
    let mut grads = ModelParams::<T>::zeros();
    let mut parts = LossParts {
        data: 0.0,
        l2: weight_decay * params.weight_sq_norm(),
        correct: 0,
        count: batch.len(),
    };
    let scale = 1.0 / batch.len() as f64;
    let norm = Normalizer::Softmax { theta };
    for group in group_by_size(batch) {
        let emb = params.embed(&group)?;
        let (alpha, _) = params.coefficients(&emb, &norm);
        let head = params.head(&emb, &alpha)?;
        let labels: Vec<usize> = group.iter().map(|e| e.label).collect();
        let (sum, d_logits, correct) = cross_entropy(&head.class_logits, &labels, scale);
        parts.data += sum;
        parts.correct += correct;
        accumulate_backward(params, &emb, &alpha, &head, &d_logits, theta, &mut grads);
    }
    parts.data *= scale;
    check_loss(&parts)?;

    let decay = T::of(2.0 * weight_decay);
    for (((_, g), (_, p)), (_, _, is_weight)) in grads
        .tensors_mut()
        .into_iter()
        .zip(params.tensors())
        .zip(ModelParams::<T>::layout())
    {
        if is_weight {
            for (gi, &pi) in g.iter_mut().zip(p) {
                *gi += decay * pi;
            }
        }
    }
    Ok((parts, grads))
}

#[allow(clippy::too_many_arguments)]
fn accumulate_backward<T: Scalar>(
    params: &ModelParams<T>,
    emb: &Embedded<T>,
    alpha: &[f64],
    head: &Head<T>,
    d_logits: &Array2<T>,
    theta: f64,
    grads: &mut ModelParams<T>,
) {
    let (batch, n) = (emb.batch, emb.n);

    // φ
    let (gk, gb) = dense_backward(&head.phi_act, d_logits);
    grads.phi[1].kernel += &gk;
    grads.phi[1].bias += &gb;
    let d_phi_act = d_logits.dot(&params.phi[1].kernel.t());
    let d_phi_pre = gelu_backward(&head.phi_pre, &d_phi_act);
    let (gk, gb) = dense_backward(&head.out, &d_phi_pre);
    grads.phi[0].kernel += &gk;
    grads.phi[0].bias += &gb;
    let d_out = d_phi_pre.dot(&params.phi[0].kernel.t());

    // attention output projection and value projection
    let (gk, gb) = dense_backward(&head.attended, &d_out);
    grads.attn_out.kernel += &gk;
    grads.attn_out.bias += &gb;
    let d_attended = d_out.dot(&params.attn_out.kernel.t());
    grads.w_value += &head.pooled.t().dot(&d_attended);
    let d_pooled = d_attended.dot(&params.w_value.t());

    // softmax over items
    let mut d_items = Array2::<T>::zeros(emb.items.raw_dim());
    let mut d_dir = Array2::<T>::zeros((batch, EMBED_DIM));
    let inv_theta = 1.0 / theta;
    for b in 0..batch {
        let dp = d_pooled.row(b);
        let a = &alpha[b * n..(b + 1) * n];
        let d_alpha: Vec<f64> = (0..n).map(|i| emb.items.row(b * n + i).dot(&dp).f64()).collect();
        let mean: f64 = a.iter().zip(&d_alpha).map(|(x, y)| x * y).sum();
        let dir = emb.key_dir.row(b);
        let mut dd = d_dir.row_mut(b);
        for i in 0..n {
            let d_e = T::of(a[i] * (d_alpha[i] - mean) * inv_theta);
            let mut row = d_items.row_mut(b * n + i);
            row.scaled_add(T::of(a[i]), &dp);
            row.scaled_add(d_e, &dir);
            dd.scaled_add(d_e, &emb.items.row(b * n + i));
        }
    }

    // key_dir = (q W_q) W_kᵀ · s
    let s = ModelParams::<T>::scale_factor();
    let d_dir = d_dir * s;
    grads.w_key += &d_dir.t().dot(&emb.query_proj);
    let d_query_proj = d_dir.dot(&params.w_key);
    grads.w_query += &emb.query.t().dot(&d_query_proj);
    let d_query = d_query_proj.dot(&params.w_query.t());

    // ψ_q
    let (gk, gb) = dense_backward(&emb.q_act0, &d_query);
    grads.psi_q[1].kernel += &gk;
    grads.psi_q[1].bias += &gb;
    let d_q_act0 = d_query.dot(&params.psi_q[1].kernel.t());
    let d_q_pre0 = gelu_backward(&emb.q_pre0, &d_q_act0);
    let (gk, gb) = dense_backward(&emb.queries_in, &d_q_pre0);
    grads.psi_q[0].kernel += &gk;
    grads.psi_q[0].bias += &gb;

    // ψ_x
    let d_x_pre1 = gelu_backward(&emb.x_pre[1], &d_items);
    let (gk, gb) = dense_backward(&emb.x_act0, &d_x_pre1);
    grads.psi_x[1].kernel += &gk;
    grads.psi_x[1].bias += &gb;
    let d_x_act0 = d_x_pre1.dot(&params.psi_x[1].kernel.t());
    let d_x_pre0 = gelu_backward(&emb.x_pre[0], &d_x_act0);
    let (gk, gb) = dense_backward(&emb.features, &d_x_pre0);
    grads.psi_x[0].kernel += &gk;
    grads.psi_x[0].bias += &gb;
}
