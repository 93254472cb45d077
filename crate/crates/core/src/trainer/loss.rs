//! InfoNCE over cosine similarities of head-encoded vectors.
//!
//! `loss = -log(exp(s⁺/τ) / (exp(s⁺/τ) + Σ_j exp(s⁻_j/τ)))` with `s = ⟨enc(q), enc(c)⟩`.

use super::head::RetrievalHead;
use crate::embedding::dot;
use crate::error::{Error, Result};

/// Loss and its gradient with respect to the head's flat parameter buffer.
pub fn contrastive_loss(
    head: &RetrievalHead,
    query: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grads = vec![0.0; head.params().len()];
    let loss = contrastive_loss_into(head, query, positive, negatives, tau, 1.0, &mut grads)?;
    Ok((loss, grads))
}

/// Like [`contrastive_loss`] but adds `weight · ∂loss/∂params` into `grads`.
pub fn contrastive_loss_into(
    head: &RetrievalHead,
    query: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    tau: f64,
    weight: f64,
    grads: &mut [f64],
) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if grads.len() != head.params().len() {
        return Err(Error::DimensionMismatch {
            expected: head.params().len(),
            actual: grads.len(),
        });
    }
    let q = head.forward(query)?;
    let mut cands = Vec::with_capacity(1 + negatives.len());
    cands.push((positive, head.forward(positive)?));
    for n in negatives {
        cands.push((n, head.forward(n)?));
    }

    let logits: Vec<f64> = cands.iter().map(|(_, c)| dot(&q.unit, &c.unit) / tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let loss = lse - logits[0];

    // ∂loss/∂s_i = (softmax_i - [i == 0]) / τ
    let mut grad_q = vec![0.0; head.d_out()];
    for (i, (base, enc)) in cands.iter().enumerate() {
        let p = (logits[i] - lse).exp();
        let ds = (p - if i == 0 { 1.0 } else { 0.0 }) / tau * weight;
        if ds == 0.0 {
            continue;
        }
        for (g, u) in grad_q.iter_mut().zip(&enc.unit) {
            *g += ds * u;
        }
        let grad_c: Vec<f64> = q.unit.iter().map(|u| ds * u).collect();
        head.backward(base, enc, &grad_c, grads);
    }
    head.backward(query, &q, &grad_q, grads);
    Ok(loss)
}
