//! Domain-confusion loss over patch logits.
//!
//! Binary cross-entropy on raw logits: source patches carry label 1, target
//! patches label 0, and the sum is normalized by the total patch count of
//! both domains together. With logits `x` this is softplus(-x) for source
//! and softplus(x) for target, evaluated in the overflow-safe form
//! `max(x, 0) + ln(1 + exp(-|x|))`. All-zero logits (a maximally confused
//! classifier) score exactly ln 2.

use ndarray::Array4;

use crate::{Error, Result, Scalar};

fn softplus<F: Scalar>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<F: Scalar>(x: F) -> F {
    crate::nn::act::sigmoid_scalar(x)
}

/// Returns `(loss, grad_source, grad_target)`.
pub fn adversarial_loss<F: Scalar>(
    src_logits: &Array4<F>,
    tgt_logits: &Array4<F>,
) -> Result<(F, Array4<F>, Array4<F>)> {
    let n = src_logits.len() + tgt_logits.len();
    if src_logits.is_empty() || tgt_logits.is_empty() {
        return Err(Error::shape(
            "adversarial logits",
            "nonempty source and target",
            format!("{} source, {} target", src_logits.len(), tgt_logits.len()),
        ));
    }
    let nf = F::from_usize(n);
    let mut sum = F::zero();
    for &x in src_logits.iter() {
        sum = sum + softplus(-x);
    }
    for &x in tgt_logits.iter() {
        sum = sum + softplus(x);
    }
    let grad_src = src_logits.mapv(|x| (sigmoid(x) - F::one()) / nf);
    let grad_tgt = tgt_logits.mapv(|x| sigmoid(x) / nf);
    Ok((sum / nf, grad_src, grad_tgt))
}
