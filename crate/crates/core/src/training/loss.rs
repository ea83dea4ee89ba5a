//! Contrastive objective: cross-entropy of class similarities at the true class.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `s_i = V_g · F_T(i) / T`, optionally on L2-normalized vectors. Returns `[c]`.
pub fn similarity_logits(v_g: &Tensor, f_t: &Tensor, temperature: f64, normalize: bool) -> Result<Tensor> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let d = v_g.numel();
    if f_t.rank() != 2 || f_t.shape()[1] != d {
        return Err(Error::dim("similarity_logits", v_g.shape(), f_t.shape()));
    }
    let c = f_t.shape()[0];
    let (v, t) = if normalize {
        (v_g.reshape(&[d])?.l2_normalize(0)?, f_t.l2_normalize(1)?)
    } else {
        (v_g.reshape(&[d])?, f_t.clone())
    };
    Ok(t.matmul(&v.reshape(&[d, 1])?)?.reshape(&[c])?.scale(1.0 / temperature))
}

/// `−log softmax(logits)[cls]`.
pub fn cross_entropy(logits: &Tensor, cls: usize) -> Result<Tensor> {
    if logits.rank() != 1 {
        return Err(Error::Contract(format!("logits must be a vector, got {:?}", logits.shape())));
    }
    let c = logits.numel();
    if cls >= c {
        return Err(Error::Contract(format!("class {cls} out of range for {c} classes")));
    }
    Ok(logits.log_softmax(0)?.select(cls)?.scale(-1.0))
}

pub fn contrastive_loss(v_g: &Tensor, f_t: &Tensor, cls: usize, temperature: f64, normalize: bool) -> Result<Tensor> {
    let c = f_t.shape().first().copied().unwrap_or(0);
    if cls >= c {
        return Err(Error::Contract(format!("class {cls} out of range for {c} classes")));
    }
    cross_entropy(&similarity_logits(v_g, f_t, temperature, normalize)?, cls)
}

/// Mean of per-clip losses.
pub fn mean_loss(losses: &[Tensor]) -> Result<Tensor> {
    if losses.is_empty() {
        return Err(Error::Contract("cannot average an empty batch".into()));
    }
    Tensor::stack(losses)?.mean(0)
}
