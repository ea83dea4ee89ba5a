//! Bias-corrected Adam over the trainable parameter set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    /// First moments, one slot per parameter position; empty for frozen slots.
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(lr: f64) -> Self {
        OptimizerState { m: Vec::new(), v: Vec::new(), step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One update of every parameter that requires grad, in place. Parameters
/// are replaced by fresh leaves, so their gradients are cleared.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut OptimizerState) -> Result<()> {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| if p.requires_grad() { vec![0.0; p.numel()] } else { Vec::new() }).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    let mut grads = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        if !p.requires_grad() {
            grads.push(None);
            continue;
        }
        let g = p.grad().ok_or_else(|| Error::Contract(format!("parameter {i} has no gradient")))?;
        if state.m[i].len() != g.len() {
            return Err(Error::Contract(format!("moment shape mismatch for parameter {i}")));
        }
        grads.push(Some(g));
    }

    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let mut data = p.to_vec();
        for j in 0..data.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            data[j] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        **p = Tensor::param(p.shape(), data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(values: &[f64], grad: &[f64]) -> Tensor {
        let p = Tensor::param(&[values.len()], values.to_vec()).unwrap();
        p.accumulate_grad(grad);
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = with_grad(&[0.5, -0.5], &[1.0, -3.0]);
        let mut state = OptimizerState::new(0.001);
        adam_step(&mut [&mut p], &mut state).unwrap();
        let d = p.to_vec();
        assert!((d[0] - (0.5 - 0.001)).abs() < 1e-10);
        assert!((d[1] - (-0.5 + 0.001)).abs() < 1e-10);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_values_and_decays_moments() {
        let mut p = with_grad(&[1.0], &[2.0]);
        let mut state = OptimizerState::new(0.01);
        adam_step(&mut [&mut p], &mut state).unwrap();
        let (m1, v1) = (state.m[0][0], state.v[0][0]);
        let before = p.to_vec();
        p.accumulate_grad(&[0.0]);
        adam_step(&mut [&mut p], &mut state).unwrap();
        assert!((state.m[0][0] - 0.9 * m1).abs() < 1e-15);
        assert!((state.v[0][0] - 0.999 * v1).abs() < 1e-15);
        // The decayed first moment still moves θ; with fresh state it would not.
        let mut q = with_grad(&[1.0], &[0.0]);
        adam_step(&mut [&mut q], &mut OptimizerState::new(0.01)).unwrap();
        assert_eq!(q.to_vec(), vec![1.0]);
        assert_ne!(p.to_vec(), before);
    }

    #[test]
    fn frozen_parameters_are_untouched() {
        let mut frozen = Tensor::new(&[2], vec![0.25, 0.75]).unwrap();
        let original = frozen.clone();
        let mut live = with_grad(&[0.0], &[1.0]);
        let mut state = OptimizerState::new(0.1);
        for _ in 0..5 {
            live.accumulate_grad(&[1.0]);
            adam_step(&mut [&mut frozen, &mut live], &mut state).unwrap();
        }
        assert!(frozen.bit_eq(&original));
        assert!(state.m[0].is_empty());
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut p = Tensor::param(&[1], vec![0.0]).unwrap();
        let err = adam_step(&mut [&mut p], &mut OptimizerState::new(0.1));
        assert!(matches!(err, Err(Error::Contract(_))));
    }
}
