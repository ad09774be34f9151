//! Adam optimizer with bias-corrected moments.

use std::collections::BTreeMap;

use super::{Result, Scalar, Tensor, TensorError};

/// Per-parameter first/second moment accumulators keyed by parameter name.
pub struct OptimizerState<S: Scalar> {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    moments: BTreeMap<String, (Vec<S>, Vec<S>)>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(learning_rate: f64) -> Self {
        OptimizerState {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            moments: BTreeMap::new(),
        }
    }
}

impl<S: Scalar> Default for OptimizerState<S> {
    fn default() -> Self {
        Self::new(1e-4)
    }
}

/// One Adam update over named parameters, reading each tensor's accumulated
/// gradient. Every tensor is replaced by a fresh gradient-tracked leaf, so the
/// step also clears gradients. The step counter increments exactly once per
/// call.
pub fn adam_step<S: Scalar>(
    params: &mut [(String, &mut Tensor<S>)],
    state: &mut OptimizerState<S>,
) -> Result<()> {
    state.step += 1;
    let bc1 = S::from_f64(1.0 - state.beta1.powi(state.step as i32));
    let bc2 = S::from_f64(1.0 - state.beta2.powi(state.step as i32));
    let lr = S::from_f64(state.learning_rate);
    let b1 = S::from_f64(state.beta1);
    let b2 = S::from_f64(state.beta2);
    let one_m_b1 = S::one() - b1;
    let one_m_b2 = S::one() - b2;
    let eps = S::from_f64(state.epsilon);

    for (name, tensor) in params.iter_mut() {
        let grad = tensor
            .grad()
            .ok_or_else(|| TensorError::MissingGrad(name.clone()))?;
        let n = tensor.numel();
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (vec![S::zero(); n], vec![S::zero(); n]));
        if m.len() != n {
            return Err(TensorError::Dimension {
                op: "adam_step",
                msg: format!(
                    "moment size {} does not match parameter `{name}` of size {n}",
                    m.len()
                ),
            });
        }
        let mut data = tensor.data().to_vec();
        for i in 0..n {
            let g = grad[i];
            m[i] = b1 * m[i] + one_m_b1 * g;
            v[i] = b2 * v[i] + one_m_b2 * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] = data[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        **tensor = Tensor::param(&tensor.shape().to_vec(), data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::<f64>::param(&[3], vec![1.0, -2.0, 3.0]).unwrap();
        p.accumulate_grad(&[0.0, 0.0, 0.0]);
        let mut state = OptimizerState::new(0.1);
        adam_step(&mut [("p".into(), &mut p)], &mut state).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // Bias correction makes m_hat/v_hat ratio 1 on the first step.
        let mut p = Tensor::<f64>::param(&[1], vec![0.5]).unwrap();
        p.accumulate_grad(&[1.0]);
        let mut state = OptimizerState::new(0.1);
        adam_step(&mut [("p".into(), &mut p)], &mut state).unwrap();
        assert!((p.data()[0] - 0.4).abs() < 1e-6, "got {}", p.data()[0]);
    }

    #[test]
    fn step_counter_increments_once_per_call() {
        let mut p = Tensor::<f64>::param(&[1], vec![0.0]).unwrap();
        let mut state = OptimizerState::<f64>::default();
        for expected in 1..=3u64 {
            p.accumulate_grad(&[1.0]);
            adam_step(&mut [("p".into(), &mut p)], &mut state).unwrap();
            assert_eq!(state.step, expected);
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut p = Tensor::<f64>::param(&[1], vec![0.0]).unwrap();
        let mut state = OptimizerState::<f64>::default();
        let err = adam_step(&mut [("p".into(), &mut p)], &mut state);
        assert!(matches!(err, Err(TensorError::MissingGrad(_))));
    }
}
