//! Adam with bias correction. L2 regularization enters as an additive
//! gradient term `2 * lambda * w` on kernels and weight matrices only.

use crate::error::{CcatError, Result};
use crate::nncore::{Parameter, Scalar, Tensor};

/// First/second moment estimates per parameter plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Parameter<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Hyper-parameters of one update.
#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 1e-3,
            l2_lambda: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update over all parameters. `grads` must align with `params`.
pub fn adam_step<T: Scalar>(
    params: &mut [Parameter<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    hyper: &AdamHyper,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(CcatError::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step;
    let b1 = T::from_f64(hyper.beta1);
    let b2 = T::from_f64(hyper.beta2);
    let one = T::one();
    let corr1 = T::from_f64(1.0 - hyper.beta1.powi(t as i32));
    let corr2 = T::from_f64(1.0 - hyper.beta2.powi(t as i32));
    let lr = T::from_f64(hyper.learning_rate);
    let eps = T::from_f64(hyper.epsilon);
    let decay = T::from_f64(2.0 * hyper.l2_lambda);
    for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
        if grad.shape() != param.tensor.shape() {
            return Err(CcatError::Shape(format!(
                "gradient shape {:?} for parameter {} {:?}",
                grad.shape(),
                param.name,
                param.tensor.shape()
            )));
        }
        let apply_decay = param.decay && hyper.l2_lambda > 0.0;
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let w = param.tensor.data_mut();
        for j in 0..w.len() {
            let mut g = grad.data()[j];
            if apply_decay {
                g = g + decay * w[j];
            }
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            let mhat = m[j] / corr1;
            let vhat = v[j] / corr2;
            w[j] = w[j] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
