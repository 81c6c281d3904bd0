//! Finite-difference verification of tape gradients.
//!
//! Checks run in `f64` and expect inputs chosen away from ReLU/clip kinks;
//! [`Tape::kink_margin`] reports how close a forward pass came to one so
//! callers can re-draw inputs when needed.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{CcatError, Result};

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare tape gradients of a scalar-valued function against central finite
/// differences over every element of every input. Returns the worst relative
/// error.
pub fn grad_check_multi<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&Tape<f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&tape, &vars)?;
    if out.shape() != vec![1] {
        return Err(CcatError::Shape(format!(
            "grad_check target must be scalar, got {:?}",
            out.shape()
        )));
    }
    out.backward()?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| v.grad()).collect();

    let eval = |points: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<f64>> = points.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut worst = 0.0f64;
    let mut points: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, tensor) in inputs.iter().enumerate() {
        for i in 0..tensor.len() {
            let orig = tensor.data()[i];
            points[ti].data_mut()[i] = orig + eps;
            let plus = eval(&points)?;
            points[ti].data_mut()[i] = orig - eps;
            let minus = eval(&points)?;
            points[ti].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[ti].data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Single-input convenience wrapper around [`grad_check_multi`].
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Tape<f64>, Var<f64>) -> Result<Var<f64>>,
{
    grad_check_multi(
        |tape, vars| f(tape, vars[0].clone()),
        std::slice::from_ref(x),
        eps,
    )
}
