//! Minimal reverse-mode autodiff engine: exactly the tensors, tape and layers
//! the network needs, plus finite-difference verification.

mod gradcheck;
mod layers;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_multi, relative_error};
pub use layers::{
    avgpool2d, conv2d_nobias, dense, layer_norm, mhsa_with_probs, multi_head_self_attention,
    pooled_dim, AttentionWeights,
};
pub use tape::{concat_cols, sum_scalars, Tape, Var};
pub use tensor::{Scalar, Tensor};

/// A named, gradient-tracked tensor of a network.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Whether L2 weight decay applies (kernels and weight matrices yes,
    /// biases and norm gains no).
    pub decay: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, mut tensor: Tensor<T>, decay: bool) -> Self {
        tensor.requires_grad = true;
        Parameter {
            name: name.into(),
            tensor,
            decay,
        }
    }
}
