//! Tensors, divergences, losses and optimizers.

mod divergence;
mod gradcheck;
mod optim;
mod tensor;

pub use divergence::{
    cross_entropy_with_labels, entropy, kl_divergence, log_softmax, soft_cross_entropy,
    soft_cross_entropy_grad, soft_cross_entropy_with_temperature, softmax,
    softmax_with_temperature, squared_error_grad, total_variation, uniform_kl_grad, Distribution,
    PROB_FLOOR,
};
pub use gradcheck::{finite_difference_gradient, max_relative_error};
pub use optim::{
    adam_step, sgd_step, AdamHyper, AdamState, OptimizerConfig, OptimizerState, SgdState,
};
pub use tensor::Tensor;

pub(crate) use tensor::{matmul, matmul_a_bt, matmul_at_b};
