//! Minimal dense network engine: forward pass, exact backpropagation,
//! losses and a capped Adagrad optimizer.

pub mod gradcheck;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod tensor;

pub use gradcheck::{finite_difference_check, grad_check, relative_error, GradCheckReport};
pub use loss::{backward, loss_and_output_grad, loss_from_cache, loss_mse, loss_xent, LossKind, TargetRef};
pub use mlp::{backprop, copy_params, forward, Activation, ForwardCache, GradSet, Layer, MlpSpec, OutputGrad, ParamSet};
pub use optim::{alpha_cap, alpha_with_input_shift, capped_joint_step, AdagradState, StepReport, StepSizeDiagnostic};
pub use tensor::Tensor;
