//! Minimal multilayer perceptron shared by every training strategy.
//!
//! The network is a stack of dense layers with ReLU on hidden layers and raw
//! logits on the output. Losses are expressed through their gradient with
//! respect to the softmax probabilities, which keeps each loss definition
//! local and lets one backward pass serve all of them.

mod gradcheck;
mod loss;
mod model;
mod optim;

pub use gradcheck::grad_check;
pub(crate) use loss::rce_log as loss_rce_log;
pub use loss::{cross_entropy, log_clamped, softmax, LossKind, LossTerms, Targets, LOG_CLAMP, RCE_LOG_FLOOR};
pub(crate) use model::argmax as argmax_index;
pub use model::{backward, loss_and_grad, Dense, GradientSet, LossGrad, MlpModel};
pub use optim::{sgd_step, OptimState};
