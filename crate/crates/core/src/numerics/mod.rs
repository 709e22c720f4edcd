//! Dense tensors, reverse-mode differentiation, and the training
//! primitives (LSTM cell, Adam, dropout, seeded initialization) built on them.

mod adam;
mod lstm;
mod rng;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use lstm::{lstm_step, LstmVars};
pub use rng::{dropout, dropout_mask, init_uniform, Rng};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{argmax, dot, log_softmax_at, matmul, norm, sigmoid, softmax, Tensor};

pub(crate) use rng::check_keep_prob;
