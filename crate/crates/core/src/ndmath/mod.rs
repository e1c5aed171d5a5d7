//! Dense `f64` tensors, a small reverse-mode tape, GRU and linear layers,
//! and the Adam optimizer.

mod adam;
mod gradcheck;
mod layers;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::grad_check;
pub use layers::{
    gru_cell_forward, gru_sequence, linear_forward, log_softmax, GruLayerParams, LinearParams,
};
pub use tape::{log_softmax_rows, Gradients, GruVars, LinearVars, Tape, Var};
pub use tensor::Tensor;
