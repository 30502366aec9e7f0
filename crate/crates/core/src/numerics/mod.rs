//! Minimal numerics for the survival network: a reverse-mode autodiff tape
//! over 2-D tensors, dense/LSTM layers, dropout, Adam, finite-difference
//! gradient checks and a binary checkpoint format.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{checkpoint_bytes, read_checkpoint, write_checkpoint, MAGIC, VERSION};
pub use gradcheck::{check_gradients, numeric_gradients, relative_error, GradCheckReport};
pub use graph::{sigmoid, Gradients, Graph, ParamId, ParamStore, Parameter, Var};
pub use layers::{
    dense_forward, dropout, glorot_uniform, lstm_forward, Activation, Dense, LstmCell, LstmLayer,
};
pub use tensor::Tensor;
