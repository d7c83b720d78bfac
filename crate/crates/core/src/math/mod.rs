//! Dense kernels, activations, the recurrent cell, parameter storage with an
//! adaptive-moment optimizer, gradient checking and checkpoint files.

pub mod activation;
pub mod checkpoint;
pub mod gradcheck;
pub mod gru;
pub mod params;
pub mod tensor;

pub use activation::{log_softmax, sigmoid, softmax};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{central_difference, grad_check, relative_error, GradCheckReport};
pub use gru::{gru_step, GruParams};
pub use params::{adam_step, AdamConfig, Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
