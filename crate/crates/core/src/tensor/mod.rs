//! Dense f64 tensors and a small layer-wise reverse-mode engine for
//! feed-forward autoencoders.

mod checkpoint;
mod gradcheck;
mod layer;
mod loss;
mod network;
#[allow(clippy::module_inception)]
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{central_difference, finite_diff_gradient, relative_error, FD_STEP};
pub use layer::{ConvSpec, LayerSpec};
pub use loss::{mse_loss, sgd_step, sgd_step_in_place};
pub use network::{FlatParams, Network, Tape};
pub use tensor::Tensor;
