//! Dense tensors, a tape-based autodiff graph, MLPs, Adam and checkpoints.

mod adam;
pub mod checkpoint;
mod graph;
mod mlp;
mod tensor;

pub use adam::{ema_update, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use mlp::{keep_mask, Dropout, Forward, Head, LayerNormParams, Linear, MlpArch, MlpParams, Mode};
pub use tensor::Tensor;
