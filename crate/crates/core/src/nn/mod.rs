//! Dense tensors, reverse-mode autodiff, transformer layers and Adam.

mod checkpoint;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_into, read_checkpoint, write_checkpoint};
pub use graph::{Gradients, Graph, Var};
pub use layers::{
    attention, causal_mask, sinusoidal_embed, sinusoidal_rows, FeedForward, LayerNorm, Linear,
    MultiHeadAttention,
};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
