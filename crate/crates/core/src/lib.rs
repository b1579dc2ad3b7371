//! De novo peptide sequencing from tandem mass spectra with an
//! autoregressive transformer decoder or one of three discrete diffusion
//! decoders, plus knapsack-constrained beam search and the usual
//! peptide/amino-acid level evaluation.
//!
//! Neural components are generic over [`Scalar`] (`f32` for training and
//! inference, `f64` for gradient checks); mass arithmetic is always `f64`.

pub mod diffusion;
pub mod error;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod peptide;
pub mod pipeline;
pub mod search;
pub mod scalar;
pub mod spectra;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use peptide::{Peptide, Token, TokenSequence, Vocabulary};
pub use scalar::Scalar;
pub use spectra::{Peak, Spectrum};

pub use model::{ModelBundle, ModelConfig, Variant};

pub type ModelBundle32 = model::ModelBundle<f32>;
pub type ModelBundle64 = model::ModelBundle<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
