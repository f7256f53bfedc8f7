//! Texture analysis and synthesis: procedural corpus, style-based generator,
//! latent-consistency encoder, Gram-loss inversion, latent experiments and
//! structural texture similarity metrics.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix the common choices.

pub mod corpus;
pub mod error;
pub mod graph;
pub mod image;
pub mod inversion;
pub mod io;
pub mod kernels;
pub mod latentlab;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod scalar;
pub mod seeding;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision bundle used by training and the CLI.
pub type Bundle = models::ModelBundle<f32>;
/// Double-precision bundle used for gradient checks.
pub type Bundle64 = models::ModelBundle<f64>;
pub type Latent = models::LatentW<f32>;
pub type Latent64 = models::LatentW<f64>;
pub type Texture = image::Image<f32>;
pub type Texture64 = image::Image<f64>;
