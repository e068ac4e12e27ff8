//! Sketch-conditioned sampling for a frozen generator.
//!
//! A pre-trained generator, a joint image/text embedder, and an
//! image-to-sketch network stay frozen; an invertible flow over the
//! generator's input latent space is trained so its pushforward matches the
//! sketch-conditioned distribution. The objective combines the flow's exact
//! log-determinant, the latent prior, and an embedding-space energy scoring
//! semantic agreement with the reference sketch. Style mixing keeps the
//! learned distribution on coarse structure only, preserving the source
//! model's detail diversity.
//!
//! The numeric pipeline is generic over the scalar type via [`scalar::Real`]:
//! plain `f32`/`f64` for evaluation and the reverse-mode [`autodiff::Var`]
//! for training, through the same code path.

pub mod autodiff;
pub mod backends;
pub mod editing;
pub mod energy;
pub mod error;
pub mod evalkit;
pub mod flow;
pub mod hash;
pub mod image;
pub mod imageio;
pub mod linalg;
pub mod rng;
pub mod scalar;
pub mod stylemix;
pub mod trainer;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use scalar::Real;

/// Concrete scalar instantiations of the core types.
pub type Flow32 = flow::Flow<f32>;
pub type Flow64 = flow::Flow<f64>;
pub type FlowVar = flow::Flow<Var>;
pub type Image32 = image::Image<f32>;
pub type Image64 = image::Image<f64>;
pub type ImageVar = image::Image<Var>;
