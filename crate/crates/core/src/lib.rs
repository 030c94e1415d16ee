//! Zero-shot population generation for dynamic multi-objective optimization.
//!
//! A decoupled generative model is pre-trained offline on evolutionary
//! trajectories of historical problems. Online, after every environmental
//! change, it maps the lagging population and its recent objective history to
//! a latent centroid, samples candidates around it, decodes them, and screens
//! the candidates with an augmented Tchebycheff rule to seed MOEA/D.
//!
//! Modules:
//! - [`benchmarks`]: dynamic test and training problems, schedules, true fronts
//! - [`wavelet`]: Haar trend/detail decoupling of trajectory windows
//! - [`model`]: the learnable encoder/dictionary/VAE/decoder stack and training
//! - [`metrics`]: IGD, hypervolume, MIGD/MHV, IGD distance matrices
//! - [`moead`]: MOEA/D-DE static optimizer
//! - [`generate`]: centroid sampling, decoding and screening at a change
//! - [`dataset`]: offline corpus generation and triplet mining
//! - [`harness`]: run configuration, tracking loop, persistence

pub mod benchmarks;
pub mod dataset;
pub mod error;
pub mod generate;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod moead;
pub mod rng;
pub mod wavelet;

pub use error::{Error, Result};
