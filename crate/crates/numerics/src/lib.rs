//! Numerical substrate for the avatar diffusion pipeline.
//!
//! Everything here runs in 64-bit floating point. A [`Graph`] records
//! operations on [`Tensor`] values as they are evaluated and replays them in
//! reverse to produce gradients; networks elsewhere in the workspace are
//! expressed directly against this tape.

mod error;
pub mod gemm;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{NumericsError, Result};
pub use graph::{Bound, Gradients, Graph, Var};
pub use optim::{adam_step, AdamConfig, AdamState, StepOutcome};
pub use params::ParamStore;
pub use rng::SeedStream;
pub use tensor::Tensor;
