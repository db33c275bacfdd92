//! Avatar tokens, visibility masks, the token compressor, and the masked
//! flow-matching denoiser.

pub mod compressor;
pub mod conditions;
pub mod detok;
pub mod diffusion;
mod error;
pub mod identity;
pub mod nn;
pub mod profile;
pub mod stats;
pub mod template;
pub mod tokens;
pub mod visibility;
pub mod wardrobe;

pub use error::{CoreError, Result};
