//! Run directories, training stages, sampling, and evaluation behind the
//! `glca` command line.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod generate;
pub mod gradcheck;
pub mod layout;
pub mod shard;
pub mod train;

pub use config::{Ablation, RunConfig};
pub use error::{PipelineError, Result};
pub use layout::{Layout, Split};
