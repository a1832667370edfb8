pub mod archive;
pub mod cf_model;
pub mod env;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod sac;
pub mod scm;

pub use error::{Error, Result};
