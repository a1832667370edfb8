//! Small neural-network toolkit: an autodiff tape for the counterfactual
//! model and a fast dense network for the agent.

pub mod mlp;
pub mod params;
pub mod tape;

pub use mlp::{Mlp, MlpAdam, MlpGrads, Scalar};
pub use params::{Adam, ParamStore};
pub use tape::{Tape, Var};
