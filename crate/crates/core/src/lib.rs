//! Dynamic-execution inference techniques on small, fully specified toy
//! models: speculative sampling, feature-level drafting, lookahead decoding,
//! entropy-gated early exit, adaptive diffusion step budgets and
//! difficulty-based routing, with a simulated cost model throughout.

pub mod dist;
pub mod eagle;
pub mod early_exit;
pub mod error;
pub mod harness;
pub mod lookahead;
pub mod model;
pub mod rng;
pub mod router;
pub mod specdec;
pub mod stepsaver;

pub use dist::{entropy, normalize, sample, ProbDist};
pub use error::{Error, Result};
pub use model::{CostMeter, ModelSpec, SequenceModel, TokenId};
pub use rng::{Rng, UniformSource};
