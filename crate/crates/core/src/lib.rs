//! Speculative decoding with window-level policy optimization over exactly
//! computable tabular targets.
//!
//! The crate covers the whole loop: a synthetic n-gram corpus and target, a
//! small MLP drafter with analytic gradients, rejection-sampling
//! verification, window rewards, divergence-aware window selection, the
//! clipped group-relative trainer, and the analytical checks that tie
//! acceptance to divergence.

pub mod adaw;
pub mod analysis;
pub mod corpus;
pub mod error;
pub mod models;
pub mod prob;
pub mod rewards;
pub mod rng;
pub mod specdec;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
pub use models::{DraftPolicy, DrafterParameters, DrafterShape, FeatureVector, TabularTarget, TargetAdapter};
pub use prob::ProbVector;
pub use rng::RngStream;

pub type TokenId = u32;
pub type TokenSeq = Vec<TokenId>;
