//! Superposition-aware representational alignment.
//!
//! Toy models of superposition are trained from different seeds, TopK sparse
//! autoencoders disentangle their hidden activations, and the two populations
//! are compared with semi-matching, soft-matching (exact optimal transport),
//! the permutation score, and cross-validated ridge regression.

pub mod datagen;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod optim;
pub mod pipeline;
pub mod sae;
pub mod theory;
pub mod toymodel;

pub use error::{Error, Result};
