//! Face-voice association head on precomputed embeddings: hyperbolic
//! alignment, enhanced gated feature fusion, a weighted alignment /
//! orthogonal-projection / cross-entropy objective, AdamW training and the
//! cross-modal verification and matching protocol.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x >= 0.0)` also rejects NaN

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod hyperbolic;
pub mod losses;
pub mod manifest;
pub mod model;
pub mod selfcheck;
pub mod trainer;

pub use error::{Error, Result};
