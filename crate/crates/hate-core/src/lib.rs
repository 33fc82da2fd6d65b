//! Transaction-based next-item recommendation with hierarchical attentive
//! transaction embeddings.
//!
//! The crate covers the full pipeline: ingesting transaction logs and
//! preparing train/test instances ([`dataset`]), the shallow two-level
//! attention model and its ablation variants ([`model`]), noise-contrastive
//! training with analytic gradients and Adagrad ([`train`]), and ranking
//! evaluation with REC@K and MRR ([`eval`]).

mod binio;

pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, ErrorKind, Result};
