//! Algorithms for curating paired multimodal datasets.
//!
//! The crate is `no_std` (it needs `alloc`) and carries no IO. It covers:
//!
//! - [`geometry`]: unit vectors, cosine similarity, centroids and spreads.
//! - [`experts`]: the embedding backend interface and a deterministic
//!   synthetic expert with a controllable modality gap.
//! - [`sns`]: symmetric nucleus subsampling of (raw, annotation) pairs behind
//!   a similarity-ratio gate.
//! - [`projection`]: the fusion network over concatenated expert embeddings,
//!   its bias-aware loss, analytic gradients and training loop.
//! - [`retrieval`]: exact top-k search, bidirectional Recall@K and
//!   modality-gap diagnostics.
//! - [`corpus`]: deterministic synthetic paired corpora.
//! - [`curation`]: query-driven blends, random and stratified baselines, and
//!   the filter/dedup/rank pipeline.
//!
//! Companion crate `nucleus-engine` adds files, the remote client and the CLI.
#![cfg_attr(not(test), no_std)]
#![deny(unsafe_code)]
// `!(x >= 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod corpus;
pub mod curation;
pub mod experts;
pub mod geometry;
pub mod math;
pub mod projection;
pub mod retrieval;
pub mod sns;

pub use geometry::{Embedding, GeometryError, Modality};
