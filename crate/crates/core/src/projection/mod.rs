//! Fusion of expert embedding spaces.
//!
//! A small network maps the concatenation of `K` expert embeddings
//! (`K·d` values) to one `d`-dimensional unit vector. It is trained so that
//! each raw sample's fused vector lands on its annotation's anchor embedding,
//! which never moves. The objective is
//!
//! ```text
//! L = λ_task·InfoNCE + λ_cluster·Σ_m ‖μ_m − μ‖² + λ_scale·Σ_m |σ_m − σ|
//! ```
//!
//! where the last two terms pull per-modality centroids onto the global
//! centroid and equalize per-modality spreads. Gradients are exact and
//! hand-derived; every piece is checked against finite differences in tests.

pub mod loss;
pub mod model;
pub mod train;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use loss::{
    cluster_with_grad, loss_cluster, loss_scale, loss_task, loss_total, scale_with_grad, task_with_grad,
    total_with_grad, Batch, LossBreakdown, LossWeights, Negatives, TaskOptions,
};
pub use model::{Architecture, Gradients, Layer, ProjectionModel};
pub use train::{
    batch_gradient, batch_loss, train, Objective, Optimizer, StepLog, TrainConfig, TrainOutcome, TrainSample,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProjectionError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("batch of {0} is too small; InfoNCE needs at least 2")]
    BatchTooSmall(usize),
    #[error("modality group {0} is empty")]
    EmptyModality(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(alloc::string::String),
    #[error("loss became non-finite at step {0}")]
    Diverged(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
