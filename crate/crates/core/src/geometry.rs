//! Vector primitives shared by every other module.
//!
//! Two metrics are in play and they are not interchangeable: gating and
//! retrieval rank by cosine similarity, while gaps and spreads are Euclidean
//! distances. Centroids are plain means and are never re-normalized, so the
//! centroid of a set of unit vectors lies inside the unit ball.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use thiserror::Error;

use crate::math;

/// Norm below which a vector counts as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Allowed deviation of a stored embedding's norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("operation needs a nonempty set")]
    EmptySet,
    #[error("vector norm {0} is not 1")]
    NotUnit(f64),
    #[error("unknown modality '{0}'")]
    UnknownModality(String),
}

/// Input modality of a raw sample or annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Modality {
    Text,
    Image,
    Audio,
    Video,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Text, Modality::Image, Modality::Audio, Modality::Video];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
            Modality::Audio => "audio",
            Modality::Video => "video",
        }
    }

    /// Byte tag used by the embedding cache format.
    pub fn code(self) -> u8 {
        match self {
            Modality::Text => 0,
            Modality::Image => 1,
            Modality::Audio => 2,
            Modality::Video => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Modality> {
        Modality::ALL.get(usize::from(code)).copied()
    }

    pub fn index(self) -> usize {
        usize::from(self.code())
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            "audio" => Ok(Modality::Audio),
            "video" => Ok(Modality::Video),
            other => Err(GeometryError::UnknownModality(other.into())),
        }
    }
}

/// A unit-norm vector produced by one expert for one sample.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Embedding {
    values: Vec<f64>,
    pub expert_id: String,
    pub modality: Modality,
    pub sample_id: String,
}

impl Embedding {
    /// Normalizes `values` and wraps them.
    pub fn new(
        values: Vec<f64>,
        expert_id: impl Into<String>,
        modality: Modality,
        sample_id: impl Into<String>,
    ) -> Result<Self, GeometryError> {
        Ok(Self { values: normalize(&values)?, expert_id: expert_id.into(), modality, sample_id: sample_id.into() })
    }

    /// Wraps values that are already unit-norm (for instance read back from
    /// 32-bit storage) without touching them.
    pub fn from_unit(
        values: Vec<f64>,
        expert_id: impl Into<String>,
        modality: Modality,
        sample_id: impl Into<String>,
    ) -> Result<Self, GeometryError> {
        let n = math::norm(&values);
        if math::abs(n - 1.0) > UNIT_TOLERANCE {
            return Err(GeometryError::NotUnit(n));
        }
        Ok(Self { values, expert_id: expert_id.into(), modality, sample_id: sample_id.into() })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Returns `v / ‖v‖₂`.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>, GeometryError> {
    let n = math::norm(v);
    if !(n >= ZERO_NORM) {
        return Err(GeometryError::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64, GeometryError> {
    if u.len() != v.len() {
        return Err(GeometryError::DimMismatch { expected: u.len(), got: v.len() });
    }
    Ok(math::dot(u, v).clamp(-1.0, 1.0))
}

fn check_dims<V: AsRef<[f64]>>(set: &[V]) -> Result<usize, GeometryError> {
    let first = set.first().ok_or(GeometryError::EmptySet)?.as_ref().len();
    for v in set {
        if v.as_ref().len() != first {
            return Err(GeometryError::DimMismatch { expected: first, got: v.as_ref().len() });
        }
    }
    Ok(first)
}

/// Component-wise mean.
///
/// Accumulated as a running mean so that a set of identical vectors has that
/// exact vector as its centroid.
pub fn centroid<V: AsRef<[f64]>>(set: &[V]) -> Result<Vec<f64>, GeometryError> {
    check_dims(set)?;
    let mut mean = set[0].as_ref().to_vec();
    for (k, v) in set.iter().enumerate().skip(1) {
        let w = (k + 1) as f64;
        for (m, x) in mean.iter_mut().zip(v.as_ref()) {
            *m += (x - *m) / w;
        }
    }
    Ok(mean)
}

/// Mean Euclidean distance of the members of `set` to `center`.
pub fn spread<V: AsRef<[f64]>>(set: &[V], center: &[f64]) -> Result<f64, GeometryError> {
    let dim = check_dims(set)?;
    if dim != center.len() {
        return Err(GeometryError::DimMismatch { expected: dim, got: center.len() });
    }
    let total: f64 = set.iter().map(|v| math::l2_distance(v.as_ref(), center)).sum();
    Ok(total / set.len() as f64)
}
