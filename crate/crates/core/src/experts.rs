//! Embedding backends.
//!
//! An [`Expert`] turns items (content plus modality tag) into unit vectors of
//! a fixed dimension. All experts wired into one engine share that dimension
//! so their outputs can be concatenated.
//!
//! [`SyntheticExpert`] is the deterministic stand-in used for desk-scale work.
//! Content is featurized by hashing its tokens into a shared semantic
//! subspace; the expert then adds a per-modality offset and keyed Gaussian
//! noise before normalizing. With a positive gap the embeddings cluster by
//! modality, which is the geometry the projection network has to undo.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::geometry::{normalize, Embedding, GeometryError, Modality};
use crate::math::{self, stream_key};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExpertError {
    #[error("expert '{expert}' does not support modality {modality}")]
    UnsupportedModality { expert: String, modality: Modality },
    #[error("remote failure: {0}")]
    RemoteFailure(String),
    #[error("expected {expected} dimensions, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid expert configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ExpertKind {
    EndToEnd,
    Fusion,
    TextBased,
    Synthetic,
    Remote,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExpertDescriptor {
    pub expert_id: String,
    pub kind: ExpertKind,
    pub dim: usize,
    pub supported_modalities: Vec<Modality>,
}

impl ExpertDescriptor {
    pub fn validate(&self) -> Result<(), ExpertError> {
        if self.dim < 2 {
            return Err(ExpertError::InvalidConfig(alloc::format!(
                "expert '{}' has dim {} (< 2)",
                self.expert_id,
                self.dim
            )));
        }
        if self.supported_modalities.is_empty() {
            return Err(ExpertError::InvalidConfig(alloc::format!("expert '{}' supports no modality", self.expert_id)));
        }
        Ok(())
    }

    pub fn supports(&self, modality: Modality) -> bool {
        self.supported_modalities.contains(&modality)
    }
}

/// One unit of work for an expert.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedItem {
    pub id: String,
    pub modality: Modality,
    pub content: String,
}

impl EmbedItem {
    pub fn new(id: impl Into<String>, modality: Modality, content: impl Into<String>) -> Self {
        Self { id: id.into(), modality, content: content.into() }
    }
}

pub trait Expert {
    fn descriptor(&self) -> &ExpertDescriptor;

    /// Embeds every item, in order. Implementations must return exactly one
    /// embedding per item, each of `descriptor().dim` dimensions.
    fn embed_batch(&self, items: &[EmbedItem]) -> Result<Vec<Embedding>, ExpertError>;

    fn embed(&self, item: &EmbedItem) -> Result<Embedding, ExpertError> {
        let mut out = self.embed_batch(core::slice::from_ref(item))?;
        out.pop().ok_or_else(|| ExpertError::RemoteFailure("empty response".to_string()))
    }

    fn id(&self) -> &str {
        &self.descriptor().expert_id
    }

    fn dim(&self) -> usize {
        self.descriptor().dim
    }
}

impl<E: Expert + ?Sized> Expert for &E {
    fn descriptor(&self) -> &ExpertDescriptor {
        (**self).descriptor()
    }

    fn embed_batch(&self, items: &[EmbedItem]) -> Result<Vec<Embedding>, ExpertError> {
        (**self).embed_batch(items)
    }
}

impl<E: Expert + ?Sized> Expert for alloc::boxed::Box<E> {
    fn descriptor(&self) -> &ExpertDescriptor {
        (**self).descriptor()
    }

    fn embed_batch(&self, items: &[EmbedItem]) -> Result<Vec<Embedding>, ExpertError> {
        (**self).embed_batch(items)
    }
}

/// Checks that a backend honoured the batch contract.
pub fn check_batch(descriptor: &ExpertDescriptor, items: &[EmbedItem], out: &[Embedding]) -> Result<(), ExpertError> {
    if out.len() != items.len() {
        return Err(ExpertError::RemoteFailure(alloc::format!(
            "expected {} embeddings, got {}",
            items.len(),
            out.len()
        )));
    }
    for e in out {
        if e.dim() != descriptor.dim {
            return Err(ExpertError::DimMismatch { expected: descriptor.dim, got: e.dim() });
        }
    }
    Ok(())
}

/// Lowercased alphanumeric tokens of `text`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase())
}

fn gaussian_vector(key: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Bag-of-tokens featurizer: each token maps to a fixed random unit vector
/// keyed by `token_seed`; a text's payload is the normalized sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenFeaturizer {
    pub token_seed: u64,
    pub semantic_dim: usize,
}

impl TokenFeaturizer {
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let v = gaussian_vector(stream_key(self.token_seed, token), self.semantic_dim);
        normalize(&v).unwrap_or_else(|_| {
            let mut e = alloc::vec![0.0; self.semantic_dim];
            e[0] = 1.0;
            e
        })
    }

    pub fn payload(&self, text: &str) -> Result<Vec<f64>, GeometryError> {
        let mut acc = alloc::vec![0.0; self.semantic_dim];
        for token in tokenize(text) {
            for (a, t) in acc.iter_mut().zip(self.token_vector(&token)) {
                *a += t;
            }
        }
        normalize(&acc)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticExpertConfig {
    /// Keys the modality offsets and the noise streams.
    pub seed: u64,
    /// Keys the token vectors; experts meant to agree on semantics share it.
    pub token_seed: u64,
    pub dim: usize,
    pub semantic_dim: usize,
    pub gap_magnitude: f64,
    pub noise_sigma: f64,
}

impl SyntheticExpertConfig {
    pub fn validate(&self) -> Result<(), ExpertError> {
        if self.dim < 2 || self.semantic_dim == 0 || self.semantic_dim > self.dim {
            return Err(ExpertError::InvalidConfig(alloc::format!(
                "need 2 <= dim and 1 <= semantic_dim <= dim, got dim={} semantic_dim={}",
                self.dim,
                self.semantic_dim
            )));
        }
        if !(self.gap_magnitude >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(ExpertError::InvalidConfig("gap_magnitude and noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Deterministic modality-gapped expert.
#[derive(Debug, Clone)]
pub struct SyntheticExpert {
    descriptor: ExpertDescriptor,
    config: SyntheticExpertConfig,
    featurizer: TokenFeaturizer,
    offsets: [Vec<f64>; 4],
}

impl SyntheticExpert {
    pub fn new(expert_id: impl Into<String>, config: SyntheticExpertConfig) -> Result<Self, ExpertError> {
        config.validate()?;
        let descriptor = ExpertDescriptor {
            expert_id: expert_id.into(),
            kind: ExpertKind::Synthetic,
            dim: config.dim,
            supported_modalities: Modality::ALL.to_vec(),
        };
        let offsets = modality_offsets(config.seed, config.dim, config.semantic_dim);
        let featurizer = TokenFeaturizer { token_seed: config.token_seed, semantic_dim: config.semantic_dim };
        Ok(Self { descriptor, config, featurizer, offsets })
    }

    /// Restricts the modalities this expert accepts.
    pub fn with_modalities(mut self, modalities: Vec<Modality>) -> Self {
        self.descriptor.supported_modalities = modalities;
        self
    }

    pub fn config(&self) -> &SyntheticExpertConfig {
        &self.config
    }

    pub fn featurizer(&self) -> &TokenFeaturizer {
        &self.featurizer
    }

    pub fn offset(&self, modality: Modality) -> &[f64] {
        &self.offsets[modality.index()]
    }

    /// `normalize(pad(payload) + gap·offset(modality) + noise)` with the noise
    /// stream keyed by `(seed, sample_id)`; coordinate `i` takes the `i`-th draw.
    pub fn generate(&self, payload: &[f64], modality: Modality, sample_id: &str) -> Result<Embedding, ExpertError> {
        if payload.len() != self.config.semantic_dim {
            return Err(ExpertError::DimMismatch { expected: self.config.semantic_dim, got: payload.len() });
        }
        let mut v = alloc::vec![0.0; self.config.dim];
        v[..payload.len()].copy_from_slice(payload);
        let g = self.config.gap_magnitude;
        for (x, o) in v.iter_mut().zip(self.offset(modality)) {
            *x += g * o;
        }
        if self.config.noise_sigma > 0.0 {
            let noise = gaussian_vector(stream_key(self.config.seed, sample_id), self.config.dim);
            for (x, n) in v.iter_mut().zip(noise) {
                *x += self.config.noise_sigma * n;
            }
        }
        Ok(Embedding::new(v, self.descriptor.expert_id.clone(), modality, sample_id)?)
    }
}

impl Expert for SyntheticExpert {
    fn descriptor(&self) -> &ExpertDescriptor {
        &self.descriptor
    }

    fn embed_batch(&self, items: &[EmbedItem]) -> Result<Vec<Embedding>, ExpertError> {
        items
            .iter()
            .map(|item| {
                if !self.descriptor.supports(item.modality) {
                    return Err(ExpertError::UnsupportedModality {
                        expert: self.descriptor.expert_id.clone(),
                        modality: item.modality,
                    });
                }
                let payload = self.featurizer.payload(&item.content)?;
                self.generate(&payload, item.modality, &item.id)
            })
            .collect()
    }
}

/// One unit offset per modality. When the complement of the semantic
/// subspace has room for four directions they are orthonormal and live
/// there; otherwise they are orthogonalized over the whole space as far as
/// the dimension allows.
fn modality_offsets(seed: u64, dim: usize, semantic_dim: usize) -> [Vec<f64>; 4] {
    let (lo, hi) = if dim - semantic_dim >= 4 { (semantic_dim, dim) } else { (0, dim) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(4);
    let mut out: [Vec<f64>; 4] = Default::default();
    for (m, slot) in out.iter_mut().enumerate() {
        let mut attempt = 0u64;
        let v = loop {
            let raw = gaussian_vector(math::mix64(seed ^ (0x6f66_6673 + ((m as u64) << 8) + attempt)), hi - lo);
            let mut v = alloc::vec![0.0; dim];
            v[lo..hi].copy_from_slice(&raw);
            if basis.len() < hi - lo {
                for b in &basis {
                    let p = math::dot(&v, b);
                    for (x, y) in v.iter_mut().zip(b) {
                        *x -= p * y;
                    }
                }
            }
            if let Ok(n) = normalize(&v) {
                break n;
            }
            attempt += 1;
        };
        if basis.len() < hi - lo {
            basis.push(v.clone());
        }
        *slot = v;
    }
    out
}
