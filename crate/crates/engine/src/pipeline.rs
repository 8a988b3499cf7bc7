//! Experts built from configuration, cache-backed corpus embedding and the
//! fused space.

use std::path::Path;

use nucleus_core::experts::{EmbedItem, Expert, ExpertDescriptor, ExpertKind, SyntheticExpert, SyntheticExpertConfig};
use nucleus_core::projection::{ProjectionModel, TrainSample};
use nucleus_core::sns::{ContentDescriber, Describer};
use nucleus_core::Modality;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cache::EmbeddingCache;
use crate::config::{Backend, EngineConfig, ExpertConfig};
use crate::dataset::Record;
use crate::error::{EngineError, Result};
use crate::remote::{RemoteDescriber, RemoteExpert};

pub type SharedExpert = Box<dyn Expert + Send + Sync>;
pub type SharedDescriber = Box<dyn Describer + Send + Sync>;

/// Items per call when embedding locally in parallel.
const LOCAL_CHUNK: usize = 256;

pub fn build_expert(cfg: &ExpertConfig, jobs: usize) -> Result<SharedExpert> {
    Ok(match &cfg.backend {
        Backend::Synthetic(s) => {
            let config = SyntheticExpertConfig {
                seed: s.seed,
                token_seed: s.token_seed,
                dim: cfg.dim,
                semantic_dim: s.semantic_dim,
                gap_magnitude: s.gap_magnitude,
                noise_sigma: s.noise_sigma,
            };
            Box::new(SyntheticExpert::new(cfg.id.clone(), config)?.with_modalities(cfg.modalities.clone()))
        }
        Backend::Remote(r) => {
            let descriptor = ExpertDescriptor {
                expert_id: cfg.id.clone(),
                kind: ExpertKind::Remote,
                dim: cfg.dim,
                supported_modalities: cfg.modalities.clone(),
            };
            Box::new(RemoteExpert::new(descriptor, r.clone(), jobs)?)
        }
    })
}

pub fn build_experts(cfg: &EngineConfig, jobs: usize) -> Result<Vec<SharedExpert>> {
    cfg.experts.iter().map(|e| build_expert(e, jobs)).collect()
}

pub fn build_describer(cfg: &EngineConfig) -> SharedDescriber {
    match &cfg.describer {
        Some(settings) => Box::new(RemoteDescriber::new(settings.clone())),
        None => Box::new(ContentDescriber),
    }
}

/// First 16 hex digits of the SHA-256 of `content`.
pub fn content_hash(content: &str) -> String {
    let digest = Sha256::digest(content.as_bytes());
    hex::encode(&digest[..8])
}

/// Embeddings of every record under every expert, in record order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub expert_ids: Vec<String>,
    /// `raw[k][i]`: expert `k`, record `i`.
    pub raw: Vec<Vec<Vec<f64>>>,
    pub annotation: Vec<Vec<Vec<f64>>>,
    pub modalities: Vec<Modality>,
    pub sample_ids: Vec<String>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    /// Concatenated raw-side expert embeddings of record `i`.
    pub fn input(&self, i: usize) -> Vec<f64> {
        self.raw.iter().flat_map(|e| e[i].iter().copied()).collect()
    }

    pub fn train_sample(&self, i: usize, anchor: usize) -> TrainSample {
        TrainSample { input: self.input(i), anchor: self.annotation[anchor][i].clone(), modality: self.modalities[i] }
    }

    /// Fused embeddings of the records at `indices`.
    pub fn project(&self, model: &ProjectionModel, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        indices.par_iter().map(|&i| model.project(&self.input(i)).map_err(EngineError::from)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmbedStats {
    pub expert_id: String,
    pub cache_file: String,
    pub requested: usize,
    pub computed: usize,
    pub described: usize,
}

struct Pending {
    key: String,
    record: usize,
    modality: Modality,
    content: String,
    describe: bool,
}

/// Cache key of a raw side: the sample id plus a hash of what was embedded,
/// so trimmed variants of the same sample never collide.
fn raw_key(record: &Record, described: bool) -> String {
    let tag = if described { "raw-described" } else { "raw" };
    format!("{}::{tag}::{}", record.pair.sample_id, content_hash(&record.pair.raw_content()))
}

fn annotation_key(record: &Record) -> String {
    format!("{}::annotation::{}", record.pair.sample_id, content_hash(&record.pair.annotation_text()))
}

pub fn cache_path(cache_dir: &Path, expert_id: &str) -> std::path::PathBuf {
    cache_dir.join(format!("{expert_id}.eec"))
}

fn embed_items(expert: &SharedExpert, local: bool, items: &[EmbedItem]) -> Result<Vec<nucleus_core::Embedding>> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    if local {
        let parts: Vec<Vec<_>> =
            items.par_chunks(LOCAL_CHUNK).map(|c| expert.embed_batch(c)).collect::<Result<_, _>>()?;
        Ok(parts.into_iter().flatten().collect())
    } else {
        Ok(expert.embed_batch(items)?)
    }
}

/// Embeds both sides of every record with every expert. Vectors always come
/// back through the cache, so fresh and cached runs see identical (f32
/// storage precision) values.
pub fn embed_records(
    cfg: &EngineConfig,
    experts: &[SharedExpert],
    describer: &(dyn Describer + Send + Sync),
    records: &[Record],
) -> Result<(EmbeddingTable, Vec<EmbedStats>)> {
    let mut table = EmbeddingTable {
        expert_ids: experts.iter().map(|e| e.id().to_string()).collect(),
        raw: Vec::with_capacity(experts.len()),
        annotation: Vec::with_capacity(experts.len()),
        modalities: records.iter().map(|r| r.pair.raw_modality).collect(),
        sample_ids: records.iter().map(|r| r.pair.sample_id.clone()).collect(),
    };
    let mut stats = Vec::with_capacity(experts.len());
    for (k, expert) in experts.iter().enumerate() {
        let local = matches!(cfg.experts[k].backend, Backend::Synthetic(_));
        let path = cache_path(&cfg.cache_dir, expert.id());
        let cache = EmbeddingCache::open(&path, expert.dim())?;
        let mut raw_keys = Vec::with_capacity(records.len());
        let mut ann_keys = Vec::with_capacity(records.len());
        let mut pending = Vec::new();
        for (i, r) in records.iter().enumerate() {
            let m = r.pair.raw_modality;
            let describe = !expert.descriptor().supports(m);
            let rk = raw_key(r, describe);
            if !cache.contains(&rk, expert.id()) {
                let (modality, content) =
                    if describe { (Modality::Text, String::new()) } else { (m, r.pair.raw_content()) };
                pending.push(Pending { key: rk.clone(), record: i, modality, content, describe });
            }
            raw_keys.push(rk);
            let ak = annotation_key(r);
            if !cache.contains(&ak, expert.id()) {
                pending.push(Pending {
                    key: ak.clone(),
                    record: i,
                    modality: Modality::Text,
                    content: r.pair.annotation_text(),
                    describe: false,
                });
            }
            ann_keys.push(ak);
        }
        let described = pending.iter().filter(|p| p.describe).count();
        let descriptions: Vec<Option<String>> = pending
            .par_iter()
            .map(|p| {
                if !p.describe {
                    return Ok(None);
                }
                let pair = &records[p.record].pair;
                describer
                    .describe(&pair.sample_id, pair.raw_modality, &pair.raw)
                    .map(Some)
                    .map_err(|e| EngineError::Remote(format!("describer: {e}")))
            })
            .collect::<Result<_>>()?;
        let items: Vec<EmbedItem> = pending
            .iter()
            .zip(descriptions)
            .map(|(p, d)| EmbedItem::new(p.key.clone(), p.modality, d.unwrap_or_else(|| p.content.clone())))
            .collect();
        let fresh = embed_items(expert, local, &items)?;
        cache.put_all(&fresh)?;
        let fetch = |key: &String| {
            cache
                .get(key, expert.id())
                .map(|e| e.into_values())
                .ok_or_else(|| EngineError::Runtime(format!("embedding '{key}' missing from {}", path.display())))
        };
        table.raw.push(raw_keys.iter().map(fetch).collect::<Result<_>>()?);
        table.annotation.push(ann_keys.iter().map(fetch).collect::<Result<_>>()?);
        stats.push(EmbedStats {
            expert_id: expert.id().to_string(),
            cache_file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            requested: 2 * records.len(),
            computed: items.len(),
            described,
        });
    }
    Ok((table, stats))
}

/// Embeds one query text with `expert`.
pub fn embed_query(expert: &SharedExpert, query: &str) -> Result<Vec<f64>> {
    let item = EmbedItem::new(format!("query::{}", content_hash(query)), Modality::Text, query);
    Ok(expert.embed(&item)?.into_values())
}

/// Indices used for training and for evaluation under the config's holdout.
pub fn split(cfg: &EngineConfig, n: usize) -> (Vec<usize>, Vec<usize>) {
    if cfg.train.holdout_every == 0 {
        let all: Vec<usize> = (0..n).collect();
        return (all.clone(), all);
    }
    (0..n).partition(|&i| !cfg.train.is_holdout(i))
}
