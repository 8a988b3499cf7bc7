//! Blend construction: query-driven top-n in the fused space, uniform and
//! stratified random baselines, and the annotation-only
//! filter → dedup → rank pipeline.
//!
//! Pool members are described by [`PoolItem`]; embeddings travel alongside as
//! a parallel slice so the sampling strategies never need them.

mod dedup;
mod filter;
mod stats;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::Modality;
use crate::math;
use crate::retrieval::{IndexSide, RetrievalError, RetrievalIndex};

pub use dedup::{kmeans, semantic_dedup, KMeans, KMEANS_MAX_ITER, KMEANS_TOLERANCE};
pub use filter::{heuristic_filter, FilterConfig, FilterReport, FilterRule};
pub use stats::{blend_stats, pca_2d, BlendStats, PlotPoint, Share};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurationError {
    #[error("the pool is empty")]
    EmptyPool,
    #[error("query text is empty")]
    EmptyQuery,
    #[error("requested {n} samples from a pool of {pool}")]
    NTooLarge { n: usize, pool: usize },
    #[error("pool '{pool_id}' has {available} samples, quota is {quota}")]
    PoolTooSmall { pool_id: String, quota: usize, available: usize },
    #[error("k = {k} exceeds the {count} samples")]
    KTooLarge { k: usize, count: usize },
    #[error("unknown sample id '{0}'")]
    UnknownId(String),
    #[error("duplicate sample id '{0}'")]
    DuplicateId(String),
    #[error("{0} items but {1} embeddings")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Strategy {
    Projection,
    Uniform,
    Stratified,
    Traditional,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Strategy::Projection, Strategy::Uniform, Strategy::Stratified, Strategy::Traditional];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Projection => "projection",
            Strategy::Uniform => "uniform",
            Strategy::Stratified => "stratified",
            Strategy::Traditional => "traditional",
        }
    }
}

impl core::str::FromStr for Strategy {
    type Err = CurationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| CurationError::InvalidConfig(format!("unknown strategy '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PoolItem {
    pub sample_id: String,
    pub pool_id: String,
    pub modality: Modality,
}

impl PoolItem {
    pub fn new(sample_id: impl Into<String>, pool_id: impl Into<String>, modality: Modality) -> Self {
        Self { sample_id: sample_id.into(), pool_id: pool_id.into(), modality }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Selected {
    pub sample_id: String,
    pub pool_id: String,
    pub modality: Modality,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Blend {
    pub strategy: Strategy,
    /// Requested size.
    pub n: usize,
    pub selected: Vec<Selected>,
    pub per_pool: BTreeMap<String, usize>,
    pub per_modality: BTreeMap<Modality, usize>,
    pub query: Option<String>,
    pub seed: Option<u64>,
    pub warnings: Vec<String>,
}

impl Blend {
    fn assemble(strategy: Strategy, n: usize, selected: Vec<Selected>) -> Self {
        let mut per_pool = BTreeMap::new();
        let mut per_modality = BTreeMap::new();
        for s in &selected {
            *per_pool.entry(s.pool_id.clone()).or_insert(0) += 1;
            *per_modality.entry(s.modality).or_insert(0) += 1;
        }
        let mut warnings = Vec::new();
        if selected.len() < n {
            warnings.push(format!("selected {} of the {} requested samples", selected.len(), n));
        }
        Self { strategy, n, selected, per_pool, per_modality, query: None, seed: None, warnings }
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.selected.iter().map(|s| s.sample_id.as_str())
    }
}

fn pick(item: &PoolItem, score: Option<f64>) -> Selected {
    Selected { sample_id: item.sample_id.clone(), pool_id: item.pool_id.clone(), modality: item.modality, score }
}

fn check_unique(items: &[PoolItem]) -> Result<(), CurationError> {
    let mut seen = alloc::collections::BTreeSet::new();
    for it in items {
        if !seen.insert(it.sample_id.as_str()) {
            return Err(CurationError::DuplicateId(it.sample_id.clone()));
        }
    }
    Ok(())
}

/// Indices of `items` in ascending id order, so results never depend on the
/// order the pool was supplied in.
fn id_order(items: &[PoolItem]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|a, b| items[*a].sample_id.cmp(&items[*b].sample_id));
    order
}

fn rank_against<V: AsRef<[f64]>>(
    query_embedding: &[f64],
    items: &[PoolItem],
    embeddings: &[V],
    candidates: &[usize],
    n: usize,
) -> Result<Vec<Selected>, CurationError> {
    let mut index = RetrievalIndex::new(IndexSide::RawFused, query_embedding.len());
    let mut by_id = BTreeMap::new();
    for &i in candidates {
        index.insert(items[i].sample_id.clone(), embeddings[i].as_ref().to_vec())?;
        by_id.insert(items[i].sample_id.as_str(), i);
    }
    Ok(index
        .top_k(query_embedding, n)?
        .into_iter()
        .map(|h| pick(&items[by_id[h.sample_id.as_str()]], Some(h.score)))
        .collect())
}

/// Top `n` pool samples by cosine similarity of their fused embedding to the
/// query's anchor-side embedding.
pub fn curate_topn<V: AsRef<[f64]>>(
    query: &str,
    query_embedding: &[f64],
    items: &[PoolItem],
    fused: &[V],
    n: usize,
) -> Result<Blend, CurationError> {
    if query.trim().is_empty() {
        return Err(CurationError::EmptyQuery);
    }
    if items.is_empty() {
        return Err(CurationError::EmptyPool);
    }
    if items.len() != fused.len() {
        return Err(CurationError::LengthMismatch(items.len(), fused.len()));
    }
    let all: Vec<usize> = (0..items.len()).collect();
    let selected = rank_against(query_embedding, items, fused, &all, n)?;
    let mut blend = Blend::assemble(Strategy::Projection, n, selected);
    blend.query = Some(query.into());
    Ok(blend)
}

/// `n` samples drawn uniformly without replacement; output is id-sorted.
pub fn sample_uniform(items: &[PoolItem], n: usize, seed: u64) -> Result<Blend, CurationError> {
    if n > items.len() {
        return Err(CurationError::NTooLarge { n, pool: items.len() });
    }
    check_unique(items)?;
    let order = id_order(items);
    let mut rng = ChaCha8Rng::seed_from_u64(math::mix64(seed));
    let mut chosen: Vec<usize> =
        rand::seq::index::sample(&mut rng, items.len(), n).into_iter().map(|i| order[i]).collect();
    chosen.sort_by(|a, b| items[*a].sample_id.cmp(&items[*b].sample_id));
    let mut blend = Blend::assemble(Strategy::Uniform, n, chosen.iter().map(|&i| pick(&items[i], None)).collect());
    blend.seed = Some(seed);
    Ok(blend)
}

/// Per-pool quotas for an `n`-sample stratified draw: `n / P` each, with the
/// remainder handed one by one to the largest pools (ties by pool id).
pub fn stratified_quotas(pool_sizes: &BTreeMap<String, usize>, n: usize) -> BTreeMap<String, usize> {
    let p = pool_sizes.len();
    if p == 0 {
        return BTreeMap::new();
    }
    let mut quotas: BTreeMap<String, usize> = pool_sizes.keys().map(|k| (k.clone(), n / p)).collect();
    let mut by_size: Vec<(&String, &usize)> = pool_sizes.iter().collect();
    by_size.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    for (id, _) in by_size.into_iter().take(n % p) {
        *quotas.get_mut(id).expect("pool present") += 1;
    }
    quotas
}

/// Equal per-pool quotas, uniform within each pool.
pub fn sample_stratified(items: &[PoolItem], n: usize, seed: u64) -> Result<Blend, CurationError> {
    if items.is_empty() {
        return Err(CurationError::EmptyPool);
    }
    check_unique(items)?;
    let mut pools: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for i in id_order(items) {
        pools.entry(items[i].pool_id.clone()).or_default().push(i);
    }
    let sizes = pools.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let quotas = stratified_quotas(&sizes, n);
    let mut selected = Vec::with_capacity(n);
    for (pool_id, members) in &pools {
        let quota = quotas[pool_id];
        if quota > members.len() {
            return Err(CurationError::PoolTooSmall { pool_id: pool_id.clone(), quota, available: members.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(math::stream_key(seed, pool_id));
        let mut chosen: Vec<usize> =
            rand::seq::index::sample(&mut rng, members.len(), quota).into_iter().map(|j| members[j]).collect();
        chosen.sort_by(|a, b| items[*a].sample_id.cmp(&items[*b].sample_id));
        selected.extend(chosen.iter().map(|&i| pick(&items[i], None)));
    }
    let mut blend = Blend::assemble(Strategy::Stratified, n, selected);
    blend.seed = Some(seed);
    Ok(blend)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PipelineConfig {
    pub filter: FilterConfig,
    pub k_clusters: usize,
    /// Cosine-distance ceiling for near-duplicates.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { filter: FilterConfig::default(), k_clusters: 100, epsilon: 0.05, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub blend: Blend,
    pub reports: Vec<FilterReport>,
    /// Ids surviving the filters.
    pub filtered: usize,
    /// Ids surviving dedup.
    pub deduplicated: usize,
}

/// Heuristic filters, then semantic dedup, then cosine ranking of annotation
/// embeddings against the query embedding from the same encoder.
///
/// `annotations[i]` and `embeddings[i]` belong to `items[i]`. When fewer than
/// `k_clusters` samples survive the filters, k drops to the survivor count.
pub fn traditional_pipeline<V: AsRef<[f64]>>(
    query: &str,
    query_embedding: &[f64],
    items: &[PoolItem],
    annotations: &[&str],
    embeddings: &[V],
    n: usize,
    config: &PipelineConfig,
) -> Result<PipelineOutcome, CurationError> {
    if query.trim().is_empty() {
        return Err(CurationError::EmptyQuery);
    }
    if items.len() != embeddings.len() || items.len() != annotations.len() {
        return Err(CurationError::LengthMismatch(items.len(), embeddings.len()));
    }
    check_unique(items)?;
    let reports: Vec<FilterReport> =
        items.iter().zip(annotations).map(|(it, text)| heuristic_filter(&it.sample_id, text, &config.filter)).collect();
    let survivors: Vec<usize> = (0..items.len()).filter(|&i| reports[i].passed).collect();
    let mut warnings = Vec::new();
    let kept: Vec<usize> = if survivors.is_empty() {
        warnings.push(String::from("no samples passed the heuristic filters"));
        Vec::new()
    } else {
        let k = config.k_clusters.min(survivors.len());
        if k < config.k_clusters {
            warnings.push(format!("k reduced from {} to {} survivors", config.k_clusters, k));
        }
        let ids: Vec<&str> = survivors.iter().map(|&i| items[i].sample_id.as_str()).collect();
        let vecs: Vec<&[f64]> = survivors.iter().map(|&i| embeddings[i].as_ref()).collect();
        let keep = semantic_dedup(&ids, &vecs, k, config.epsilon, config.seed)?;
        let keep: alloc::collections::BTreeSet<&str> = keep.iter().map(String::as_str).collect();
        survivors.iter().copied().filter(|&i| keep.contains(items[i].sample_id.as_str())).collect()
    };
    let selected =
        if kept.is_empty() { Vec::new() } else { rank_against(query_embedding, items, embeddings, &kept, n)? };
    let mut blend = Blend::assemble(Strategy::Traditional, n, selected);
    warnings.append(&mut blend.warnings);
    blend.warnings = warnings;
    blend.query = Some(query.into());
    blend.seed = Some(config.seed);
    Ok(PipelineOutcome { filtered: survivors.len(), deduplicated: kept.len(), blend, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn pool(entries: &[(&str, &str)]) -> Vec<PoolItem> {
        entries.iter().map(|(id, p)| PoolItem::new(*id, *p, Modality::Image)).collect()
    }

    #[test]
    fn topn_ranks_by_similarity() {
        let items = pool(&[("a", "p"), ("b", "p"), ("c", "p")]);
        let s = |c: f64| vec![c, libm::sqrt(1.0 - c * c)];
        let fused = [s(0.5), s(0.9), s(0.1)];
        let blend = curate_topn("q", &[1.0, 0.0], &items, &fused, 2).unwrap();
        assert_eq!(blend.ids().collect::<Vec<_>>(), vec!["b", "a"]);
        assert_eq!(blend.per_pool["p"], 2);
        assert!(blend.warnings.is_empty());
        let all = curate_topn("q", &[1.0, 0.0], &items, &fused, 3).unwrap();
        assert_eq!(all.ids().collect::<Vec<_>>(), vec!["b", "a", "c"]);
        let over = curate_topn("q", &[1.0, 0.0], &items, &fused, 5).unwrap();
        assert_eq!(over.len(), 3);
        assert_eq!(over.warnings.len(), 1);
    }

    #[test]
    fn topn_errors() {
        let fused: [Vec<f64>; 0] = [];
        assert_eq!(curate_topn("q", &[1.0], &[], &fused, 1), Err(CurationError::EmptyPool));
        assert_eq!(curate_topn(" ", &[1.0], &[], &fused, 1), Err(CurationError::EmptyQuery));
    }

    #[test]
    fn uniform_examples() {
        let items = pool(&[("a", "p"), ("b", "p"), ("c", "q"), ("d", "q")]);
        let a = sample_uniform(&items, 2, 9).unwrap();
        assert_eq!(a, sample_uniform(&items, 2, 9).unwrap());
        assert_eq!(sample_uniform(&items, 4, 1).unwrap().len(), 4);
        assert_eq!(sample_uniform(&items, 5, 1), Err(CurationError::NTooLarge { n: 5, pool: 4 }));
        let mut rev = items.clone();
        rev.reverse();
        assert_eq!(a.selected, sample_uniform(&rev, 2, 9).unwrap().selected);
    }

    #[test]
    fn stratified_quota_policy() {
        let sizes: BTreeMap<String, usize> =
            [("x", 3), ("y", 9), ("z", 5)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let q = stratified_quotas(&sizes, 4);
        assert_eq!((q["x"], q["y"], q["z"]), (1, 2, 1));
        let q = stratified_quotas(&sizes, 5);
        assert_eq!((q["x"], q["y"], q["z"]), (1, 2, 2));
        let two: BTreeMap<String, usize> = [("a", 2), ("b", 2)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        assert_eq!(stratified_quotas(&two, 4).values().copied().collect::<Vec<_>>(), vec![2, 2]);
    }

    #[test]
    fn stratified_too_small() {
        let items = pool(&[("a", "p"), ("b", "q"), ("c", "q"), ("d", "q")]);
        assert_eq!(
            sample_stratified(&items, 4, 0),
            Err(CurationError::PoolTooSmall { pool_id: "p".into(), quota: 2, available: 1 })
        );
        let b = sample_stratified(&items, 2, 0).unwrap();
        assert_eq!(b.per_pool["p"], 1);
        assert_eq!(b.per_pool["q"], 1);
    }

    #[test]
    fn pipeline_with_everything_filtered() {
        let items = pool(&[("a", "p"), ("b", "p")]);
        let emb = [vec![1.0, 0.0], vec![0.0, 1.0]];
        let out =
            traditional_pipeline("q", &[1.0, 0.0], &items, &["", "!!!!"], &emb, 1, &PipelineConfig::default()).unwrap();
        assert!(out.blend.is_empty());
        assert!(!out.blend.warnings.is_empty());
        assert_eq!(out.filtered, 0);
    }

    #[test]
    fn pipeline_equals_topn_without_duplicates() {
        let items = pool(&[("a", "p"), ("b", "p"), ("c", "q")]);
        let emb = [vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]];
        let q = [0.8, 0.6];
        let texts = ["a cat", "a dog", "a bird"];
        let cfg = PipelineConfig { k_clusters: 2, ..Default::default() };
        let out = traditional_pipeline("q", &q, &items, &texts, &emb, 2, &cfg).unwrap();
        let plain = curate_topn("q", &q, &items, &emb, 2).unwrap();
        assert_eq!(out.blend.selected, plain.selected);
        assert_eq!(out.blend.warnings.len(), 0);
    }
}
