//! Deterministic synthetic paired corpora.
//!
//! Every sample belongs to a semantic cluster. Its core sentence mixes cluster
//! tokens with sample-specific tokens, and the annotation restates the same
//! core (with some tokens swapped out, per `annotation_noise`). Samples may
//! also carry an off-topic filler sentence on either side, which is what
//! nucleus subsampling is expected to trim.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Modality;
use crate::math;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CorpusConfig {
    pub seed: u64,
    pub pools: usize,
    pub modalities: Vec<Modality>,
    /// Samples per modality.
    pub samples_per_modality: usize,
    pub clusters: usize,
    pub cluster_tokens: usize,
    pub unique_tokens: usize,
    /// Probability that each sample-specific annotation token is replaced.
    pub annotation_noise: f64,
    /// Probability of an off-topic sentence on the raw side, and separately
    /// on the annotation side.
    pub filler_rate: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            pools: 4,
            modalities: Modality::ALL.to_vec(),
            samples_per_modality: 500,
            clusters: 16,
            cluster_tokens: 2,
            unique_tokens: 4,
            annotation_noise: 0.0,
            filler_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorpusSample {
    pub sample_id: String,
    pub pool_id: String,
    pub modality: Modality,
    pub cluster: usize,
    pub raw: String,
    pub annotation: String,
}

const SYLLABLES: [&str; 16] =
    ["ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ze", "pa", "di", "go", "hu", "je", "bo", "fe"];

/// A pronounceable pseudo-word for `n` within namespace `tag`.
fn word(tag: &str, n: u64) -> String {
    let mut h = math::mix64(math::stream_key(n, tag));
    let mut w = String::new();
    for _ in 0..3 {
        w.push_str(SYLLABLES[(h & 15) as usize]);
        h >>= 4;
    }
    w.push_str(&format!("{}", n % 1000));
    w
}

fn sentence(tokens: &[String]) -> String {
    let mut s = tokens.join(" ");
    s.push('.');
    s
}

pub fn generate_corpus(config: &CorpusConfig) -> Vec<CorpusSample> {
    let mut out = Vec::with_capacity(config.modalities.len() * config.samples_per_modality);
    let pools = config.pools.max(1);
    let clusters = config.clusters.max(1);
    for (mi, &modality) in config.modalities.iter().enumerate() {
        for i in 0..config.samples_per_modality {
            let sample_id = format!("{}-{:05}", modality.as_str(), i);
            let mut rng = ChaCha8Rng::seed_from_u64(math::stream_key(config.seed, &sample_id));
            let cluster = rng.random_range(0..clusters);
            let mut core: Vec<String> = (0..config.cluster_tokens)
                .map(|_| word("cluster", (cluster * 64 + rng.random_range(0..8)) as u64))
                .collect();
            let unique: Vec<String> = (0..config.unique_tokens)
                .map(|j| word(&format!("s{}", config.seed), (((mi * 1_000_003 + i) * 16) + j) as u64))
                .collect();
            let mut ann_tokens = core.clone();
            for (j, u) in unique.iter().enumerate() {
                if rng.random_bool(config.annotation_noise.clamp(0.0, 1.0)) {
                    ann_tokens.push(word("noise", rng.random_range(0..100_000) + j as u64));
                } else {
                    ann_tokens.push(u.clone());
                }
            }
            core.extend(unique);
            let filler = |rng: &mut ChaCha8Rng| {
                let toks: Vec<String> = (0..4).map(|_| word("filler", rng.random_range(0..64))).collect();
                sentence(&toks)
            };
            let mut raw = sentence(&core);
            if rng.random_bool(config.filler_rate.clamp(0.0, 1.0)) {
                raw = format!("{raw} {}", filler(&mut rng));
            }
            let mut annotation = sentence(&ann_tokens);
            if rng.random_bool(config.filler_rate.clamp(0.0, 1.0)) {
                annotation = format!("{annotation} {}", filler(&mut rng));
            }
            out.push(CorpusSample {
                pool_id: format!("pool-{}", (mi * config.samples_per_modality + i) % pools),
                sample_id,
                modality,
                cluster,
                raw,
                annotation,
            });
        }
    }
    out
}
