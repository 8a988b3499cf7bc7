//! Synthetic benchmark corpora and matching engine configurations.

use nucleus_core::corpus::{generate_corpus, CorpusConfig};
use nucleus_core::projection::LossWeights;
use nucleus_core::sns::PairedSample;
use nucleus_core::Modality;
use serde::{Deserialize, Serialize};

use crate::config::{Backend, EngineConfig, ExpertConfig, LossSection, SyntheticSettings};
use crate::dataset::Record;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub corpus: CorpusConfig,
    pub experts: usize,
    pub dim: usize,
    pub semantic_dim: usize,
    pub gap_magnitude: f64,
    pub noise_sigma: f64,
    pub token_seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            experts: 3,
            dim: 32,
            semantic_dim: 28,
            gap_magnitude: 1.0,
            noise_sigma: 0.02,
            token_seed: 42,
        }
    }
}

impl SynthOptions {
    pub fn with_seed(seed: u64) -> Self {
        let mut o = Self::default();
        o.corpus.seed = seed;
        o
    }
}

pub fn records(corpus: &CorpusConfig) -> Vec<Record> {
    generate_corpus(corpus)
        .into_iter()
        .map(|s| Record {
            pair: PairedSample::from_text(s.sample_id, s.pool_id, s.modality, &s.raw, &s.annotation),
            media_ref: None,
        })
        .collect()
}

/// Three (or `experts`) synthetic experts that agree on token semantics and
/// differ in modality offsets and noise, trained with the gap-collapse
/// weights. The first expert is the anchor and gating expert.
pub fn engine_config(opts: &SynthOptions) -> EngineConfig {
    let seed = opts.corpus.seed;
    let experts = (0..opts.experts as u64)
        .map(|k| ExpertConfig {
            id: format!("expert{k}"),
            dim: opts.dim,
            modalities: Modality::ALL.to_vec(),
            backend: Backend::Synthetic(SyntheticSettings {
                seed: seed.wrapping_mul(10).wrapping_add(k),
                token_seed: opts.token_seed,
                semantic_dim: opts.semantic_dim,
                gap_magnitude: opts.gap_magnitude,
                noise_sigma: opts.noise_sigma,
            }),
        })
        .collect();
    let mut cfg = EngineConfig { experts, ..Default::default() };
    cfg.loss = LossSection::from_weights(LossWeights::GAP_COLLAPSE);
    cfg.train.seed = seed;
    cfg.curation.seed = seed;
    cfg.curation.n = (opts.corpus.samples_per_modality * opts.corpus.modalities.len() / 4).max(1);
    cfg.curation.query = generate_corpus(&CorpusConfig { samples_per_modality: 1, ..opts.corpus.clone() })
        .into_iter()
        .next()
        .map(|s| s.annotation);
    cfg
}
