//! Engine configuration (TOML) with environment overrides for endpoints and
//! credentials.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use nucleus_core::curation::{FilterConfig, PipelineConfig, Strategy};
use nucleus_core::projection::{LossWeights, Negatives, Objective, Optimizer, TaskOptions, TrainConfig};
use nucleus_core::sns::{Direction, PerModality, SnsConfig};
use nucleus_core::Modality;
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::remote::RemoteSettings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSettings {
    pub seed: u64,
    pub token_seed: u64,
    pub semantic_dim: usize,
    pub gap_magnitude: f64,
    pub noise_sigma: f64,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        Self { seed: 0, token_seed: 42, semantic_dim: 28, gap_magnitude: 1.0, noise_sigma: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Backend {
    Synthetic(SyntheticSettings),
    Remote(RemoteSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub id: String,
    pub dim: usize,
    /// Modalities the expert embeds directly. Raw data of other modalities is
    /// described first and embedded as text.
    #[serde(default = "all_modalities")]
    pub modalities: Vec<Modality>,
    #[serde(flatten)]
    pub backend: Backend,
}

fn all_modalities() -> Vec<Modality> {
    Modality::ALL.to_vec()
}

/// A threshold for every modality, one shared value, or `"auto"` (the
/// midpoint of each modality's similarity band on the corpus).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Tau {
    Uniform(f64),
    PerModality(PerModality<f64>),
    Named(String),
}

impl Tau {
    pub fn is_auto(&self) -> bool {
        matches!(self, Tau::Named(s) if s == "auto")
    }

    pub fn fixed(&self) -> Option<PerModality<f64>> {
        match self {
            Tau::Uniform(v) => Some(PerModality::splat(*v)),
            Tau::PerModality(p) => Some(*p),
            Tau::Named(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnsSection {
    pub direction: Direction,
    pub tau_alpha: Tau,
    pub tau_beta: Tau,
    pub rho: f64,
    pub reinject: bool,
}

impl Default for SnsSection {
    fn default() -> Self {
        Self {
            direction: Direction::Bidirectional,
            tau_alpha: Tau::Named("auto".into()),
            tau_beta: Tau::Named("auto".into()),
            rho: 1.0,
            reinject: true,
        }
    }
}

impl SnsSection {
    /// Resolves `"auto"` thresholds against `calibrated` (alpha, beta).
    pub fn resolve(&self, calibrated: Option<(PerModality<f64>, PerModality<f64>)>) -> Result<SnsConfig> {
        let pick = |tau: &Tau, cal: Option<PerModality<f64>>| {
            tau.fixed().or(cal).ok_or_else(|| EngineError::Validation("threshold needs calibration".into()))
        };
        let cfg = SnsConfig {
            direction: self.direction,
            tau_alpha: pick(&self.tau_alpha, calibrated.map(|c| c.0))?,
            tau_beta: pick(&self.tau_beta, calibrated.map(|c| c.1))?,
            rho: self.rho,
            reinject: self.reinject,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn needs_calibration(&self) -> bool {
        self.tau_alpha.is_auto() || self.tau_beta.is_auto()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSection {
    pub task: f64,
    pub cluster: f64,
    pub scale: f64,
    pub temperature: f64,
    pub negatives: Negatives,
    pub symmetric: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            task: w.task,
            cluster: w.cluster,
            scale: w.scale,
            temperature: w.temperature,
            negatives: Negatives::default(),
            symmetric: false,
        }
    }
}

impl LossSection {
    pub fn from_weights(w: LossWeights) -> Self {
        Self { task: w.task, cluster: w.cluster, scale: w.scale, temperature: w.temperature, ..Default::default() }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            weights: LossWeights {
                task: self.task,
                cluster: self.cluster,
                scale: self.scale,
                temperature: self.temperature,
            },
            task: TaskOptions { negatives: self.negatives, symmetric: self.symmetric },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub layers: usize,
    /// Every `holdout_every`-th sample (in dataset order) is held out for
    /// evaluation; 0 trains and evaluates on everything.
    pub holdout_every: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            layers: 2,
            holdout_every: 5,
            batch_size: t.batch_size,
            steps: t.steps,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            seed: t.seed,
            shuffle: t.shuffle,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            steps: self.steps,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }

    pub fn is_holdout(&self, index: usize) -> bool {
        self.holdout_every > 0 && index.is_multiple_of(self.holdout_every)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurationSection {
    pub strategy: Strategy,
    pub n: usize,
    pub query: Option<String>,
    pub k_clusters: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub filter: FilterConfig,
    /// Encoder for the traditional pipeline; the anchor expert when unset.
    pub pipeline_expert: Option<String>,
}

impl Default for CurationSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            strategy: Strategy::Projection,
            n: 1000,
            query: None,
            k_clusters: p.k_clusters,
            epsilon: p.epsilon,
            seed: 0,
            filter: p.filter,
            pipeline_expert: None,
        }
    }
}

impl CurationSection {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            filter: self.filter.clone(),
            k_clusters: self.k_clusters,
            epsilon: self.epsilon,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub experts: Vec<ExpertConfig>,
    /// Expert whose annotation embeddings are the training anchors and whose
    /// text embeddings serve as queries. Defaults to the first expert.
    pub anchor_expert: Option<String>,
    /// Expert scoring nucleus candidates. Defaults to the first expert.
    pub gating_expert: Option<String>,
    /// Remote describer for non-text raw data. Without one, the raw
    /// components' own content stands in as the description.
    pub describer: Option<RemoteSettings>,
    pub sns: SnsSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub curation: CurationSection,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            experts: Vec::new(),
            anchor_expert: None,
            gating_expert: None,
            describer: None,
            sns: SnsSection::default(),
            loss: LossSection::default(),
            train: TrainSection::default(),
            curation: CurationSection::default(),
            cache_dir: PathBuf::from("cache"),
            output_dir: PathBuf::from("out"),
        }
    }
}

/// `id` upper-cased with every non-alphanumeric character replaced by `_`.
pub fn env_key(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' }).collect()
}

impl EngineConfig {
    /// Reads `path`, applies environment overrides, resolves relative
    /// directories against the file's directory and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
        let mut cfg: EngineConfig =
            toml::from_str(&text).map_err(|e| EngineError::Validation(format!("{}: {e}", path.display())))?;
        cfg.apply_env(|k| std::env::var(k).ok());
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.cache_dir.is_relative() {
            cfg.cache_dir = base.join(&cfg.cache_dir);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| EngineError::Runtime(format!("serializing config: {e}")))
    }

    /// `NUCLEUS_EXPERT_<ID>_ENDPOINT`, `NUCLEUS_EXPERT_<ID>_API_KEY`,
    /// `NUCLEUS_DESCRIBER_ENDPOINT` and `NUCLEUS_DESCRIBER_API_KEY`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for e in &mut self.experts {
            if let Backend::Remote(r) = &mut e.backend {
                let key = env_key(&e.id);
                if let Some(v) = lookup(&format!("NUCLEUS_EXPERT_{key}_ENDPOINT")) {
                    r.endpoint = v;
                }
                if let Some(v) = lookup(&format!("NUCLEUS_EXPERT_{key}_API_KEY")) {
                    r.api_key = Some(v);
                }
            }
        }
        let endpoint = lookup("NUCLEUS_DESCRIBER_ENDPOINT");
        if endpoint.is_some() && self.describer.is_none() {
            self.describer = Some(RemoteSettings::default());
        }
        if let Some(d) = &mut self.describer {
            if let Some(v) = endpoint {
                d.endpoint = v;
            }
            if let Some(v) = lookup("NUCLEUS_DESCRIBER_API_KEY") {
                d.api_key = Some(v);
            }
        }
    }

    /// The configuration with credentials blanked, for manifests.
    pub fn redacted(&self) -> Self {
        let mut c = self.clone();
        for e in &mut c.experts {
            if let Backend::Remote(r) = &mut e.backend {
                if r.api_key.is_some() {
                    r.api_key = Some("<redacted>".into());
                }
            }
        }
        if let Some(d) = &mut c.describer {
            if d.api_key.is_some() {
                d.api_key = Some("<redacted>".into());
            }
        }
        c
    }

    pub fn dim(&self) -> usize {
        self.experts.first().map_or(0, |e| e.dim)
    }

    pub fn expert_index(&self, id: &str) -> Option<usize> {
        self.experts.iter().position(|e| e.id == id)
    }

    pub fn anchor_index(&self) -> usize {
        self.anchor_expert.as_deref().and_then(|id| self.expert_index(id)).unwrap_or(0)
    }

    pub fn gating_index(&self) -> usize {
        self.gating_expert.as_deref().and_then(|id| self.expert_index(id)).unwrap_or(0)
    }

    pub fn pipeline_index(&self) -> usize {
        self.curation
            .pipeline_expert
            .as_deref()
            .and_then(|id| self.expert_index(id))
            .unwrap_or_else(|| self.anchor_index())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EngineError::Validation(m));
        if self.experts.is_empty() {
            return bad("no experts configured".into());
        }
        let mut ids = BTreeSet::new();
        for e in &self.experts {
            if e.id.is_empty() || !e.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return bad(format!("expert id '{}' must be non-empty ASCII letters, digits, '-' or '_'", e.id));
            }
            if !ids.insert(e.id.as_str()) {
                return bad(format!("duplicate expert id '{}'", e.id));
            }
            if e.dim < 2 {
                return bad(format!("expert '{}' has dim {} (< 2)", e.id, e.dim));
            }
            if e.dim != self.dim() {
                return bad(format!(
                    "expert '{}' has dim {}, but '{}' has {}",
                    e.id,
                    e.dim,
                    self.experts[0].id,
                    self.dim()
                ));
            }
            if e.modalities.is_empty() {
                return bad(format!("expert '{}' supports no modality", e.id));
            }
            match &e.backend {
                Backend::Synthetic(s) => {
                    if s.semantic_dim == 0 || s.semantic_dim > e.dim {
                        return bad(format!("expert '{}': semantic_dim must be in 1..={}", e.id, e.dim));
                    }
                    if s.gap_magnitude.is_nan()
                        || s.noise_sigma.is_nan()
                        || s.gap_magnitude < 0.0
                        || s.noise_sigma < 0.0
                    {
                        return bad(format!("expert '{}': gap_magnitude and noise_sigma must be >= 0", e.id));
                    }
                }
                Backend::Remote(r) => {
                    if r.endpoint.is_empty() {
                        return bad(format!(
                            "expert '{}' has no endpoint (set it in the config or NUCLEUS_EXPERT_{}_ENDPOINT)",
                            e.id,
                            env_key(&e.id)
                        ));
                    }
                }
            }
            if !e.modalities.contains(&Modality::Text) {
                return bad(format!("expert '{}' must embed text (annotations are text)", e.id));
            }
        }
        for (name, id) in [
            ("anchor_expert", &self.anchor_expert),
            ("gating_expert", &self.gating_expert),
            ("curation.pipeline_expert", &self.curation.pipeline_expert),
        ] {
            if let Some(id) = id {
                if self.expert_index(id).is_none() {
                    return bad(format!("{name} '{id}' is not a configured expert"));
                }
            }
        }
        for (name, tau) in [("tau_alpha", &self.sns.tau_alpha), ("tau_beta", &self.sns.tau_beta)] {
            if let Tau::Named(s) = tau {
                if s != "auto" {
                    return bad(format!("sns.{name} must be a number, a per-modality table or \"auto\", got '{s}'"));
                }
            }
        }
        self.sns.resolve(Some((PerModality::splat(0.0), PerModality::splat(0.0))))?;
        self.loss.objective().weights.validate()?;
        self.train.train_config().validate()?;
        if self.train.layers == 0 {
            return bad("train.layers must be >= 1".into());
        }
        if !(0.0..=2.0).contains(&self.curation.epsilon) {
            return bad(format!("curation.epsilon must be in [0, 2], got {}", self.curation.epsilon));
        }
        if self.curation.k_clusters == 0 {
            return bad("curation.k_clusters must be >= 1".into());
        }
        if let Some(d) = &self.describer {
            if d.endpoint.is_empty() {
                return bad("describer has no endpoint (set NUCLEUS_DESCRIBER_ENDPOINT)".into());
            }
        }
        Ok(())
    }
}
