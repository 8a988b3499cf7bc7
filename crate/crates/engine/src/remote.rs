//! HTTP client for embedding and description services.
//!
//! Embedding request: `{"model", "inputs": [{"id", "modality", "content"}]}`,
//! response `{"embeddings": [{"id", "vector"}]}`. The describer sends the same
//! envelope with `"task": "describe"` and reads `{"descriptions": [{"id",
//! "text"}]}`. Any non-2xx status or missing id is a remote failure.

use std::collections::HashMap;
use std::time::Duration;

use base64::Engine as _;
use nucleus_core::experts::{check_batch, EmbedItem, Expert, ExpertDescriptor, ExpertError};
use nucleus_core::sns::{join_components, Component, Describer};
use nucleus_core::{Embedding, Modality};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaMode {
    /// Send media references (paths) as given.
    #[default]
    Path,
    /// Read each referenced file and send it base64-encoded.
    Base64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteSettings {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub batch_size: usize,
    pub timeout_secs: u64,
    pub media: MediaMode,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: String::new(),
            api_key: None,
            batch_size: 32,
            timeout_secs: 60,
            media: MediaMode::Path,
        }
    }
}

fn agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
        .build()
        .into()
}

fn post(agent: &ureq::Agent, endpoint: &str, api_key: Option<&str>, body: &Value) -> Result<Value, String> {
    let mut req = agent.post(endpoint).header("content-type", "application/json");
    if let Some(key) = api_key {
        req = req.header("authorization", &format!("Bearer {key}"));
    }
    let mut resp = req.send(body.to_string()).map_err(|e| format!("{endpoint}: {e}"))?;
    let status = resp.status();
    let text = resp.body_mut().read_to_string().map_err(|e| format!("{endpoint}: {e}"))?;
    if !status.is_success() {
        let snippet: String = text.chars().take(200).collect();
        return Err(format!("{endpoint} returned {status}: {snippet}"));
    }
    serde_json::from_str(&text).map_err(|e| format!("{endpoint}: malformed response: {e}"))
}

fn encode_media(content: &str, mode: MediaMode) -> Result<String, String> {
    match mode {
        MediaMode::Path => Ok(content.to_string()),
        MediaMode::Base64 => content
            .lines()
            .map(|path| {
                std::fs::read(path.trim())
                    .map(|bytes| base64::engine::general_purpose::STANDARD.encode(bytes))
                    .map_err(|e| format!("{path}: {e}"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(|parts| parts.join("\n")),
    }
}

#[derive(Debug, Deserialize)]
struct EmbeddingRow {
    id: String,
    vector: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    embeddings: Vec<EmbeddingRow>,
}

#[derive(Debug, Deserialize)]
struct DescriptionRow {
    id: String,
    text: String,
}

#[derive(Debug, Deserialize)]
struct DescribeResponse {
    descriptions: Vec<DescriptionRow>,
}

#[derive(Debug, Clone)]
pub struct RemoteExpert {
    descriptor: ExpertDescriptor,
    settings: RemoteSettings,
    jobs: usize,
    agent: ureq::Agent,
}

impl RemoteExpert {
    pub fn new(descriptor: ExpertDescriptor, settings: RemoteSettings, jobs: usize) -> Result<Self, ExpertError> {
        descriptor.validate()?;
        if settings.endpoint.is_empty() {
            return Err(ExpertError::InvalidConfig(format!("expert '{}' has no endpoint", descriptor.expert_id)));
        }
        let agent = agent(settings.timeout_secs);
        Ok(Self { descriptor, settings, jobs: jobs.max(1), agent })
    }

    fn embed_chunk(&self, items: &[EmbedItem]) -> Result<Vec<Embedding>, ExpertError> {
        let inputs = items
            .iter()
            .map(|it| {
                let content = if it.modality == Modality::Text {
                    it.content.clone()
                } else {
                    encode_media(&it.content, self.settings.media).map_err(ExpertError::RemoteFailure)?
                };
                Ok(json!({"id": it.id, "modality": it.modality.as_str(), "content": content}))
            })
            .collect::<Result<Vec<_>, ExpertError>>()?;
        let body = json!({"model": self.settings.model, "inputs": inputs});
        let value = post(&self.agent, &self.settings.endpoint, self.settings.api_key.as_deref(), &body)
            .map_err(ExpertError::RemoteFailure)?;
        let resp: EmbedResponse = serde_json::from_value(value)
            .map_err(|e| ExpertError::RemoteFailure(format!("malformed response: {e}")))?;
        let mut by_id: HashMap<String, Vec<f64>> = resp.embeddings.into_iter().map(|r| (r.id, r.vector)).collect();
        let out = items
            .iter()
            .map(|it| {
                let v = by_id
                    .remove(&it.id)
                    .ok_or_else(|| ExpertError::RemoteFailure(format!("response is missing id '{}'", it.id)))?;
                if v.len() != self.descriptor.dim {
                    return Err(ExpertError::DimMismatch { expected: self.descriptor.dim, got: v.len() });
                }
                Ok(Embedding::new(v, self.descriptor.expert_id.clone(), it.modality, it.id.clone())?)
            })
            .collect::<Result<Vec<_>, _>>()?;
        check_batch(&self.descriptor, items, &out)?;
        Ok(out)
    }
}

impl Expert for RemoteExpert {
    fn descriptor(&self) -> &ExpertDescriptor {
        &self.descriptor
    }

    /// Splits `items` into requests of `batch_size` and keeps at most `jobs`
    /// of them in flight.
    fn embed_batch(&self, items: &[EmbedItem]) -> Result<Vec<Embedding>, ExpertError> {
        for it in items {
            if !self.descriptor.supports(it.modality) {
                return Err(ExpertError::UnsupportedModality {
                    expert: self.descriptor.expert_id.clone(),
                    modality: it.modality,
                });
            }
        }
        let chunks: Vec<&[EmbedItem]> = items.chunks(self.settings.batch_size.max(1)).collect();
        let mut out = Vec::with_capacity(items.len());
        for wave in chunks.chunks(self.jobs) {
            let results: Vec<Result<Vec<Embedding>, ExpertError>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave.iter().map(|chunk| s.spawn(move || self.embed_chunk(chunk))).collect();
                handles
                    .into_iter()
                    .map(|h| {
                        h.join().unwrap_or_else(|_| Err(ExpertError::RemoteFailure("request thread panicked".into())))
                    })
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}

/// Text descriptions of raw media from a remote service.
#[derive(Debug, Clone)]
pub struct RemoteDescriber {
    settings: RemoteSettings,
    agent: ureq::Agent,
}

impl RemoteDescriber {
    pub fn new(settings: RemoteSettings) -> Self {
        let agent = agent(settings.timeout_secs);
        Self { settings, agent }
    }
}

impl Describer for RemoteDescriber {
    fn describe(&self, sample_id: &str, modality: Modality, raw: &[Component]) -> Result<String, String> {
        let content = encode_media(&join_components(raw, modality), self.settings.media)?;
        let body = json!({
            "model": self.settings.model,
            "task": "describe",
            "inputs": [{"id": sample_id, "modality": modality.as_str(), "content": content}],
        });
        let value = post(&self.agent, &self.settings.endpoint, self.settings.api_key.as_deref(), &body)?;
        let resp: DescribeResponse = serde_json::from_value(value).map_err(|e| format!("malformed response: {e}"))?;
        resp.descriptions
            .into_iter()
            .find(|d| d.id == sample_id)
            .map(|d| d.text)
            .ok_or_else(|| format!("response is missing id '{sample_id}'"))
    }
}
