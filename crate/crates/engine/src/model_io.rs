//! Projection model files: a JSON header plus base64 blocks of f32 LE
//! weights.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use nucleus_core::projection::{Architecture, Layer, ProjectionModel};
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

pub const FORMAT: &str = "nucleus-projection";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerBlock {
    inputs: usize,
    outputs: usize,
    weights: String,
    bias: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    activation: String,
    arch: Architecture,
    seed: u64,
    /// Expert order of the concatenated input.
    experts: Vec<String>,
    anchor_expert: String,
    layers: Vec<LayerBlock>,
}

/// A trained projection with the expert order it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: ProjectionModel,
    pub experts: Vec<String>,
    pub anchor_expert: String,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str, expected: usize, what: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD.decode(text).map_err(|e| EngineError::Validation(format!("{what}: bad base64: {e}")))?;
    if bytes.len() != expected * 4 {
        return Err(EngineError::Validation(format!("{what}: expected {expected} floats, got {} bytes", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect())
}

/// Rounds every parameter to f32, as stored on disk.
pub fn quantize(model: &ProjectionModel) -> ProjectionModel {
    let mut m = model.clone();
    for layer in &mut m.layers {
        for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *v = f64::from(*v as f32);
        }
    }
    m
}

pub fn to_json(saved: &SavedModel) -> Result<String> {
    let file = ModelFile {
        format: FORMAT.into(),
        version: FORMAT_VERSION,
        activation: "silu".into(),
        arch: saved.model.arch,
        seed: saved.model.seed,
        experts: saved.experts.clone(),
        anchor_expert: saved.anchor_expert.clone(),
        layers: saved
            .model
            .layers
            .iter()
            .map(|l| LayerBlock {
                inputs: l.inputs,
                outputs: l.outputs,
                weights: encode(&l.weights),
                bias: encode(&l.bias),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| EngineError::Runtime(e.to_string()))
}

pub fn from_json(text: &str) -> Result<SavedModel> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| EngineError::Validation(format!("model file: {e}")))?;
    if file.format != FORMAT || file.version != FORMAT_VERSION {
        return Err(EngineError::Validation(format!("unsupported model format {} v{}", file.format, file.version)));
    }
    if file.activation != "silu" {
        return Err(EngineError::Validation(format!("unsupported activation '{}'", file.activation)));
    }
    let layers = file
        .layers
        .iter()
        .enumerate()
        .map(|(i, b)| {
            Ok(Layer {
                inputs: b.inputs,
                outputs: b.outputs,
                weights: decode(&b.weights, b.inputs * b.outputs, &format!("layer {i} weights"))?,
                bias: decode(&b.bias, b.outputs, &format!("layer {i} bias"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let model = ProjectionModel { arch: file.arch, seed: file.seed, layers };
    model.validate().map_err(|e| EngineError::Validation(format!("model file: {e}")))?;
    if file.experts.len() != model.arch.expert_count {
        return Err(EngineError::Validation("model file: expert list does not match the architecture".into()));
    }
    Ok(SavedModel { model, experts: file.experts, anchor_expert: file.anchor_expert })
}

pub fn save(path: &Path, saved: &SavedModel) -> Result<()> {
    std::fs::write(path, to_json(saved)? + "\n").map_err(|e| EngineError::io(path, e))
}

pub fn load(path: &Path) -> Result<SavedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
    from_json(&text)
}
