//! Run manifests: the effective configuration, parameters and the digests of
//! every input and output. No timestamps, so reruns are byte-identical.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{EngineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, label: impl Into<String>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| EngineError::io(path, e))?;
        Ok(Self { path: label.into(), sha256: hex::encode(Sha256::digest(&bytes)) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub parameters: Value,
    pub config: Option<Value>,
    pub inputs: Vec<FileDigest>,
    /// Names relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &str, parameters: Value, config: Option<Value>) -> Self {
        Self {
            tool: "nucleus",
            version: env!("CARGO_PKG_VERSION"),
            command: command.into(),
            parameters,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path, path.display().to_string())?);
        Ok(())
    }

    /// Records `names` (files inside `out`) and writes `manifest.<command>.json`.
    pub fn finish(mut self, out: &Path, names: &[String]) -> Result<std::path::PathBuf> {
        for name in names {
            self.outputs.push(FileDigest::of(&out.join(name), name.clone())?);
        }
        let path = out.join(format!("manifest.{}.json", self.command));
        write_json(&path, &self)?;
        Ok(path)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| EngineError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| EngineError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| EngineError::io(path, e))
}
