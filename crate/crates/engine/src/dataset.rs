//! JSONL paired datasets.
//!
//! One record per line: `{sample_id, pool_id, modality, raw | components,
//! annotation, media_ref?}`. `components` marks a pre-segmented raw side.
//! Without `raw` or `components`, the `media_ref` itself is the raw content.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nucleus_core::curation::PoolItem;
use nucleus_core::sns::{join_components, Component, PairedSample};
use nucleus_core::Modality;
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetLine {
    pub sample_id: String,
    pub pool_id: String,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<String>>,
    #[serde(default)]
    pub annotation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub pair: PairedSample,
    pub media_ref: Option<String>,
}

impl Record {
    pub fn pool_item(&self) -> PoolItem {
        PoolItem::new(self.pair.sample_id.clone(), self.pair.pool_id.clone(), self.pair.raw_modality)
    }

    pub fn to_line(&self) -> DatasetLine {
        let p = &self.pair;
        let (raw, components) = if p.presegmented || (p.raw_modality != Modality::Text && p.raw.len() > 1) {
            (None, Some(p.raw.iter().map(|c| c.content.clone()).collect()))
        } else {
            (Some(join_components(&p.raw, p.raw_modality)), None)
        };
        DatasetLine {
            sample_id: p.sample_id.clone(),
            pool_id: p.pool_id.clone(),
            modality: p.raw_modality,
            raw,
            components,
            annotation: Some(p.annotation_text()),
            media_ref: self.media_ref.clone(),
        }
    }
}

fn violation(sample_id: &str, reason: impl Into<String>) -> EngineError {
    EngineError::InvariantViolation { sample_id: sample_id.to_string(), reason: reason.into() }
}

/// Validates one parsed line and turns it into a paired sample.
pub fn record_from_line(line: DatasetLine) -> Result<Record> {
    let id = line.sample_id.as_str();
    if id.is_empty() {
        return Err(EngineError::Validation("empty sample_id".into()));
    }
    let annotation = line.annotation.as_deref().unwrap_or("");
    if annotation.trim().is_empty() {
        return Err(violation(id, "annotation is missing or empty"));
    }
    let pair = match (&line.raw, &line.components, &line.media_ref) {
        (Some(_), Some(_), _) => return Err(violation(id, "both raw and components are given")),
        (None, Some(parts), _) => {
            if parts.is_empty() {
                return Err(violation(id, "components list is empty"));
            }
            let mut p = PairedSample::from_text(id, &line.pool_id, line.modality, "", annotation);
            p.raw = parts.iter().map(|c| Component::text(c.clone())).collect();
            p.presegmented = true;
            p
        }
        (Some(raw), None, _) => PairedSample::from_text(id, &line.pool_id, line.modality, raw, annotation),
        (None, None, Some(media)) => PairedSample::from_text(id, &line.pool_id, line.modality, media, annotation),
        (None, None, None) => return Err(violation(id, "raw side is missing")),
    };
    pair.validate().map_err(|e| violation(id, e.to_string()))?;
    Ok(Record { pair, media_ref: line.media_ref })
}

pub fn parse_dataset(reader: impl BufRead, path: &Path) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EngineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DatasetLine = serde_json::from_str(&line).map_err(|e| EngineError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let record = record_from_line(parsed).map_err(|e| match e {
            EngineError::Validation(message) => EngineError::Parse { path: path.to_path_buf(), line: i + 1, message },
            other => other,
        })?;
        if !seen.insert(record.pair.sample_id.clone()) {
            return Err(violation(&record.pair.sample_id, format!("duplicate sample_id (line {})", i + 1)));
        }
        out.push(record);
    }
    if out.is_empty() {
        return Err(EngineError::Validation(format!("{}: no records", path.display())));
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Record>> {
    let file = std::fs::File::open(path).map_err(|e| EngineError::io(path, e))?;
    parse_dataset(BufReader::new(file), path)
}

pub fn write_dataset(path: &Path, records: &[Record]) -> Result<()> {
    write_jsonl(path, records.iter().map(Record::to_line))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| EngineError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(&row).map_err(|e| EngineError::Runtime(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| EngineError::io(path, e))?;
    }
    w.flush().map_err(|e| EngineError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<Record>> {
        parse_dataset(text.as_bytes(), Path::new("fixture.jsonl"))
    }

    #[test]
    fn two_records() {
        let text = r#"{"sample_id":"a","pool_id":"p","modality":"text","raw":"One. Two.","annotation":"Both."}
{"sample_id":"b","pool_id":"p","modality":"image","raw":"img/b.png","annotation":"A dog. Running."}
"#;
        let recs = parse(text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].pair.raw.len(), 2);
        assert_eq!(recs[1].pair.raw.len(), 1);
        assert_eq!(recs[1].pair.annotation.len(), 2);
        assert_eq!(recs[0].pair.raw_size(), 8);
    }

    #[test]
    fn missing_annotation_names_the_id() {
        let text = r#"{"sample_id":"a","pool_id":"p","modality":"text","raw":"One."}"#;
        match parse(text) {
            Err(EngineError::InvariantViolation { sample_id, .. }) => assert_eq!(sample_id, "a"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "{\"sample_id\":\"a\",\"pool_id\":\"p\",\"modality\":\"text\",\"raw\":\"x.\",\"annotation\":\"y.\"}\n\n{oops\n";
        match parse(text) {
            Err(EngineError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = r#"{"sample_id":"a","pool_id":"p","modality":"smell","raw":"x.","annotation":"y."}"#;
        assert!(matches!(parse(text), Err(EngineError::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let line = r#"{"sample_id":"a","pool_id":"p","modality":"text","raw":"x.","annotation":"y."}"#;
        assert!(matches!(parse(&format!("{line}\n{line}\n")), Err(EngineError::InvariantViolation { .. })));
    }

    #[test]
    fn presegmented_components_round_trip() {
        let text = r#"{"sample_id":"v","pool_id":"p","modality":"video","components":["clip0.mp4","clip1.mp4","clip2.mp4"],"annotation":"A goal. The crowd cheers."}"#;
        let recs = parse(text).unwrap();
        let p = &recs[0].pair;
        assert!(p.presegmented);
        let contents: Vec<&str> = p.raw.iter().map(|c| c.content.as_str()).collect();
        assert_eq!(contents, ["clip0.mp4", "clip1.mp4", "clip2.mp4"]);
        let line = serde_json::to_string(&recs[0].to_line()).unwrap();
        let again = parse(&line).unwrap();
        assert_eq!(again, recs);
    }

    #[test]
    fn media_ref_stands_in_for_raw() {
        let text = r#"{"sample_id":"m","pool_id":"p","modality":"audio","media_ref":"a.wav","annotation":"Rain."}"#;
        let recs = parse(text).unwrap();
        assert_eq!(recs[0].pair.raw[0].content, "a.wav");
        assert_eq!(recs[0].media_ref.as_deref(), Some("a.wav"));
    }
}
