//! Symmetric nucleus subsampling.
//!
//! A pair is trimmed in two directions. Forward extraction keeps the raw
//! components whose similarity to the annotation clears `tau_alpha`; backward
//! extraction keeps the annotation sentences whose similarity to a text
//! description of the raw side clears `tau_beta`. Either extraction falls back
//! to the untouched side when nothing clears the threshold.
//!
//! A candidate replaces the original only if it passes the gate
//! `sim(x̃, ỹ) >= rho * sim(x, y)` under the gating expert, and only when
//! reinjection is on. Each direction is gated against the similarity of the
//! original pair. When both directions pass on their own, their combination
//! is gated again; if it fails, the better single-direction variant is kept.
//! Every emitted pair is therefore either the input or a gated variant.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::experts::{EmbedItem, Expert, ExpertError};
use crate::geometry::{cosine_sim, GeometryError, Modality};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SnsError {
    #[error("sizes must be positive")]
    ZeroSize,
    #[error("gating expert failed: {0}")]
    GatingExpertFailure(ExpertError),
    #[error("describer failed: {0}")]
    DescriberFailure(String),
    #[error("sample '{sample_id}' is invalid: {reason}")]
    InvalidSample { sample_id: String, reason: String },
    #[error("invalid SNS configuration: {0}")]
    InvalidConfig(String),
}

impl From<GeometryError> for SnsError {
    fn from(e: GeometryError) -> Self {
        SnsError::GatingExpertFailure(ExpertError::Geometry(e))
    }
}

/// One segment of a side: a sentence, an image region reference, a clip.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Component {
    pub content: String,
    /// Byte size; the UTF-8 length of `content` unless the component stands
    /// for external media of a different size.
    pub size: usize,
}

impl Component {
    pub fn text(content: impl Into<String>) -> Self {
        let content = content.into();
        let size = content.len();
        Self { content, size }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairedSample {
    pub sample_id: String,
    pub pool_id: String,
    pub raw_modality: Modality,
    pub raw: Vec<Component>,
    pub annotation: Vec<Component>,
    pub presegmented: bool,
}

impl PairedSample {
    /// Builds a sample from flat strings; text raw data and the annotation are
    /// split into sentences, other raw data stays one component.
    pub fn from_text(
        sample_id: impl Into<String>,
        pool_id: impl Into<String>,
        raw_modality: Modality,
        raw: &str,
        annotation: &str,
    ) -> Self {
        let raw = if raw_modality == Modality::Text {
            segment_text(raw).into_iter().map(Component::text).collect()
        } else if raw.trim().is_empty() {
            Vec::new()
        } else {
            alloc::vec![Component::text(raw.trim())]
        };
        Self {
            sample_id: sample_id.into(),
            pool_id: pool_id.into(),
            raw_modality,
            raw,
            annotation: segment_text(annotation).into_iter().map(Component::text).collect(),
            presegmented: false,
        }
    }

    pub fn validate(&self) -> Result<(), SnsError> {
        let fail = |reason: &str| SnsError::InvalidSample { sample_id: self.sample_id.clone(), reason: reason.into() };
        if self.raw.is_empty() {
            return Err(fail("raw side has no components"));
        }
        if self.annotation.is_empty() {
            return Err(fail("annotation has no components"));
        }
        if self.raw.iter().chain(&self.annotation).any(|c| c.size == 0) {
            return Err(fail("component with zero byte size"));
        }
        Ok(())
    }

    pub fn raw_size(&self) -> usize {
        self.raw.iter().map(|c| c.size).sum()
    }

    pub fn annotation_size(&self) -> usize {
        self.annotation.iter().map(|c| c.size).sum()
    }

    pub fn raw_content(&self) -> String {
        join_components(&self.raw, self.raw_modality)
    }

    pub fn annotation_text(&self) -> String {
        join_components(&self.annotation, Modality::Text)
    }
}

/// Text components join with a space; media component references join with
/// newlines so a remote service receives one reference per line.
pub fn join_components(components: &[Component], modality: Modality) -> String {
    let sep = if modality == Modality::Text { " " } else { "\n" };
    let mut out = String::new();
    for (i, c) in components.iter().enumerate() {
        if i > 0 {
            out.push_str(sep);
        }
        out.push_str(&c.content);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Direction {
    Off,
    Forward,
    Backward,
    Bidirectional,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Off, Direction::Forward, Direction::Backward, Direction::Bidirectional];

    pub fn forward(self) -> bool {
        matches!(self, Direction::Forward | Direction::Bidirectional)
    }

    pub fn backward(self) -> bool {
        matches!(self, Direction::Backward | Direction::Bidirectional)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Off => "off",
            Direction::Forward => "forward",
            Direction::Backward => "backward",
            Direction::Bidirectional => "bidirectional",
        }
    }
}

impl core::str::FromStr for Direction {
    type Err = SnsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(Direction::Off),
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            "bidirectional" | "bidir" => Ok(Direction::Bidirectional),
            other => Err(SnsError::InvalidConfig(format!("unknown direction '{other}'"))),
        }
    }
}

/// A value per modality.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerModality<T> {
    pub text: T,
    pub image: T,
    pub audio: T,
    pub video: T,
}

impl<T: Copy> PerModality<T> {
    pub fn splat(v: T) -> Self {
        Self { text: v, image: v, audio: v, video: v }
    }

    pub fn get(&self, m: Modality) -> T {
        match m {
            Modality::Text => self.text,
            Modality::Image => self.image,
            Modality::Audio => self.audio,
            Modality::Video => self.video,
        }
    }

    pub fn set(&mut self, m: Modality, v: T) {
        match m {
            Modality::Text => self.text = v,
            Modality::Image => self.image = v,
            Modality::Audio => self.audio = v,
            Modality::Video => self.video = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SnsConfig {
    pub direction: Direction,
    pub tau_alpha: PerModality<f64>,
    pub tau_beta: PerModality<f64>,
    pub rho: f64,
    pub reinject: bool,
}

impl Default for SnsConfig {
    fn default() -> Self {
        Self {
            direction: Direction::Bidirectional,
            tau_alpha: PerModality::splat(0.5),
            tau_beta: PerModality::splat(0.5),
            rho: 1.0,
            reinject: true,
        }
    }
}

impl SnsConfig {
    pub fn validate(&self) -> Result<(), SnsError> {
        for m in Modality::ALL {
            for t in [self.tau_alpha.get(m), self.tau_beta.get(m)] {
                if !(-1.0..=1.0).contains(&t) {
                    return Err(SnsError::InvalidConfig(format!("threshold {t} for {m} outside [-1, 1]")));
                }
            }
        }
        if !(self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(SnsError::InvalidConfig(format!("rho must be finite and >= 0, got {}", self.rho)));
        }
        Ok(())
    }
}

/// Provenance for one pass of [`apply_sns`].
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NucleusRecord {
    pub sample_id: String,
    pub direction: Direction,
    /// A variant different from the input passed the gate.
    pub accepted: bool,
    /// The emitted pair differs from the input.
    pub reinjected: bool,
    pub sim_original: f64,
    /// Similarity of the emitted pair when accepted, else of the best rejected
    /// candidate (or the original when no candidate differed).
    pub sim_variant: f64,
    pub sim_forward: Option<f64>,
    pub sim_backward: Option<f64>,
    pub raw_size_before: usize,
    pub raw_size_after: usize,
    pub annotation_size_before: usize,
    pub annotation_size_after: usize,
    pub note: Option<String>,
}

const TERMINATORS: [char; 3] = ['.', '!', '?'];

/// Splits text into sentences at `.`, `!` or `?` followed by whitespace or
/// the end of input. Components are trimmed substrings of the input.
pub fn segment_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !TERMINATORS.contains(&c) {
            continue;
        }
        let boundary = match chars.peek() {
            None => true,
            Some((_, next)) => next.is_whitespace(),
        };
        if boundary {
            let end = i + c.len_utf8();
            push_trimmed(&mut out, &text[start..end]);
            start = end;
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

/// Indices kept by an extraction, in original order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub kept: Vec<usize>,
    /// Nothing cleared the threshold and the whole side was kept.
    pub fell_back: bool,
}

impl Extraction {
    pub fn is_identity(&self, len: usize) -> bool {
        self.kept.len() == len
    }

    pub fn select(&self, components: &[Component]) -> Vec<Component> {
        self.kept.iter().map(|&i| components[i].clone()).collect()
    }
}

fn threshold_select<E>(count: usize, tau: f64, mut sim: impl FnMut(usize) -> Result<f64, E>) -> Result<Extraction, E> {
    let mut kept = Vec::new();
    for i in 0..count {
        if sim(i)? > tau {
            kept.push(i);
        }
    }
    if kept.is_empty() {
        return Ok(Extraction { kept: (0..count).collect(), fell_back: true });
    }
    Ok(Extraction { kept, fell_back: false })
}

/// Keeps raw components whose similarity to the annotation exceeds `tau_alpha`.
/// `sim(i)` scores component `i` against the annotation.
pub fn forward_extract<E>(
    raw: &[Component],
    tau_alpha: f64,
    sim: impl FnMut(usize) -> Result<f64, E>,
) -> Result<Extraction, E> {
    threshold_select(raw.len(), tau_alpha, sim)
}

/// Keeps annotation sentences whose similarity to the raw side's description
/// exceeds `tau_beta`. `sim(j)` scores sentence `j` against the description.
pub fn backward_extract<E>(
    annotation: &[Component],
    tau_beta: f64,
    sim: impl FnMut(usize) -> Result<f64, E>,
) -> Result<Extraction, E> {
    threshold_select(annotation.len(), tau_beta, sim)
}

/// Accepts a variant when `sim_variant >= rho * sim_original`.
pub fn mi_gate(sim_variant: f64, sim_original: f64, rho: f64) -> bool {
    sim_variant >= rho * sim_original
}

/// Similarity-proxy information per byte of the pair.
pub fn info_density(sim_proxy: f64, size_x: usize, size_y: usize) -> Result<f64, SnsError> {
    if size_x == 0 || size_y == 0 {
        return Err(SnsError::ZeroSize);
    }
    Ok(sim_proxy / (size_x + size_y) as f64)
}

/// Produces a text description of raw data for backward extraction.
pub trait Describer {
    fn describe(&self, sample_id: &str, modality: Modality, raw: &[Component]) -> Result<String, String>;
}

/// Uses the raw components' own content as the description. Suitable when
/// media components carry textual stand-ins, as in synthetic corpora.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContentDescriber;

impl Describer for ContentDescriber {
    fn describe(&self, _sample_id: &str, _modality: Modality, raw: &[Component]) -> Result<String, String> {
        Ok(join_components(raw, Modality::Text))
    }
}

/// Looks descriptions up by sample id.
#[derive(Debug, Clone, Default)]
pub struct TableDescriber {
    pub descriptions: BTreeMap<String, String>,
}

impl Describer for TableDescriber {
    fn describe(&self, sample_id: &str, _modality: Modality, _raw: &[Component]) -> Result<String, String> {
        self.descriptions.get(sample_id).cloned().ok_or_else(|| format!("no description for '{sample_id}'"))
    }
}

/// Embeds pair sides and components with the gating expert.
struct Gate<'a, G: Expert + ?Sized> {
    expert: &'a G,
    sample_id: &'a str,
}

impl<G: Expert + ?Sized> Gate<'_, G> {
    fn embed(&self, tag: &str, modality: Modality, content: String) -> Result<alloc::vec::Vec<f64>, SnsError> {
        let item = EmbedItem::new(format!("{}#{}", self.sample_id, tag), modality, content);
        self.expert.embed(&item).map(|e| e.into_values()).map_err(SnsError::GatingExpertFailure)
    }

    fn side_sim(&self, raw_modality: Modality, raw: &[Component], annotation: &[Component]) -> Result<f64, SnsError> {
        let x = self.embed("raw", raw_modality, join_components(raw, raw_modality))?;
        let y = self.embed("ann", Modality::Text, join_components(annotation, Modality::Text))?;
        Ok(cosine_sim(&x, &y)?)
    }
}

struct Candidates {
    sim_original: f64,
    forward: Option<(Vec<Component>, f64)>,
    backward: Option<(Vec<Component>, f64)>,
    both: Option<f64>,
}

fn evaluate<G: Expert + ?Sized, D: Describer + ?Sized>(
    pair: &PairedSample,
    config: &SnsConfig,
    gate: &Gate<'_, G>,
    describer: &D,
) -> Result<Candidates, SnsError> {
    let m = pair.raw_modality;
    let sim_original = gate.side_sim(m, &pair.raw, &pair.annotation)?;
    let mut out = Candidates { sim_original, forward: None, backward: None, both: None };

    let mut nucleus_raw = pair.raw.clone();
    if config.direction.forward() {
        let ann = gate.embed("ann", Modality::Text, pair.annotation_text())?;
        let extraction = forward_extract(&pair.raw, config.tau_alpha.get(m), |i| {
            let c = gate.embed(&format!("raw.{i}"), m, pair.raw[i].content.clone())?;
            Ok::<_, SnsError>(cosine_sim(&c, &ann)?)
        })?;
        if !extraction.is_identity(pair.raw.len()) {
            nucleus_raw = extraction.select(&pair.raw);
            let s = gate.side_sim(m, &nucleus_raw, &pair.annotation)?;
            out.forward = Some((nucleus_raw.clone(), s));
        }
    }

    if config.direction.backward() {
        let description = if m == Modality::Text {
            join_components(&nucleus_raw, Modality::Text)
        } else {
            describer.describe(&pair.sample_id, m, &nucleus_raw).map_err(SnsError::DescriberFailure)?
        };
        let desc = gate.embed("desc", Modality::Text, description)?;
        let extraction = backward_extract(&pair.annotation, config.tau_beta.get(m), |j| {
            let s = gate.embed(&format!("ann.{j}"), Modality::Text, pair.annotation[j].content.clone())?;
            Ok::<_, SnsError>(cosine_sim(&desc, &s)?)
        })?;
        if !extraction.is_identity(pair.annotation.len()) {
            let trimmed = extraction.select(&pair.annotation);
            let s = gate.side_sim(m, &pair.raw, &trimmed)?;
            out.backward = Some((trimmed, s));
        }
    }

    if let (Some((raw, sf)), Some((ann, sb))) = (&out.forward, &out.backward) {
        let rho = config.rho;
        if mi_gate(*sf, sim_original, rho) && mi_gate(*sb, sim_original, rho) {
            out.both = Some(gate.side_sim(m, raw, ann)?);
        }
    }
    Ok(out)
}

/// Runs the configured extraction(s) on one pair and gates the result.
///
/// Never fails: backend errors leave the pair untouched and are noted on the
/// record.
/// Replacement raw side, replacement annotation, and the emitted similarity.
type Choice<'a> = (Option<&'a Vec<Component>>, Option<&'a Vec<Component>>, f64);

pub fn apply_sns<G: Expert + ?Sized, D: Describer + ?Sized>(
    pair: &PairedSample,
    config: &SnsConfig,
    gating_expert: &G,
    describer: &D,
) -> (PairedSample, NucleusRecord) {
    let mut record = NucleusRecord {
        sample_id: pair.sample_id.clone(),
        direction: config.direction,
        accepted: false,
        reinjected: false,
        sim_original: 0.0,
        sim_variant: 0.0,
        sim_forward: None,
        sim_backward: None,
        raw_size_before: pair.raw_size(),
        raw_size_after: pair.raw_size(),
        annotation_size_before: pair.annotation_size(),
        annotation_size_after: pair.annotation_size(),
        note: None,
    };
    if config.direction == Direction::Off {
        return (pair.clone(), record);
    }
    let gate = Gate { expert: gating_expert, sample_id: &pair.sample_id };
    let candidates = match evaluate(pair, config, &gate, describer) {
        Ok(c) => c,
        Err(e) => {
            record.note = Some(e.to_string());
            return (pair.clone(), record);
        }
    };

    let s0 = candidates.sim_original;
    record.sim_original = s0;
    record.sim_variant = s0;
    record.sim_forward = candidates.forward.as_ref().map(|(_, s)| *s);
    record.sim_backward = candidates.backward.as_ref().map(|(_, s)| *s);

    let rho = config.rho;
    let fwd_ok = candidates.forward.as_ref().filter(|(_, s)| mi_gate(*s, s0, rho));
    let bwd_ok = candidates.backward.as_ref().filter(|(_, s)| mi_gate(*s, s0, rho));

    // (raw, annotation, sim) of the variant to emit, if any passed the gate.
    let chosen: Option<Choice<'_>> = match (fwd_ok, bwd_ok) {
        (Some((raw, sf)), Some((ann, sb))) => match candidates.both {
            Some(s) if mi_gate(s, s0, rho) => Some((Some(raw), Some(ann), s)),
            _ if sf >= sb => Some((Some(raw), None, *sf)),
            _ => Some((None, Some(ann), *sb)),
        },
        (Some((raw, sf)), None) => Some((Some(raw), None, *sf)),
        (None, Some((ann, sb))) => Some((None, Some(ann), *sb)),
        (None, None) => None,
    };

    let Some((raw, ann, sim)) = chosen else {
        let best = record
            .sim_forward
            .into_iter()
            .chain(record.sim_backward)
            .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))));
        if let Some(b) = best {
            record.sim_variant = b;
        }
        return (pair.clone(), record);
    };

    record.accepted = true;
    record.sim_variant = sim;
    if !config.reinject {
        record.note = Some("accepted without reinjection".into());
        return (pair.clone(), record);
    }
    let mut out = pair.clone();
    if let Some(raw) = raw {
        out.raw = raw.clone();
    }
    if let Some(ann) = ann {
        out.annotation = ann.clone();
    }
    record.reinjected = true;
    record.raw_size_after = out.raw_size();
    record.annotation_size_after = out.annotation_size();
    (out, record)
}

/// Per-modality midpoints of the forward and backward similarity bands
/// observed on `samples`: for each modality, the midpoint between the lowest
/// and highest component similarity. Modalities without samples keep
/// `fallback`.
pub fn calibrate_thresholds<G: Expert + ?Sized, D: Describer + ?Sized>(
    samples: &[PairedSample],
    gating_expert: &G,
    describer: &D,
    fallback: f64,
) -> Result<(PerModality<f64>, PerModality<f64>), SnsError> {
    let mut fwd: PerModality<Option<(f64, f64)>> = PerModality::splat(None);
    let mut bwd: PerModality<Option<(f64, f64)>> = PerModality::splat(None);
    let widen = |band: Option<(f64, f64)>, s: f64| Some(band.map_or((s, s), |(lo, hi)| (lo.min(s), hi.max(s))));
    for pair in samples {
        let m = pair.raw_modality;
        let gate = Gate { expert: gating_expert, sample_id: &pair.sample_id };
        let ann = gate.embed("ann", Modality::Text, pair.annotation_text())?;
        for (i, c) in pair.raw.iter().enumerate() {
            let v = gate.embed(&format!("raw.{i}"), m, c.content.clone())?;
            fwd.set(m, widen(fwd.get(m), cosine_sim(&v, &ann)?));
        }
        let description = if m == Modality::Text {
            pair.raw_content()
        } else {
            describer.describe(&pair.sample_id, m, &pair.raw).map_err(SnsError::DescriberFailure)?
        };
        let desc = gate.embed("desc", Modality::Text, description)?;
        for (j, c) in pair.annotation.iter().enumerate() {
            let v = gate.embed(&format!("ann.{j}"), Modality::Text, c.content.clone())?;
            bwd.set(m, widen(bwd.get(m), cosine_sim(&v, &desc)?));
        }
    }
    let mid = |band: Option<(f64, f64)>| band.map_or(fallback, |(lo, hi)| 0.5 * (lo + hi));
    let mut alpha = PerModality::splat(fallback);
    let mut beta = PerModality::splat(fallback);
    for m in Modality::ALL {
        alpha.set(m, mid(fwd.get(m)));
        beta.set(m, mid(bwd.get(m)));
    }
    Ok((alpha, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::{ExpertDescriptor, ExpertKind, SyntheticExpert, SyntheticExpertConfig};
    use crate::geometry::Embedding;
    use alloc::vec;

    #[test]
    fn segment_examples() {
        assert_eq!(segment_text("A cat. A dog! Why?"), vec!["A cat.", "A dog!", "Why?"]);
        assert!(segment_text("").is_empty());
        assert_eq!(segment_text("no terminator"), vec!["no terminator"]);
        assert_eq!(segment_text("v1.2 is out.  Yes!!  ok"), vec!["v1.2 is out.", "Yes!!", "ok"]);
        assert!(segment_text("   \n ").is_empty());
    }

    #[test]
    fn segment_preserves_bytes() {
        let text = "Émile sat. Ça va?\nOui!";
        let parts = segment_text(text);
        assert_eq!(parts, vec!["Émile sat.", "Ça va?", "Oui!"]);
        let rebuilt: String = parts.join(" ");
        let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
        assert_eq!(squash(&rebuilt), squash(text));
    }

    fn comps(n: usize) -> Vec<Component> {
        (0..n).map(|i| Component::text(format!("c{i}"))).collect()
    }

    #[test]
    fn forward_keeps_components_above_threshold() {
        let sims = [0.9, 0.2, 0.7];
        let e = forward_extract(&comps(3), 0.5, |i| Ok::<_, ()>(sims[i])).unwrap();
        assert_eq!(e, Extraction { kept: vec![0, 2], fell_back: false });
    }

    #[test]
    fn forward_falls_back_when_nothing_clears() {
        let e = forward_extract(&comps(3), 0.95, |_| Ok::<_, ()>(0.1)).unwrap();
        assert_eq!(e.kept, vec![0, 1, 2]);
        assert!(e.fell_back);
        let all = forward_extract(&comps(3), -1.0, |i| Ok::<_, ()>([-0.5, 0.0, 0.3][i])).unwrap();
        assert_eq!(all.kept, vec![0, 1, 2]);
        assert!(!all.fell_back);
    }

    #[test]
    fn backward_examples() {
        let sims = [0.3, 0.8];
        let e = backward_extract(&comps(2), 0.5, |j| Ok::<_, ()>(sims[j])).unwrap();
        assert_eq!(e.kept, vec![1]);
        let fb = backward_extract(&comps(2), 0.9, |j| Ok::<_, ()>(sims[j])).unwrap();
        assert_eq!(fb.kept, vec![0, 1]);
        assert!(fb.fell_back);
    }

    #[test]
    fn extraction_errors_propagate() {
        let r = forward_extract(&comps(2), 0.0, |_| Err::<f64, _>("boom"));
        assert_eq!(r, Err("boom"));
    }

    #[test]
    fn gate_examples() {
        assert!(mi_gate(0.80, 0.75, 1.00));
        assert!(!mi_gate(0.80, 0.75, 1.10));
        assert!(mi_gate(0.0, 0.9, 0.0));
        assert!(mi_gate(0.3, 0.9, 0.0));
    }

    #[test]
    fn density_examples() {
        assert!((info_density(0.8, 100, 100).unwrap() - 0.004).abs() < 1e-15);
        let full = info_density(0.6, 200, 80).unwrap();
        let half = info_density(0.6, 100, 40).unwrap();
        assert!((half - 2.0 * full).abs() < 1e-15);
        assert_eq!(info_density(0.0, 7, 9).unwrap(), 0.0);
        assert_eq!(info_density(0.5, 0, 9), Err(SnsError::ZeroSize));
    }

    #[test]
    fn config_validation() {
        let mut c = SnsConfig::default();
        assert!(c.validate().is_ok());
        c.rho = -0.1;
        assert!(c.validate().is_err());
        let mut c = SnsConfig::default();
        c.tau_alpha.image = 1.5;
        assert!(c.validate().is_err());
    }

    /// Embeds by looking up fixed vectors keyed by exact content; the item
    /// id is ignored.
    struct LookupExpert {
        descriptor: ExpertDescriptor,
        table: BTreeMap<String, Vec<f64>>,
    }

    impl Expert for LookupExpert {
        fn descriptor(&self) -> &ExpertDescriptor {
            &self.descriptor
        }
        fn embed_batch(&self, items: &[EmbedItem]) -> Result<Vec<Embedding>, ExpertError> {
            items
                .iter()
                .map(|it| {
                    let v = self
                        .table
                        .get(&it.content)
                        .cloned()
                        .ok_or_else(|| ExpertError::RemoteFailure(format!("unknown '{}'", it.content)))?;
                    Ok(Embedding::new(v, "lookup", it.modality, it.id.clone())?)
                })
                .collect()
        }
    }

    fn lookup(entries: &[(&str, [f64; 3])]) -> LookupExpert {
        LookupExpert {
            descriptor: ExpertDescriptor {
                expert_id: "lookup".into(),
                kind: ExpertKind::EndToEnd,
                dim: 3,
                supported_modalities: Modality::ALL.to_vec(),
            },
            table: entries.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect(),
        }
    }

    // Three raw sentences, one annotation sentence pair. "a" and "c" point
    // along the annotation, "b" is off-topic.
    fn fixture() -> (PairedSample, LookupExpert) {
        let pair = PairedSample::from_text("s1", "p", Modality::Text, "a. b. c.", "x. y.");
        let expert = lookup(&[
            ("a.", [1.0, 0.1, 0.0]),
            ("b.", [0.0, 0.0, 1.0]),
            ("c.", [1.0, -0.1, 0.0]),
            ("a. b. c.", [1.0, 0.0, 0.9]),
            ("a. c.", [1.0, 0.0, 0.05]),
            ("x. y.", [1.0, 0.0, 0.0]),
            ("x.", [1.0, 0.0, -0.6]),
            ("y.", [0.0, 1.0, 0.0]),
        ]);
        (pair, expert)
    }

    fn cfg(direction: Direction, rho: f64) -> SnsConfig {
        SnsConfig {
            direction,
            tau_alpha: PerModality::splat(0.5),
            tau_beta: PerModality::splat(0.5),
            rho,
            reinject: true,
        }
    }

    #[test]
    fn off_is_a_no_op() {
        let (pair, expert) = fixture();
        let (out, rec) = apply_sns(&pair, &cfg(Direction::Off, 1.0), &expert, &ContentDescriber);
        assert_eq!(out, pair);
        assert!(!rec.accepted);
    }

    #[test]
    fn forward_accepted_replaces_raw_only() {
        let (pair, expert) = fixture();
        let (out, rec) = apply_sns(&pair, &cfg(Direction::Forward, 1.0), &expert, &ContentDescriber);
        // sim(a b c, x y) = 1/|(1,0,.9)| = 0.743; sim(a c, x y) = 1/|(1,0,.05)| = 0.9988
        assert!(rec.accepted && rec.reinjected);
        assert_eq!(out.raw, vec![Component::text("a."), Component::text("c.")]);
        assert_eq!(out.annotation, pair.annotation);
        assert!((rec.sim_original - 1.0 / (1.81f64).sqrt()).abs() < 1e-12);
        assert!((rec.sim_variant - 1.0 / (1.0025f64).sqrt()).abs() < 1e-12);
        assert_eq!(rec.raw_size_after, 4);
        assert_eq!(rec.raw_size_before, 6);
    }

    #[test]
    fn bidirectional_with_rejected_backward_keeps_annotation() {
        // backward keeps "x." (cos 0.83 to the description "a. c.") but the
        // trimmed pair scores 0.46/(|(1,0,.9)|·|(1,0,-.6)|) = 0.293 < 0.743
        let (pair, expert) = fixture();
        let (out, rec) = apply_sns(&pair, &cfg(Direction::Bidirectional, 1.0), &expert, &ContentDescriber);
        assert!(rec.accepted);
        assert_eq!(out.raw, vec![Component::text("a."), Component::text("c.")]);
        assert_eq!(out.annotation, pair.annotation);
        let sb = rec.sim_backward.unwrap();
        assert!(sb < rec.sim_original);
    }

    #[test]
    fn strict_gate_rejects_everything() {
        let (pair, expert) = fixture();
        let (out, rec) = apply_sns(&pair, &cfg(Direction::Bidirectional, 1.5), &expert, &ContentDescriber);
        assert!(!rec.accepted);
        assert_eq!(out, pair);
        assert_eq!(rec.raw_size_after, rec.raw_size_before);
    }

    #[test]
    fn without_reinjection_pair_is_untouched() {
        let (pair, expert) = fixture();
        let mut c = cfg(Direction::Forward, 1.0);
        c.reinject = false;
        let (out, rec) = apply_sns(&pair, &c, &expert, &ContentDescriber);
        assert!(rec.accepted && !rec.reinjected);
        assert_eq!(out, pair);
    }

    #[test]
    fn backend_failure_passes_pair_through() {
        let pair = PairedSample::from_text("s9", "p", Modality::Text, "q. r.", "z.");
        let expert = lookup(&[]);
        let (out, rec) = apply_sns(&pair, &cfg(Direction::Forward, 1.0), &expert, &ContentDescriber);
        assert_eq!(out, pair);
        assert!(!rec.accepted);
        assert!(rec.note.unwrap().contains("gating expert failed"));
    }

    #[test]
    fn describer_failure_is_noted() {
        let pair = PairedSample::from_text("s2", "p", Modality::Image, "img.png", "x. y.");
        let expert = lookup(&[("img.png", [1.0, 0.0, 0.0]), ("x. y.", [1.0, 0.0, 0.0])]);
        let (out, rec) = apply_sns(&pair, &cfg(Direction::Backward, 1.0), &expert, &TableDescriber::default());
        assert_eq!(out, pair);
        assert!(rec.note.unwrap().contains("describer failed"));
    }

    #[test]
    fn media_backward_uses_describer() {
        let pair = PairedSample::from_text("s3", "p", Modality::Image, "img.png", "x. y.");
        let expert = lookup(&[
            ("img.png", [1.0, 0.0, 0.0]),
            ("x. y.", [1.0, 1.0, 0.0]),
            ("x.", [1.0, 0.0, 0.0]),
            ("y.", [0.0, 1.0, 0.0]),
            ("a cat", [1.0, 0.0, 0.0]),
        ]);
        let mut table = TableDescriber::default();
        table.descriptions.insert("s3".into(), "a cat".into());
        let (out, rec) = apply_sns(&pair, &cfg(Direction::Backward, 1.0), &expert, &table);
        assert!(rec.accepted);
        assert_eq!(out.annotation, vec![Component::text("x.")]);
        assert_eq!(out.raw, pair.raw);
    }

    #[test]
    fn extreme_thresholds_leave_pairs_unchanged() {
        let cfg = SyntheticExpertConfig {
            seed: 1,
            token_seed: 2,
            dim: 16,
            semantic_dim: 12,
            gap_magnitude: 0.5,
            noise_sigma: 0.05,
        };
        let expert = SyntheticExpert::new("g", cfg).unwrap();
        let c = SnsConfig {
            direction: Direction::Bidirectional,
            tau_alpha: PerModality::splat(-1.0),
            tau_beta: PerModality::splat(-1.0),
            rho: 0.0,
            reinject: true,
        };
        let pair = PairedSample::from_text(
            "s",
            "p",
            Modality::Text,
            "red fox jumps. blue sky. green tree.",
            "a fox. the sky.",
        );
        let (out, rec) = apply_sns(&pair, &c, &expert, &ContentDescriber);
        assert_eq!(out, pair);
        assert!(!rec.accepted);
    }

    #[test]
    fn calibration_returns_band_midpoints() {
        let (pair, expert) = fixture();
        let (alpha, beta) = calibrate_thresholds(&[pair], &expert, &ContentDescriber, 0.25).unwrap();
        assert_eq!(alpha.image, 0.25);
        assert!(alpha.text > 0.0 && alpha.text < 1.0);
        assert!(beta.text > -1.0 && beta.text < 1.0);
    }

    #[test]
    fn sample_validation() {
        let mut s = PairedSample::from_text("s", "p", Modality::Text, "a.", "b.");
        assert!(s.validate().is_ok());
        s.annotation.clear();
        assert!(s.validate().is_err());
        let s = PairedSample::from_text("s", "p", Modality::Video, "   ", "b.");
        assert!(s.validate().is_err());
    }
}
