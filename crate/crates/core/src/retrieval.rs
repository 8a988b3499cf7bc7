//! Exact search, Recall@K in both directions, and modality-geometry
//! diagnostics.
//!
//! Ranking is by cosine similarity, descending, ties broken by ascending
//! sample id. Gaps and clustering use Euclidean distance.

use alloc::collections::BinaryHeap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

use crate::geometry::{centroid, Modality};
use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate sample id '{0}' in index")]
    DuplicateId(String),
    #[error("partner '{0}' is not in the index")]
    MissingPartner(String),
    #[error("no samples for modality {0}")]
    EmptyModality(Modality),
    #[error("modality {0} needs at least 2 samples")]
    InsufficientSamples(Modality),
    #[error("raw and anchor sets differ in length ({0} vs {1})")]
    Unpaired(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum IndexSide {
    RawFused,
    AnnotationAnchor,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Hit {
    pub sample_id: String,
    pub score: f64,
}

/// Ranking order: higher score first, then smaller id.
fn ranks_before(score_a: f64, id_a: &str, score_b: f64, id_b: &str) -> bool {
    match score_a.total_cmp(&score_b) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => id_a < id_b,
    }
}

/// Brute-force cosine index over unit vectors.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    side: IndexSide,
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    lookup: alloc::collections::BTreeMap<String, usize>,
}

impl RetrievalIndex {
    pub fn new(side: IndexSide, dim: usize) -> Self {
        Self { side, dim, ids: Vec::new(), vectors: Vec::new(), lookup: Default::default() }
    }

    pub fn build<S: Into<String>, V: Into<Vec<f64>>>(
        side: IndexSide,
        dim: usize,
        entries: impl IntoIterator<Item = (S, V)>,
    ) -> Result<Self, RetrievalError> {
        let mut index = Self::new(side, dim);
        for (id, v) in entries {
            index.insert(id, v)?;
        }
        Ok(index)
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: impl Into<Vec<f64>>) -> Result<(), RetrievalError> {
        let id = id.into();
        let vector = vector.into();
        if vector.len() != self.dim {
            return Err(RetrievalError::DimMismatch { expected: self.dim, got: vector.len() });
        }
        if self.lookup.contains_key(&id) {
            return Err(RetrievalError::DuplicateId(id));
        }
        self.lookup.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn side(&self) -> IndexSide {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn check(&self, query: &[f64]) -> Result<(), RetrievalError> {
        if query.len() != self.dim {
            return Err(RetrievalError::DimMismatch { expected: self.dim, got: query.len() });
        }
        Ok(())
    }

    fn score(&self, query: &[f64], i: usize) -> f64 {
        math::dot(query, &self.vectors[i]).clamp(-1.0, 1.0)
    }

    /// The `k` best entries for `query`; `k` past the index size returns the
    /// full ranking.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<Hit>, RetrievalError> {
        self.check(query)?;
        if k == 0 {
            return Ok(Vec::new());
        }
        // max-heap on "worse", so the root is the current worst kept entry
        struct Entry<'a> {
            score: f64,
            id: &'a str,
        }
        impl PartialEq for Entry<'_> {
            fn eq(&self, o: &Self) -> bool {
                self.cmp(o) == Ordering::Equal
            }
        }
        impl Eq for Entry<'_> {}
        impl PartialOrd for Entry<'_> {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Entry<'_> {
            fn cmp(&self, o: &Self) -> Ordering {
                o.score.total_cmp(&self.score).then_with(|| self.id.cmp(o.id))
            }
        }
        let mut heap: BinaryHeap<Entry<'_>> = BinaryHeap::with_capacity(k + 1);
        for i in 0..self.len() {
            let e = Entry { score: self.score(query, i), id: &self.ids[i] };
            if heap.len() < k {
                heap.push(e);
            } else if let Some(worst) = heap.peek() {
                if ranks_before(e.score, e.id, worst.score, worst.id) {
                    heap.pop();
                    heap.push(e);
                }
            }
        }
        let mut out: Vec<Hit> = heap.into_iter().map(|e| Hit { sample_id: e.id.into(), score: e.score }).collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.sample_id.cmp(&b.sample_id)));
        Ok(out)
    }

    /// 1-based rank of `target` for `query`.
    pub fn rank_of(&self, query: &[f64], target: &str) -> Result<usize, RetrievalError> {
        self.check(query)?;
        let t = *self.lookup.get(target).ok_or_else(|| RetrievalError::MissingPartner(target.into()))?;
        let ts = self.score(query, t);
        let better =
            (0..self.len()).filter(|&i| i != t && ranks_before(self.score(query, i), &self.ids[i], ts, target)).count();
        Ok(better + 1)
    }
}

/// Fraction of ranks within each cutoff.
pub fn recall_from_ranks(ranks: &[usize], ks: &[usize]) -> Vec<f64> {
    ks.iter()
        .map(|&k| {
            if ranks.is_empty() {
                return 0.0;
            }
            ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
        })
        .collect()
}

/// R@K for each cutoff, with queries given as `(vector, partner id)`.
pub fn recall_at_k<V: AsRef<[f64]>>(
    queries: &[(V, &str)],
    index: &RetrievalIndex,
    ks: &[usize],
) -> Result<Vec<f64>, RetrievalError> {
    let ranks = queries.iter().map(|(q, partner)| index.rank_of(q.as_ref(), partner)).collect::<Result<Vec<_>, _>>()?;
    Ok(recall_from_ranks(&ranks, ks))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RecallReport {
    pub ks: Vec<usize>,
    /// Raw (fused) queries against the anchor index.
    pub r2a: Vec<f64>,
    /// Anchor queries against the raw (fused) index.
    pub a2r: Vec<f64>,
}

impl RecallReport {
    /// Average of both directions at cutoff `k`.
    pub fn mean_at(&self, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|x| *x == k)?;
        Some(0.5 * (self.r2a[i] + self.a2r[i]))
    }
}

/// Recall in both directions for pairs sharing an id.
pub fn bidirectional_recall<V: AsRef<[f64]>>(
    ids: &[&str],
    raw: &[V],
    anchors: &[V],
    ks: &[usize],
) -> Result<RecallReport, RetrievalError> {
    if raw.len() != ids.len() || anchors.len() != ids.len() {
        return Err(RetrievalError::Unpaired(raw.len(), anchors.len()));
    }
    let dim = raw.first().map_or(0, |v| v.as_ref().len());
    let anchor_index = RetrievalIndex::build(
        IndexSide::AnnotationAnchor,
        dim,
        ids.iter().zip(anchors).map(|(id, v)| (*id, v.as_ref().to_vec())),
    )?;
    let raw_index =
        RetrievalIndex::build(IndexSide::RawFused, dim, ids.iter().zip(raw).map(|(id, v)| (*id, v.as_ref().to_vec())))?;
    let r2a_q: Vec<(&[f64], &str)> = raw.iter().zip(ids).map(|(v, id)| (v.as_ref(), *id)).collect();
    let a2r_q: Vec<(&[f64], &str)> = anchors.iter().zip(ids).map(|(v, id)| (v.as_ref(), *id)).collect();
    Ok(RecallReport {
        ks: ks.to_vec(),
        r2a: recall_at_k(&r2a_q, &anchor_index, ks)?,
        a2r: recall_at_k(&a2r_q, &raw_index, ks)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModalityGap {
    pub modality: Modality,
    pub count: usize,
    /// Distance between the raw centroid and the centroid of the paired anchors.
    pub gap: f64,
    /// Mean pairwise distance among raw embeddings of this modality.
    pub intra: Option<f64>,
    /// Mean distance from raw embeddings of this modality to raw embeddings of
    /// the other modalities.
    pub inter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GapReport {
    pub per_modality: Vec<ModalityGap>,
    pub average: f64,
}

impl GapReport {
    pub fn gap(&self, m: Modality) -> Option<f64> {
        self.per_modality.iter().find(|g| g.modality == m).map(|g| g.gap)
    }
}

/// Relative change in percent from `reference` to `value`.
pub fn reduction_percent(reference: f64, value: f64) -> f64 {
    (value - reference) / reference * 100.0
}

fn mean_pairwise(a: &[&[f64]], b: &[&[f64]], same: bool) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, x) in a.iter().enumerate() {
        let rest = if same { &b[i + 1..] } else { b };
        for y in rest {
            total += math::l2_distance(x, y);
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

fn by_modality<'a, V: AsRef<[f64]>>(modalities: &[Modality], vs: &'a [V]) -> [Vec<&'a [f64]>; 4] {
    let mut out: [Vec<&[f64]>; 4] = Default::default();
    for (m, v) in modalities.iter().zip(vs) {
        out[m.index()].push(v.as_ref());
    }
    out
}

/// Per-modality gap between raw (or fused) embeddings and their paired
/// anchors. Only modalities present in `modalities` are reported; `raw[i]`
/// pairs with `anchors[i]`.
pub fn modality_gap<V: AsRef<[f64]>>(
    modalities: &[Modality],
    raw: &[V],
    anchors: &[V],
) -> Result<GapReport, RetrievalError> {
    if raw.len() != anchors.len() || raw.len() != modalities.len() {
        return Err(RetrievalError::Unpaired(raw.len(), anchors.len()));
    }
    let raws = by_modality(modalities, raw);
    let anchs = by_modality(modalities, anchors);
    let mut per_modality = Vec::new();
    for m in Modality::ALL {
        let (r, a) = (&raws[m.index()], &anchs[m.index()]);
        if r.is_empty() {
            continue;
        }
        let rc = centroid(r).map_err(|_| RetrievalError::EmptyModality(m))?;
        let ac = centroid(a).map_err(|_| RetrievalError::EmptyModality(m))?;
        if rc.len() != ac.len() {
            return Err(RetrievalError::DimMismatch { expected: rc.len(), got: ac.len() });
        }
        let others: Vec<&[f64]> =
            Modality::ALL.iter().filter(|o| **o != m).flat_map(|o| raws[o.index()].iter().copied()).collect();
        per_modality.push(ModalityGap {
            modality: m,
            count: r.len(),
            gap: math::l2_distance(&rc, &ac),
            intra: mean_pairwise(r, r, true),
            inter: mean_pairwise(r, &others, false),
        });
    }
    if per_modality.is_empty() {
        return Err(RetrievalError::EmptyModality(Modality::Text));
    }
    let average = per_modality.iter().map(|g| g.gap).sum::<f64>() / per_modality.len() as f64;
    Ok(GapReport { per_modality, average })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModalityPair {
    pub a: Modality,
    pub b: Modality,
    pub intra_a: f64,
    pub intra_b: f64,
    pub inter: f64,
}

impl ModalityPair {
    pub fn separated(&self) -> bool {
        self.intra_a < self.inter && self.intra_b < self.inter
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClusteringReport {
    pub pairs: Vec<ModalityPair>,
    /// Every modality pair has intra-modality mean distances strictly below
    /// the inter-modality mean distance.
    pub clustered: bool,
}

/// Checks whether embeddings cluster by modality.
pub fn clustering_diagnostic<V: AsRef<[f64]>>(
    modalities: &[Modality],
    points: &[V],
) -> Result<ClusteringReport, RetrievalError> {
    if modalities.len() != points.len() {
        return Err(RetrievalError::Unpaired(modalities.len(), points.len()));
    }
    let groups = by_modality(modalities, points);
    let present: Vec<Modality> = Modality::ALL.into_iter().filter(|m| !groups[m.index()].is_empty()).collect();
    let mut intra = [0.0; 4];
    for m in &present {
        let g = &groups[m.index()];
        intra[m.index()] = mean_pairwise(g, g, true).ok_or(RetrievalError::InsufficientSamples(*m))?;
    }
    let mut pairs = Vec::new();
    for (i, a) in present.iter().enumerate() {
        for b in &present[i + 1..] {
            let inter = mean_pairwise(&groups[a.index()], &groups[b.index()], false).unwrap_or(0.0);
            pairs.push(ModalityPair { a: *a, b: *b, intra_a: intra[a.index()], intra_b: intra[b.index()], inter });
        }
    }
    let clustered = !pairs.is_empty() && pairs.iter().all(ModalityPair::separated);
    Ok(ClusteringReport { pairs, clustered })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn idx(entries: &[(&str, [f64; 2])]) -> RetrievalIndex {
        RetrievalIndex::build(IndexSide::AnnotationAnchor, 2, entries.iter().map(|(i, v)| (*i, v.to_vec()))).unwrap()
    }

    #[test]
    fn top_k_examples() {
        let index = idx(&[("a", [1.0, 0.0]), ("b", [0.0, 1.0])]);
        assert_eq!(index.top_k(&[1.0, 0.0], 1).unwrap(), vec![Hit { sample_id: "a".into(), score: 1.0 }]);
        assert!(index.top_k(&[1.0, 0.0], 0).unwrap().is_empty());
        let tied = idx(&[("z", [0.6, 0.8]), ("m", [0.6, -0.8])]);
        let hits = tied.top_k(&[1.0, 0.0], 2).unwrap();
        assert_eq!(hits[0].sample_id, "m");
        assert_eq!(hits[1].sample_id, "z");
        assert_eq!(index.top_k(&[1.0, 0.0], 10).unwrap().len(), 2);
    }

    #[test]
    fn index_guards() {
        let mut index = RetrievalIndex::new(IndexSide::RawFused, 2);
        index.insert("a", vec![1.0, 0.0]).unwrap();
        assert_eq!(index.insert("a", vec![0.0, 1.0]), Err(RetrievalError::DuplicateId("a".into())));
        assert!(matches!(index.insert("b", vec![1.0]), Err(RetrievalError::DimMismatch { .. })));
        assert!(matches!(index.top_k(&[1.0], 1), Err(RetrievalError::DimMismatch { .. })));
        assert_eq!(index.rank_of(&[1.0, 0.0], "q"), Err(RetrievalError::MissingPartner("q".into())));
    }

    #[test]
    fn recall_from_rank_examples() {
        let r = recall_from_ranks(&[1, 2, 5], &[1, 3, 5]);
        assert!((r[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((r[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r[2], 1.0);
        assert_eq!(recall_from_ranks(&[1, 1, 1], &[1, 2, 10]), vec![1.0; 3]);
    }

    #[test]
    fn identical_spaces_are_perfect() {
        let ids = ["a", "b", "c"];
        let v = [vec![1.0, 0.0], vec![0.0, 1.0], vec![-0.6, 0.8]];
        let r = bidirectional_recall(&ids, &v, &v, &[1, 3]).unwrap();
        assert_eq!(r.r2a, vec![1.0, 1.0]);
        assert_eq!(r.a2r, vec![1.0, 1.0]);
        assert_eq!(r.mean_at(1), Some(1.0));
        let g = modality_gap(&[Modality::Image, Modality::Image, Modality::Text], &v, &v).unwrap();
        assert!(g.per_modality.iter().all(|m| m.gap == 0.0));
        assert_eq!(g.average, 0.0);
    }

    #[test]
    fn gap_is_centroid_distance() {
        let raw = [vec![1.0, 0.0], vec![1.0, 0.0]];
        let anchors = [vec![0.0, 1.0], vec![0.0, -1.0]];
        let g = modality_gap(&[Modality::Audio, Modality::Audio], &raw, &anchors).unwrap();
        assert_eq!(g.gap(Modality::Audio), Some(1.0));
        assert_eq!(g.gap(Modality::Video), None);
    }

    #[test]
    fn reduction_matches_reported_table_row() {
        let r = reduction_percent(44.29, 0.081);
        assert!((r - -99.8).abs() < 0.05, "{r}");
    }

    #[test]
    fn clustering_examples() {
        let mods = [Modality::Text, Modality::Text, Modality::Image, Modality::Image];
        let pts = [vec![1.0, 0.0], vec![0.99, 0.01], vec![-1.0, 0.0], vec![-0.99, 0.02]];
        assert!(clustering_diagnostic(&mods, &pts).unwrap().clustered);
        let same = vec![vec![0.0, 1.0]; 4];
        let rep = clustering_diagnostic(&mods, &same).unwrap();
        assert!(!rep.clustered);
        assert_eq!(rep.pairs[0].inter, 0.0);
        assert_eq!(
            clustering_diagnostic(&[Modality::Text, Modality::Image], &pts[..2]),
            Err(RetrievalError::InsufficientSamples(Modality::Text))
        );
    }
}
