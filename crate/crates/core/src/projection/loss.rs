//! The three-term objective and its gradients with respect to fused vectors.
//!
//! Anchors are constants: gradients are only ever returned for fused points.
//! For the bias terms the batch is the union of fused points (grouped by the
//! raw sample's modality) and anchors (grouped as text).

use alloc::vec::Vec;

use super::ProjectionError;
use crate::geometry::Modality;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossWeights {
    pub task: f64,
    pub cluster: f64,
    pub scale: f64,
    pub temperature: f64,
}

impl LossWeights {
    /// Task 0.9, scale 0.1, no cluster term.
    pub const RETRIEVAL: LossWeights = LossWeights { task: 0.9, cluster: 0.0, scale: 0.1, temperature: 0.07 };
    /// Task 0.9 with 0.05 on each bias term. The lower temperature lets the
    /// task term saturate so the bias terms can close the gap.
    pub const GAP_COLLAPSE: LossWeights = LossWeights { task: 0.9, cluster: 0.05, scale: 0.05, temperature: 0.03 };

    pub fn new(task: f64, cluster: f64, scale: f64) -> Self {
        Self { task, cluster, scale, temperature: 0.07 }
    }

    pub fn validate(&self) -> Result<(), ProjectionError> {
        let ws = [self.task, self.cluster, self.scale];
        if ws.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(ProjectionError::InvalidConfig("loss weights must be finite and >= 0".into()));
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(ProjectionError::InvalidConfig("at least one loss weight must be positive".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(ProjectionError::InvalidConfig("temperature must be positive".into()));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::RETRIEVAL
    }
}

/// Which in-batch vectors serve as negatives for a fused query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Negatives {
    /// The other pairs' anchors.
    #[default]
    Annotations,
    /// The other pairs' anchors and fused vectors.
    AnnotationsAndFused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskOptions {
    pub negatives: Negatives,
    /// Average the fused→anchor direction with anchor→fused.
    pub symmetric: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub task: f64,
    pub cluster: f64,
    pub scale: f64,
    pub total: f64,
}

#[derive(Clone, Copy)]
enum Cand {
    Anchor(usize),
    Fused(usize),
}

fn check_batch<V: AsRef<[f64]>>(fused: &[V], anchors: &[V]) -> Result<usize, ProjectionError> {
    if fused.len() != anchors.len() {
        return Err(ProjectionError::InvalidConfig("fused and anchor counts differ".into()));
    }
    if fused.len() < 2 {
        return Err(ProjectionError::BatchTooSmall(fused.len()));
    }
    let dim = fused[0].as_ref().len();
    for v in fused.iter().chain(anchors) {
        if v.as_ref().len() != dim {
            return Err(ProjectionError::DimMismatch { expected: dim, got: v.as_ref().len() });
        }
    }
    Ok(dim)
}

/// InfoNCE over the batch and, optionally, its gradient w.r.t. each fused
/// vector. For query `i` the positive is anchor `i`; the denominator runs over
/// every candidate except the query itself, positive included.
pub fn task_with_grad<V: AsRef<[f64]>>(
    fused: &[V],
    anchors: &[V],
    temperature: f64,
    opts: TaskOptions,
    want_grad: bool,
) -> Result<(f64, Vec<Vec<f64>>), ProjectionError> {
    let dim = check_batch(fused, anchors)?;
    let n = fused.len();
    let vec_of = |c: Cand| -> &[f64] {
        match c {
            Cand::Anchor(j) => anchors[j].as_ref(),
            Cand::Fused(j) => fused[j].as_ref(),
        }
    };
    let mut grads = if want_grad { alloc::vec![alloc::vec![0.0; dim]; n] } else { Vec::new() };
    let directions: &[bool] = if opts.symmetric { &[true, false] } else { &[true] };
    let scale = 1.0 / (n as f64 * directions.len() as f64);
    let mut total = 0.0;
    let mut cands: Vec<Cand> = Vec::with_capacity(2 * n);
    let mut logits: Vec<f64> = Vec::with_capacity(2 * n);

    for &fused_query in directions {
        for i in 0..n {
            cands.clear();
            // positive first
            if fused_query {
                cands.extend((0..n).map(Cand::Anchor));
                if opts.negatives == Negatives::AnnotationsAndFused {
                    cands.extend((0..n).filter(|&k| k != i).map(Cand::Fused));
                }
            } else {
                cands.extend((0..n).map(Cand::Fused));
                if opts.negatives == Negatives::AnnotationsAndFused {
                    cands.extend((0..n).filter(|&k| k != i).map(Cand::Anchor));
                }
            }
            let query = if fused_query { fused[i].as_ref() } else { anchors[i].as_ref() };
            logits.clear();
            logits.extend(cands.iter().map(|c| math::dot(query, vec_of(*c)) / temperature));
            // the positive sits at index i of the leading block
            total += math::log_sum_exp(&logits) - logits[i];
            if !want_grad {
                continue;
            }
            let probs = math::softmax(&logits);
            for (k, (c, p)) in cands.iter().zip(&probs).enumerate() {
                let coef = (p - if k == i { 1.0 } else { 0.0 }) * scale / temperature;
                if coef == 0.0 {
                    continue;
                }
                let cv = vec_of(*c);
                if fused_query {
                    for (g, x) in grads[i].iter_mut().zip(cv) {
                        *g += coef * x;
                    }
                }
                if let Cand::Fused(j) = c {
                    for (g, x) in grads[*j].iter_mut().zip(query) {
                        *g += coef * x;
                    }
                }
            }
        }
    }
    Ok((total * scale, grads))
}

pub fn loss_task<V: AsRef<[f64]>>(
    fused: &[V],
    anchors: &[V],
    temperature: f64,
    opts: TaskOptions,
) -> Result<f64, ProjectionError> {
    Ok(task_with_grad(fused, anchors, temperature, opts, false)?.0)
}

struct Groups {
    count: usize,
    sizes: Vec<usize>,
    means: Vec<Vec<f64>>,
    mean: Vec<f64>,
}

fn groups_of<V: AsRef<[f64]>>(points: &[V], group_of: &[usize], count: usize) -> Result<Groups, ProjectionError> {
    if points.len() != group_of.len() {
        return Err(ProjectionError::InvalidConfig("every point needs a group".into()));
    }
    let first = points.first().ok_or(ProjectionError::EmptyModality(0))?;
    let dim = first.as_ref().len();
    let mut sizes = alloc::vec![0usize; count];
    let mut means = alloc::vec![alloc::vec![0.0; dim]; count];
    let mut mean = alloc::vec![0.0; dim];
    let mut seen = 0usize;
    for (p, &g) in points.iter().zip(group_of) {
        if g >= count {
            return Err(ProjectionError::InvalidConfig(alloc::format!("group {g} out of range")));
        }
        let p = p.as_ref();
        if p.len() != dim {
            return Err(ProjectionError::DimMismatch { expected: dim, got: p.len() });
        }
        sizes[g] += 1;
        seen += 1;
        // running means keep the centroid of identical points exact
        for ((m, a), x) in means[g].iter_mut().zip(mean.iter_mut()).zip(p) {
            *m += (x - *m) / sizes[g] as f64;
            *a += (x - *a) / seen as f64;
        }
    }
    if let Some(empty) = sizes.iter().position(|s| *s == 0) {
        return Err(ProjectionError::EmptyModality(empty));
    }
    Ok(Groups { count, sizes, means, mean })
}

/// `Σ_m ‖μ_m − μ‖²` and its gradient per point.
pub fn cluster_with_grad<V: AsRef<[f64]>>(
    points: &[V],
    group_of: &[usize],
    group_count: usize,
) -> Result<(f64, Vec<Vec<f64>>), ProjectionError> {
    let g = groups_of(points, group_of, group_count)?;
    let n = points.len() as f64;
    let diffs: Vec<Vec<f64>> = g.means.iter().map(|m| m.iter().zip(&g.mean).map(|(a, b)| a - b).collect()).collect();
    let loss = diffs.iter().map(|d| math::dot(d, d)).sum();
    let mut diff_sum = alloc::vec![0.0; g.mean.len()];
    for d in &diffs {
        for (s, x) in diff_sum.iter_mut().zip(d) {
            *s += x;
        }
    }
    let grads = group_of
        .iter()
        .map(|&k| {
            let nk = g.sizes[k] as f64;
            diffs[k].iter().zip(&diff_sum).map(|(d, s)| 2.0 * d / nk - 2.0 * s / n).collect()
        })
        .collect();
    Ok((loss, grads))
}

pub fn loss_cluster<V: AsRef<[f64]>>(
    points: &[V],
    group_of: &[usize],
    group_count: usize,
) -> Result<f64, ProjectionError> {
    Ok(cluster_with_grad(points, group_of, group_count)?.0)
}

fn unit_or_zero(v: Vec<f64>) -> (Vec<f64>, f64) {
    let n = math::norm(&v);
    if n > 0.0 {
        (v.into_iter().map(|x| x / n).collect(), n)
    } else {
        (v, 0.0)
    }
}

/// `Σ_m |σ_m − σ|` and its (sub)gradient per point, taking 0 at the kink.
pub fn scale_with_grad<V: AsRef<[f64]>>(
    points: &[V],
    group_of: &[usize],
    group_count: usize,
) -> Result<(f64, Vec<Vec<f64>>), ProjectionError> {
    let g = groups_of(points, group_of, group_count)?;
    let n = points.len() as f64;
    let dim = g.mean.len();

    let mut u = Vec::with_capacity(points.len());
    let mut v = Vec::with_capacity(points.len());
    let mut sigma_m = alloc::vec![0.0; g.count];
    let mut sigma = 0.0;
    let mut u_bar = alloc::vec![alloc::vec![0.0; dim]; g.count];
    let mut v_bar = alloc::vec![0.0; dim];
    for (p, &k) in points.iter().zip(group_of) {
        let p = p.as_ref();
        let (uk, dk) = unit_or_zero(p.iter().zip(&g.means[k]).map(|(a, b)| a - b).collect());
        let (vk, dv) = unit_or_zero(p.iter().zip(&g.mean).map(|(a, b)| a - b).collect());
        sigma_m[k] += dk;
        sigma += dv;
        for (s, x) in u_bar[k].iter_mut().zip(&uk) {
            *s += x;
        }
        for (s, x) in v_bar.iter_mut().zip(&vk) {
            *s += x;
        }
        u.push(uk);
        v.push(vk);
    }
    for (k, s) in sigma_m.iter_mut().enumerate() {
        let nk = g.sizes[k] as f64;
        *s /= nk;
        for x in &mut u_bar[k] {
            *x /= nk;
        }
    }
    sigma /= n;
    for x in &mut v_bar {
        *x /= n;
    }

    let signs: Vec<f64> = sigma_m
        .iter()
        .map(|s| match s.partial_cmp(&sigma) {
            Some(core::cmp::Ordering::Greater) => 1.0,
            Some(core::cmp::Ordering::Less) => -1.0,
            _ => 0.0,
        })
        .collect();
    let loss = sigma_m.iter().map(|s| math::abs(s - sigma)).sum();
    let sign_sum: f64 = signs.iter().sum();
    let grads = group_of
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let nk = g.sizes[k] as f64;
            (0..dim).map(|c| signs[k] * (u[i][c] - u_bar[k][c]) / nk - sign_sum * (v[i][c] - v_bar[c]) / n).collect()
        })
        .collect();
    Ok((loss, grads))
}

pub fn loss_scale<V: AsRef<[f64]>>(
    points: &[V],
    group_of: &[usize],
    group_count: usize,
) -> Result<f64, ProjectionError> {
    Ok(scale_with_grad(points, group_of, group_count)?.0)
}

/// A training batch in the fused space.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, V> {
    pub fused: &'a [V],
    pub anchors: &'a [V],
    /// Raw-sample modality of each fused vector.
    pub modalities: &'a [Modality],
}

impl<V: AsRef<[f64]>> Batch<'_, V> {
    /// Fused points followed by anchors, with dense group ids over the
    /// modalities present (anchors belong to text).
    fn grouped(&self) -> (Vec<&[f64]>, Vec<usize>, usize) {
        let mut present = [false; 4];
        for m in self.modalities {
            present[m.index()] = true;
        }
        present[Modality::Text.index()] = true;
        let mut dense = [0usize; 4];
        let mut count = 0;
        for (slot, p) in dense.iter_mut().zip(present) {
            if p {
                *slot = count;
                count += 1;
            }
        }
        let points = self.fused.iter().chain(self.anchors).map(AsRef::as_ref).collect();
        let groups = self
            .modalities
            .iter()
            .map(|m| dense[m.index()])
            .chain(core::iter::repeat_n(dense[Modality::Text.index()], self.anchors.len()))
            .collect();
        (points, groups, count)
    }
}

/// Weighted total with per-term breakdown and, when asked, the gradient of
/// the total w.r.t. each fused vector. Terms with zero weight are skipped.
pub fn total_with_grad<V: AsRef<[f64]>>(
    batch: &Batch<'_, V>,
    weights: &LossWeights,
    opts: TaskOptions,
    want_grad: bool,
) -> Result<(LossBreakdown, Vec<Vec<f64>>), ProjectionError> {
    weights.validate()?;
    if batch.modalities.len() != batch.fused.len() {
        return Err(ProjectionError::InvalidConfig("every fused vector needs a modality".into()));
    }
    let dim = check_batch(batch.fused, batch.anchors)?;
    let n = batch.fused.len();
    let mut out = LossBreakdown::default();
    let mut grads = if want_grad { alloc::vec![alloc::vec![0.0; dim]; n] } else { Vec::new() };
    let mut add = |w: f64, g: &[Vec<f64>]| {
        for (acc, gi) in grads.iter_mut().zip(g) {
            for (a, x) in acc.iter_mut().zip(gi) {
                *a += w * x;
            }
        }
    };

    if weights.task > 0.0 {
        let (l, g) = task_with_grad(batch.fused, batch.anchors, weights.temperature, opts, want_grad)?;
        out.task = l;
        add(weights.task, &g);
    }
    if weights.cluster > 0.0 || weights.scale > 0.0 {
        let (points, groups, count) = batch.grouped();
        if weights.cluster > 0.0 {
            let (l, g) = cluster_with_grad(&points, &groups, count)?;
            out.cluster = l;
            if want_grad {
                add(weights.cluster, &g[..n]);
            }
        }
        if weights.scale > 0.0 {
            let (l, g) = scale_with_grad(&points, &groups, count)?;
            out.scale = l;
            if want_grad {
                add(weights.scale, &g[..n]);
            }
        }
    }
    out.total = weights.task * out.task + weights.cluster * out.cluster + weights.scale * out.scale;
    Ok((out, grads))
}

/// Evaluates every term (regardless of weight) and the weighted total.
pub fn loss_total<V: AsRef<[f64]>>(
    batch: &Batch<'_, V>,
    weights: &LossWeights,
    opts: TaskOptions,
) -> Result<LossBreakdown, ProjectionError> {
    weights.validate()?;
    check_batch(batch.fused, batch.anchors)?;
    let task = loss_task(batch.fused, batch.anchors, weights.temperature, opts)?;
    let (points, groups, count) = batch.grouped();
    let cluster = loss_cluster(&points, &groups, count)?;
    let scale = loss_scale(&points, &groups, count)?;
    Ok(LossBreakdown {
        task,
        cluster,
        scale,
        total: weights.task * task + weights.cluster * cluster + weights.scale * scale,
    })
}
