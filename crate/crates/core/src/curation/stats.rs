use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{Blend, CurationError, PoolItem};
use crate::geometry::Modality;
use crate::math;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Share {
    pub key: String,
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlotPoint {
    pub sample_id: String,
    pub x: f64,
    pub y: f64,
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlendStats {
    pub total: usize,
    pub per_pool: Vec<Share>,
    pub per_modality: Vec<Share>,
    /// Empty when no embeddings were supplied.
    pub coordinates: Vec<PlotPoint>,
}

fn shares(counts: BTreeMap<String, usize>, total: usize) -> Vec<Share> {
    counts
        .into_iter()
        .map(|(key, count)| Share { key, count, fraction: if total == 0 { 0.0 } else { count as f64 / total as f64 } })
        .collect()
}

/// Composition of `blend` resolved against pool metadata, plus 2-D principal
/// component coordinates of the selected samples when `embeddings` (parallel
/// to `items`) is given.
pub fn blend_stats<V: AsRef<[f64]>>(
    blend: &Blend,
    items: &[PoolItem],
    embeddings: Option<&[V]>,
) -> Result<BlendStats, CurationError> {
    if let Some(e) = embeddings {
        if e.len() != items.len() {
            return Err(CurationError::LengthMismatch(items.len(), e.len()));
        }
    }
    let lookup: BTreeMap<&str, usize> = items.iter().enumerate().map(|(i, it)| (it.sample_id.as_str(), i)).collect();
    let mut rows = Vec::with_capacity(blend.len());
    for id in blend.ids() {
        rows.push(*lookup.get(id).ok_or_else(|| CurationError::UnknownId(id.into()))?);
    }
    let mut pools = BTreeMap::new();
    let mut modalities = BTreeMap::new();
    for &r in &rows {
        *pools.entry(items[r].pool_id.clone()).or_insert(0) += 1;
        *modalities.entry(String::from(items[r].modality.as_str())).or_insert(0) += 1;
    }
    let coordinates = match embeddings {
        Some(e) if !rows.is_empty() => {
            let pts: Vec<&[f64]> = rows.iter().map(|&r| e[r].as_ref()).collect();
            pca_2d(&pts)
                .into_iter()
                .zip(&rows)
                .map(|([x, y], &r)| PlotPoint {
                    sample_id: items[r].sample_id.clone(),
                    x,
                    y,
                    modality: items[r].modality,
                })
                .collect()
        }
        _ => Vec::new(),
    };
    Ok(BlendStats {
        total: rows.len(),
        per_pool: shares(pools, rows.len()),
        per_modality: shares(modalities, rows.len()),
        coordinates,
    })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and column eigenvectors, sorted by descending value.
fn symmetric_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off <= 1e-26 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (math::abs(theta) + math::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]).then(x.cmp(&y)));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| v.iter().map(|row| row[i]).collect()).collect();
    (values, vectors)
}

/// Projection of centered points onto their top two principal axes. Each
/// axis is signed so its largest-magnitude component is positive.
pub fn pca_2d<V: AsRef<[f64]>>(points: &[V]) -> Vec<[f64; 2]> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let d = points[0].as_ref().len();
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, x) in mean.iter_mut().zip(p.as_ref()) {
            *m += x / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> =
        points.iter().map(|p| p.as_ref().iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for p in &centered {
        for i in 0..d {
            for j in i..d {
                cov[i][j] += p[i] * p[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[i][j] = cov[j][i];
        }
    }
    let (_, mut axes) = symmetric_eigen(cov);
    axes.truncate(2);
    for axis in axes.iter_mut() {
        let lead = axis.iter().copied().fold(0.0f64, |acc, x| if math::abs(x) > math::abs(acc) { x } else { acc });
        if lead < 0.0 {
            axis.iter_mut().for_each(|x| *x = -*x);
        }
    }
    centered
        .iter()
        .map(|p| {
            let x = axes.first().map_or(0.0, |a| math::dot(p, a));
            let y = axes.get(1).map_or(0.0, |a| math::dot(p, a));
            [x, y]
        })
        .collect()
}
