//! Ablation grids.
//!
//! * `rho`: nucleus subsampling at each gate ratio, then R@10 of every expert
//!   in both directions, plus the acceptance rate.
//! * `direction`: the four SNS directions at ρ = 1.
//! * `tau`: a (τα, τβ) grid, R@10 per raw modality under the gating expert.
//! * `projection`: loss weightings × depths 1 to 3, mean R@1/3/5 of the fused
//!   space on the holdout.

use std::collections::BTreeMap;
use std::path::Path;

use nucleus_core::retrieval::{bidirectional_recall, IndexSide, RetrievalIndex};
use nucleus_core::sns::{Direction, PairedSample, PerModality, SnsConfig};
use nucleus_core::Modality;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::commands::{fit, resolve_sns, run_sns, Context, Run};
use crate::config::EngineConfig;
use crate::dataset::{read_dataset, Record};
use crate::error::{EngineError, Result};
use crate::manifest::{write_json, write_text};
use crate::pipeline::{build_describer, build_experts, embed_records, split, SharedDescriber, SharedExpert};
use crate::report::{fmt4, Table};

pub const RHO_GRID: [f64; 7] = [0.0, 0.8, 0.95, 1.0, 1.02, 1.05, 1.1];
pub const TAU_GRID: [f64; 3] = [0.2, 0.5, 0.8];
pub const DEPTHS: [usize; 3] = [1, 2, 3];
/// (task, scale, cluster) weightings of the projection grid.
pub const LAMBDA_GRID: [(f64, f64, f64); 9] = [
    (0.9, 0.1, 0.0),
    (0.99, 1e-3, 0.01),
    (0.99, 1e-4, 0.01),
    (0.999, 1e-4, 1e-3),
    (1.0, 0.0, 0.0),
    (0.95, 0.01, 0.05),
    (0.9, 0.05, 0.05),
    (0.9, 0.0, 0.1),
    (0.999, 1e-5, 1e-4),
];
pub const SNS_K: usize = 10;
pub const PROJECTION_KS: [usize; 3] = [1, 3, 5];
pub const NOTE: &str = "Values are desk-scale measurements on the supplied corpus and synthetic or configured experts; they are not reference figures.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    Rho,
    Direction,
    Tau,
    Projection,
}

impl Grid {
    pub const ALL: [Grid; 4] = [Grid::Rho, Grid::Direction, Grid::Tau, Grid::Projection];

    pub fn as_str(self) -> &'static str {
        match self {
            Grid::Rho => "rho",
            Grid::Direction => "direction",
            Grid::Tau => "tau",
            Grid::Projection => "projection",
        }
    }
}

impl std::str::FromStr for Grid {
    type Err = EngineError;

    fn from_str(s: &str) -> Result<Self> {
        Grid::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| EngineError::Validation(format!("unknown grid '{s}' (rho, direction, tau, projection)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpertRecall {
    pub expert: String,
    pub r2a: f64,
    pub a2r: f64,
}

/// One SNS setting: acceptance and R@10 of every expert.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnsCell {
    pub label: String,
    pub rho: f64,
    pub direction: Direction,
    pub acceptance_rate: f64,
    pub recall: Vec<ExpertRecall>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauCell {
    pub tau_alpha: f64,
    pub tau_beta: f64,
    pub acceptance_rate: f64,
    /// Per raw modality: (R2A, A2R) at k = 10.
    pub per_modality: BTreeMap<Modality, (f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionCell {
    pub task: f64,
    pub scale: f64,
    pub cluster: f64,
    pub layers: usize,
    /// Mean of A2R and R2A at 1, 3, 5.
    pub recall: Vec<f64>,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "grid", rename_all = "lowercase")]
pub enum Ablation {
    Rho { note: &'static str, k: usize, cells: Vec<SnsCell> },
    Direction { note: &'static str, k: usize, cells: Vec<SnsCell> },
    Tau { note: &'static str, k: usize, cells: Vec<TauCell> },
    Projection { note: &'static str, ks: Vec<usize>, steps: usize, cells: Vec<ProjectionCell> },
}

struct Setup<'a> {
    cfg: &'a EngineConfig,
    records: &'a [Record],
    experts: &'a [SharedExpert],
    describer: &'a SharedDescriber,
    base: SnsConfig,
}

impl Setup<'_> {
    fn gating(&self) -> &SharedExpert {
        &self.experts[self.cfg.gating_index()]
    }

    fn trimmed(&self, sns: &SnsConfig) -> (Vec<Record>, f64) {
        let (out, logs) = run_sns(self.records, sns, self.gating(), self.describer);
        let rate = logs.iter().filter(|l| l.accepted).count() as f64 / logs.len().max(1) as f64;
        (out, rate)
    }

    fn sns_cell(&self, label: String, sns: &SnsConfig) -> Result<SnsCell> {
        let (out, rate) = self.trimmed(sns);
        let (table, _) = embed_records(self.cfg, self.experts, self.describer.as_ref(), &out)?;
        let ids: Vec<&str> = table.sample_ids.iter().map(String::as_str).collect();
        let recall = (0..self.experts.len())
            .map(|k| {
                let r = bidirectional_recall(&ids, &table.raw[k], &table.annotation[k], &[SNS_K])?;
                Ok(ExpertRecall { expert: table.expert_ids[k].clone(), r2a: r.r2a[0], a2r: r.a2r[0] })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SnsCell { label, rho: sns.rho, direction: sns.direction, acceptance_rate: rate, recall })
    }
}

/// Per-modality recall at `k` of raw queries against all annotations and the
/// reverse.
fn per_modality_recall(
    ids: &[String],
    mods: &[Modality],
    raw: &[Vec<f64>],
    ann: &[Vec<f64>],
    k: usize,
) -> Result<BTreeMap<Modality, (f64, f64)>> {
    let dim = raw.first().map_or(0, Vec::len);
    let ann_index =
        RetrievalIndex::build(IndexSide::AnnotationAnchor, dim, ids.iter().cloned().zip(ann.iter().cloned()))?;
    let raw_index = RetrievalIndex::build(IndexSide::RawFused, dim, ids.iter().cloned().zip(raw.iter().cloned()))?;
    let hits: Vec<(Modality, bool, bool)> = (0..ids.len())
        .into_par_iter()
        .map(|i| {
            let r2a = ann_index.rank_of(&raw[i], &ids[i])? <= k;
            let a2r = raw_index.rank_of(&ann[i], &ids[i])? <= k;
            Ok((mods[i], r2a, a2r))
        })
        .collect::<Result<_>>()?;
    let mut acc: BTreeMap<Modality, (usize, usize, usize)> = BTreeMap::new();
    for (m, r2a, a2r) in hits {
        let e = acc.entry(m).or_default();
        e.0 += 1;
        e.1 += usize::from(r2a);
        e.2 += usize::from(a2r);
    }
    Ok(acc.into_iter().map(|(m, (n, a, b))| (m, (a as f64 / n as f64, b as f64 / n as f64))).collect())
}

pub fn run_grid(cfg: &EngineConfig, records: &[Record], grid: Grid, jobs: usize) -> Result<Ablation> {
    let experts = build_experts(cfg, jobs)?;
    let describer = build_describer(cfg);
    let pairs: Vec<PairedSample> = records.iter().map(|r| r.pair.clone()).collect();
    let needs_sns = grid != Grid::Projection;
    let base = if needs_sns {
        resolve_sns(cfg, &pairs, &experts[cfg.gating_index()], &describer)?
    } else {
        SnsConfig::default()
    };
    let setup = Setup { cfg, records, experts: &experts, describer: &describer, base };
    Ok(match grid {
        Grid::Rho => {
            let cells = RHO_GRID
                .iter()
                .map(|&rho| setup.sns_cell(format!("rho={rho:.2}"), &SnsConfig { rho, ..setup.base.clone() }))
                .collect::<Result<_>>()?;
            Ablation::Rho { note: NOTE, k: SNS_K, cells }
        }
        Grid::Direction => {
            let cells = Direction::ALL
                .iter()
                .map(|&direction| {
                    setup.sns_cell(direction.as_str().into(), &SnsConfig { direction, rho: 1.0, ..setup.base.clone() })
                })
                .collect::<Result<_>>()?;
            Ablation::Direction { note: NOTE, k: SNS_K, cells }
        }
        Grid::Tau => {
            let g = cfg.gating_index();
            let mut cells = Vec::new();
            for &ta in &TAU_GRID {
                for &tb in &TAU_GRID {
                    let sns = SnsConfig {
                        tau_alpha: PerModality::splat(ta),
                        tau_beta: PerModality::splat(tb),
                        ..setup.base.clone()
                    };
                    let (out, rate) = setup.trimmed(&sns);
                    let gating = std::slice::from_ref(&experts[g]);
                    let sub = EngineConfig { experts: vec![cfg.experts[g].clone()], ..cfg.clone() };
                    let (table, _) = embed_records(&sub, gating, describer.as_ref(), &out)?;
                    let per_modality = per_modality_recall(
                        &table.sample_ids,
                        &table.modalities,
                        &table.raw[0],
                        &table.annotation[0],
                        SNS_K,
                    )?;
                    cells.push(TauCell { tau_alpha: ta, tau_beta: tb, acceptance_rate: rate, per_modality });
                }
            }
            Ablation::Tau { note: NOTE, k: SNS_K, cells }
        }
        Grid::Projection => {
            let (table, _) = embed_records(cfg, &experts, describer.as_ref(), records)?;
            let (train_idx, eval_idx) = split(cfg, table.len());
            let ids: Vec<&str> = eval_idx.iter().map(|&i| table.sample_ids[i].as_str()).collect();
            let mods: Vec<Modality> = eval_idx.iter().map(|&i| table.modalities[i]).collect();
            let anchors: Vec<Vec<f64>> =
                eval_idx.iter().map(|&i| table.annotation[cfg.anchor_index()][i].clone()).collect();
            let jobs: Vec<((f64, f64, f64), usize)> =
                LAMBDA_GRID.iter().flat_map(|&l| DEPTHS.iter().map(move |&d| (l, d))).collect();
            let cells = jobs
                .par_iter()
                .map(|&((task, scale, cluster), layers)| {
                    let mut c = cfg.clone();
                    c.loss.task = task;
                    c.loss.scale = scale;
                    c.loss.cluster = cluster;
                    c.train.layers = layers;
                    let (model, _) = fit(&c, &table, &train_idx)?;
                    let fused = table.project(&model, &eval_idx)?;
                    let r = bidirectional_recall(&ids, &fused, &anchors, &PROJECTION_KS)?;
                    let gap = nucleus_core::retrieval::modality_gap(&mods, &fused, &anchors)?.average;
                    let recall = PROJECTION_KS.iter().map(|&k| r.mean_at(k).unwrap_or(0.0)).collect();
                    Ok(ProjectionCell { task, scale, cluster, layers, recall, gap })
                })
                .collect::<Result<_>>()?;
            Ablation::Projection { note: NOTE, ks: PROJECTION_KS.to_vec(), steps: cfg.train.steps, cells }
        }
    })
}

fn sns_tables(k: usize, cells: &[SnsCell], by_rho: bool) -> String {
    let experts: Vec<String> =
        cells.first().map(|c| c.recall.iter().map(|r| r.expert.clone()).collect()).unwrap_or_default();
    let mut out = String::new();
    if by_rho {
        for (title, pick) in [
            (format!("(a) Raw -> Annotation R@{k}"), (|r: &ExpertRecall| r.r2a) as fn(&ExpertRecall) -> f64),
            (format!("(b) Annotation -> Raw R@{k}"), |r: &ExpertRecall| r.a2r),
        ] {
            let mut t =
                Table::new(title, std::iter::once("expert".to_string()).chain(cells.iter().map(|c| c.label.clone())));
            for (e, name) in experts.iter().enumerate() {
                t.push(std::iter::once(name.clone()).chain(cells.iter().map(|c| fmt4(pick(&c.recall[e])))).collect());
            }
            t.push(
                std::iter::once("acceptance".to_string())
                    .chain(cells.iter().map(|c| fmt4(c.acceptance_rate)))
                    .collect(),
            );
            out.push_str(&t.render());
            out.push('\n');
        }
    } else {
        let headers = std::iter::once("configuration".to_string())
            .chain(experts.iter().map(|e| format!("R2A {e}")))
            .chain(experts.iter().map(|e| format!("A2R {e}")))
            .chain(["acceptance".to_string()]);
        let mut t = Table::new(format!("SNS direction, R@{k} at rho=1.00"), headers);
        for c in cells {
            let mut row = vec![c.label.clone()];
            row.extend(c.recall.iter().map(|r| fmt4(r.r2a)));
            row.extend(c.recall.iter().map(|r| fmt4(r.a2r)));
            row.push(fmt4(c.acceptance_rate));
            t.push(row);
        }
        out.push_str(&t.render());
    }
    out
}

pub fn render(ablation: &Ablation) -> String {
    let mut out = String::new();
    match ablation {
        Ablation::Rho { note, k, cells } => {
            out.push_str(&format!("MI gate ablation: R@{k} by expert and retrieval direction\n{note}\n\n"));
            out.push_str(&sns_tables(*k, cells, true));
        }
        Ablation::Direction { note, k, cells } => {
            out.push_str(&format!("{note}\n\n"));
            out.push_str(&sns_tables(*k, cells, false));
        }
        Ablation::Tau { note, k, cells } => {
            let mods: Vec<Modality> =
                cells.first().map(|c| c.per_modality.keys().copied().collect()).unwrap_or_default();
            let headers = ["tau_alpha", "tau_beta"]
                .map(String::from)
                .into_iter()
                .chain(mods.iter().flat_map(|m| [format!("R2A {m}"), format!("A2R {m}")]))
                .chain(["acceptance".to_string()]);
            let mut t = Table::new(
                format!("R@{k} versus (tau_alpha, tau_beta) by raw modality, gating expert\n{note}"),
                headers,
            );
            for c in cells {
                let mut row = vec![format!("{:.2}", c.tau_alpha), format!("{:.2}", c.tau_beta)];
                for m in &mods {
                    let (a, b) = c.per_modality.get(m).copied().unwrap_or((0.0, 0.0));
                    row.push(fmt4(a));
                    row.push(fmt4(b));
                }
                row.push(fmt4(c.acceptance_rate));
                t.push(row);
            }
            out.push_str(&t.render());
        }
        Ablation::Projection { note, ks, steps, cells } => {
            let mut order: Vec<&ProjectionCell> = cells.iter().collect();
            order.sort_by(|a, b| b.recall[0].total_cmp(&a.recall[0]));
            let best: Vec<f64> =
                (0..ks.len()).map(|j| cells.iter().map(|c| c.recall[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
            let headers = ["Task", "Scale", "Cluster", "Layers"]
                .map(String::from)
                .into_iter()
                .chain(ks.iter().map(|k| format!("R@{k}")))
                .chain(["gap".to_string()]);
            let mut t = Table::new(
                format!("Projection ablation: mean recall (A2R and R2A) by loss weights and depth, {steps} steps; * best per column\n{note}"),
                headers,
            );
            for c in order {
                let mut row =
                    vec![format!("{}", c.task), format!("{}", c.scale), format!("{}", c.cluster), c.layers.to_string()];
                for (j, v) in c.recall.iter().enumerate() {
                    row.push(if *v == best[j] { format!("*{}", fmt4(*v)) } else { fmt4(*v) });
                }
                row.push(fmt4(c.gap));
                t.push(row);
            }
            out.push_str(&t.render());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblateOptions {
    pub grids: Vec<Grid>,
    pub steps: Option<usize>,
}

pub fn ablate(ctx: &Context, dataset: &Path, opts: &AblateOptions) -> Result<Run> {
    let mut cfg = ctx.cfg.clone();
    if let Some(s) = opts.steps {
        cfg.train.steps = s;
    }
    let ctx = Context { cfg, ..ctx.clone() };
    ctx.cfg.validate()?;
    std::fs::create_dir_all(&ctx.out).map_err(|e| EngineError::io(&ctx.out, e))?;
    let records = read_dataset(dataset)?;
    let mut outputs = Vec::new();
    let mut text = String::new();
    for &grid in &opts.grids {
        let result = run_grid(&ctx.cfg, &records, grid, ctx.jobs)?;
        let json_name = format!("ablate.{}.json", grid.as_str());
        let txt_name = format!("ablate.{}.txt", grid.as_str());
        write_json(&ctx.out.join(&json_name), &result)?;
        let rendered = render(&result);
        write_text(&ctx.out.join(&txt_name), &rendered)?;
        text.push_str(&rendered);
        text.push('\n');
        outputs.push(json_name);
        outputs.push(txt_name);
    }
    let config = serde_json::to_value(ctx.cfg.redacted()).map_err(|e| EngineError::Runtime(e.to_string()))?;
    let mut m = crate::manifest::Manifest::new("ablate", json!(opts), Some(config));
    if let Some(p) = &ctx.config_path {
        m.input(p)?;
    }
    m.input(dataset)?;
    let manifest = m.finish(&ctx.out, &outputs)?;
    Ok(Run { outputs, manifest, summary: text })
}
