//! Subcommand implementations. Each writes its artifacts and a manifest into
//! the output directory and returns the names it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nucleus_core::curation::{
    blend_stats, curate_topn, sample_stratified, sample_uniform, traditional_pipeline, Blend, PoolItem, Strategy,
};
use nucleus_core::projection::{train, Architecture, ProjectionModel, StepLog};
use nucleus_core::retrieval::{
    bidirectional_recall, clustering_diagnostic, modality_gap, ClusteringReport, GapReport, RecallReport,
};
use nucleus_core::sns::{
    apply_sns, calibrate_thresholds, info_density, Direction, NucleusRecord, PairedSample, SnsConfig,
};
use nucleus_core::Modality;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{EngineConfig, Tau};
use crate::dataset::{read_dataset, write_dataset, write_jsonl, Record};
use crate::error::{EngineError, Result};
use crate::manifest::{write_json, write_text, Manifest};
use crate::model_io::{self, SavedModel};
use crate::pipeline::{
    build_describer, build_experts, embed_query, embed_records, split, EmbedStats, EmbeddingTable, SharedDescriber,
    SharedExpert,
};
use crate::report::{fmt4, Table};
use crate::synth::{self, SynthOptions};

/// Threshold used for a modality whose similarity band is empty when
/// calibrating.
pub const CALIBRATION_FALLBACK: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: EngineConfig,
    pub config_path: Option<PathBuf>,
    pub out: PathBuf,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub outputs: Vec<String>,
    pub manifest: PathBuf,
    pub summary: String,
}

impl Context {
    pub fn new(cfg: EngineConfig, config_path: Option<PathBuf>, out: Option<PathBuf>, jobs: usize) -> Self {
        let out = out.unwrap_or_else(|| cfg.output_dir.clone());
        Self { cfg, config_path, out, jobs: jobs.max(1) }
    }

    fn prepare(&self) -> Result<()> {
        self.cfg.validate()?;
        std::fs::create_dir_all(&self.out).map_err(|e| EngineError::io(&self.out, e))
    }

    fn manifest(&self, command: &str, parameters: Value) -> Result<Manifest> {
        let config = serde_json::to_value(self.cfg.redacted()).map_err(|e| EngineError::Runtime(e.to_string()))?;
        let mut m = Manifest::new(command, parameters, Some(config));
        if let Some(p) = &self.config_path {
            m.input(p)?;
        }
        Ok(m)
    }

    fn experts(&self) -> Result<Vec<SharedExpert>> {
        build_experts(&self.cfg, self.jobs)
    }

    fn embed(&self, records: &[Record]) -> Result<(EmbeddingTable, Vec<EmbedStats>)> {
        let experts = self.experts()?;
        let describer = build_describer(&self.cfg);
        embed_records(&self.cfg, &experts, describer.as_ref(), records)
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

pub fn synth(opts: &SynthOptions, out: &Path) -> Result<Run> {
    std::fs::create_dir_all(out).map_err(|e| EngineError::io(out, e))?;
    let records = synth::records(&opts.corpus);
    write_dataset(&out.join("dataset.jsonl"), &records)?;
    let cfg = synth::engine_config(opts);
    cfg.validate()?;
    write_text(&out.join("engine.toml"), &cfg.to_toml()?)?;
    let outputs = vec!["dataset.jsonl".to_string(), "engine.toml".to_string()];
    let manifest = Manifest::new("synth", to_value(opts), None).finish(out, &outputs)?;
    let summary =
        format!("wrote {} paired samples and an engine config with {} experts", records.len(), cfg.experts.len());
    Ok(Run { outputs, manifest, summary })
}

pub fn embed(ctx: &Context, dataset: &Path) -> Result<Run> {
    ctx.prepare()?;
    let records = read_dataset(dataset)?;
    let (_, stats) = ctx.embed(&records)?;
    let outputs = vec!["embed.json".to_string()];
    write_json(&ctx.out.join(&outputs[0]), &json!({ "samples": records.len(), "experts": stats }))?;
    let mut m = ctx.manifest("embed", json!({}))?;
    m.input(dataset)?;
    let manifest = m.finish(&ctx.out, &outputs)?;
    let computed: usize = stats.iter().map(|s| s.computed).sum();
    let summary = format!("{} samples, {} experts, {computed} embeddings computed", records.len(), stats.len());
    Ok(Run { outputs, manifest, summary })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SnsOverrides {
    pub rho: Option<f64>,
    pub tau_alpha: Option<f64>,
    pub tau_beta: Option<f64>,
    pub direction: Option<Direction>,
}

impl SnsOverrides {
    pub fn apply(&self, cfg: &mut EngineConfig) {
        if let Some(r) = self.rho {
            cfg.sns.rho = r;
        }
        if let Some(t) = self.tau_alpha {
            cfg.sns.tau_alpha = Tau::Uniform(t);
        }
        if let Some(t) = self.tau_beta {
            cfg.sns.tau_beta = Tau::Uniform(t);
        }
        if let Some(d) = self.direction {
            cfg.sns.direction = d;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ModalityCount {
    pub samples: usize,
    pub accepted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnsSummary {
    pub config: SnsConfig,
    pub samples: usize,
    pub accepted: usize,
    pub reinjected: usize,
    pub failed: usize,
    pub acceptance_rate: f64,
    pub per_modality: BTreeMap<Modality, ModalityCount>,
    pub bytes_before: usize,
    pub bytes_after: usize,
    /// Mean similarity-per-byte of the input pairs and of the emitted pairs.
    pub mean_density_before: f64,
    pub mean_density_after: f64,
}

/// Resolves `"auto"` thresholds by calibrating on `pairs`.
pub fn resolve_sns(
    cfg: &EngineConfig,
    pairs: &[PairedSample],
    gating: &SharedExpert,
    describer: &SharedDescriber,
) -> Result<SnsConfig> {
    let calibrated = if cfg.sns.needs_calibration() {
        Some(calibrate_thresholds(pairs, gating, describer.as_ref(), CALIBRATION_FALLBACK)?)
    } else {
        None
    };
    cfg.sns.resolve(calibrated)
}

/// Applies nucleus subsampling to every record in parallel; order is kept.
pub fn run_sns(
    records: &[Record],
    config: &SnsConfig,
    gating: &SharedExpert,
    describer: &SharedDescriber,
) -> (Vec<Record>, Vec<NucleusRecord>) {
    records
        .par_iter()
        .map(|r| {
            let (pair, log) = apply_sns(&r.pair, config, gating, describer.as_ref());
            (Record { pair, media_ref: r.media_ref.clone() }, log)
        })
        .unzip()
}

pub fn summarize_sns(config: &SnsConfig, logs: &[NucleusRecord], records: &[Record]) -> SnsSummary {
    let mut per_modality: BTreeMap<Modality, ModalityCount> = BTreeMap::new();
    let (mut before, mut after, mut dens_before, mut dens_after) = (0, 0, 0.0, 0.0);
    for (log, r) in logs.iter().zip(records) {
        let c = per_modality.entry(r.pair.raw_modality).or_default();
        c.samples += 1;
        c.accepted += usize::from(log.accepted);
        before += log.raw_size_before + log.annotation_size_before;
        after += log.raw_size_after + log.annotation_size_after;
        let d0 = info_density(log.sim_original, log.raw_size_before, log.annotation_size_before).unwrap_or(0.0);
        let d1 = if log.reinjected {
            info_density(log.sim_variant, log.raw_size_after, log.annotation_size_after).unwrap_or(0.0)
        } else {
            d0
        };
        dens_before += d0;
        dens_after += d1;
    }
    let n = logs.len().max(1) as f64;
    let accepted = logs.iter().filter(|l| l.accepted).count();
    SnsSummary {
        config: config.clone(),
        samples: logs.len(),
        accepted,
        reinjected: logs.iter().filter(|l| l.reinjected).count(),
        failed: logs.iter().filter(|l| l.note.as_deref().is_some_and(|n| n != "accepted without reinjection")).count(),
        acceptance_rate: accepted as f64 / n,
        per_modality,
        bytes_before: before,
        bytes_after: after,
        mean_density_before: dens_before / n,
        mean_density_after: dens_after / n,
    }
}

pub fn sns(ctx: &Context, dataset: &Path, overrides: &SnsOverrides) -> Result<Run> {
    let mut ctx = ctx.clone();
    overrides.apply(&mut ctx.cfg);
    ctx.prepare()?;
    let records = read_dataset(dataset)?;
    let experts = ctx.experts()?;
    let describer = build_describer(&ctx.cfg);
    let gating = &experts[ctx.cfg.gating_index()];
    let pairs: Vec<PairedSample> = records.iter().map(|r| r.pair.clone()).collect();
    let config = resolve_sns(&ctx.cfg, &pairs, gating, &describer)?;
    let (trimmed, logs) = run_sns(&records, &config, gating, &describer);
    let summary = summarize_sns(&config, &logs, &records);
    let outputs: Vec<String> = ["nucleus.jsonl", "dataset.sns.jsonl", "sns.json"].map(String::from).to_vec();
    write_jsonl(&ctx.out.join(&outputs[0]), &logs)?;
    write_dataset(&ctx.out.join(&outputs[1]), &trimmed)?;
    write_json(&ctx.out.join(&outputs[2]), &summary)?;
    let mut m = ctx.manifest("sns", to_value(overrides))?;
    m.input(dataset)?;
    let manifest = m.finish(&ctx.out, &outputs)?;
    let text = format!(
        "{} pairs, {} accepted ({:.1}%), {} bytes -> {} bytes",
        summary.samples,
        summary.accepted,
        100.0 * summary.acceptance_rate,
        summary.bytes_before,
        summary.bytes_after
    );
    Ok(Run { outputs, manifest, summary: text })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainOverrides {
    pub layers: Option<usize>,
    pub lambda_task: Option<f64>,
    pub lambda_cluster: Option<f64>,
    pub lambda_scale: Option<f64>,
    pub temperature: Option<f64>,
    pub steps: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut EngineConfig) {
        if let Some(v) = self.layers {
            cfg.train.layers = v;
        }
        if let Some(v) = self.lambda_task {
            cfg.loss.task = v;
        }
        if let Some(v) = self.lambda_cluster {
            cfg.loss.cluster = v;
        }
        if let Some(v) = self.lambda_scale {
            cfg.loss.scale = v;
        }
        if let Some(v) = self.temperature {
            cfg.loss.temperature = v;
        }
        if let Some(v) = self.steps {
            cfg.train.steps = v;
        }
    }
}

/// Trains on the non-holdout records; the initial weights are seeded by
/// `train.seed`.
pub fn fit(cfg: &EngineConfig, table: &EmbeddingTable, indices: &[usize]) -> Result<(ProjectionModel, Vec<StepLog>)> {
    let anchor = cfg.anchor_index();
    let data: Vec<_> = indices.iter().map(|&i| table.train_sample(i, anchor)).collect();
    let arch = Architecture::new(table.expert_ids.len(), cfg.dim(), cfg.train.layers);
    let init = ProjectionModel::new(arch, cfg.train.seed)?;
    let outcome = train(&data, init, &cfg.train.train_config(), &cfg.loss.objective())?;
    Ok((outcome.model, outcome.log))
}

pub fn train_cmd(ctx: &Context, dataset: &Path, overrides: &TrainOverrides) -> Result<Run> {
    let mut ctx = ctx.clone();
    overrides.apply(&mut ctx.cfg);
    ctx.prepare()?;
    let records = read_dataset(dataset)?;
    let (table, _) = ctx.embed(&records)?;
    let (train_idx, _) = split(&ctx.cfg, table.len());
    let (model, log) = fit(&ctx.cfg, &table, &train_idx)?;
    let saved = SavedModel {
        model: model_io::quantize(&model),
        experts: table.expert_ids.clone(),
        anchor_expert: table.expert_ids[ctx.cfg.anchor_index()].clone(),
    };
    let outputs: Vec<String> = ["model.json", "train_log.jsonl"].map(String::from).to_vec();
    model_io::save(&ctx.out.join(&outputs[0]), &saved)?;
    write_jsonl(&ctx.out.join(&outputs[1]), &log)?;
    let mut m = ctx.manifest("train", to_value(overrides))?;
    m.input(dataset)?;
    let manifest = m.finish(&ctx.out, &outputs)?;
    let last = log.last().map(|l| format!("final L_total {:.6}", l.total)).unwrap_or_default();
    let summary = format!("trained on {} pairs for {} steps; {last}", train_idx.len(), log.len());
    Ok(Run { outputs, manifest, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceReport {
    pub name: String,
    pub kind: String,
    pub recall: RecallReport,
    pub gap: GapReport,
    pub clustering: Option<ClusteringReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub samples: usize,
    pub ks: Vec<usize>,
    pub spaces: Vec<SpaceReport>,
    pub best_expert_gap: f64,
    pub best_expert_r1: Option<f64>,
    /// Projection gap as a fraction of the best expert's.
    pub projection_gap_fraction: Option<f64>,
}

impl EvalReport {
    pub fn projection(&self) -> Option<&SpaceReport> {
        self.spaces.iter().find(|s| s.kind == "projection")
    }
}

fn space(
    name: &str,
    kind: &str,
    ids: &[&str],
    mods: &[Modality],
    raw: &[Vec<f64>],
    anchors: &[Vec<f64>],
    ks: &[usize],
) -> Result<SpaceReport> {
    Ok(SpaceReport {
        name: name.into(),
        kind: kind.into(),
        recall: bidirectional_recall(ids, raw, anchors, ks)?,
        gap: modality_gap(mods, raw, anchors)?,
        clustering: clustering_diagnostic(mods, raw).ok(),
    })
}

/// Each expert in its own space (raw vs its own annotation embeddings), then
/// the fused space against the anchor expert's annotations.
pub fn evaluate(
    cfg: &EngineConfig,
    table: &EmbeddingTable,
    model: Option<&ProjectionModel>,
    indices: &[usize],
    ks: &[usize],
) -> Result<EvalReport> {
    let pick = |v: &[Vec<f64>]| indices.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
    let ids: Vec<&str> = indices.iter().map(|&i| table.sample_ids[i].as_str()).collect();
    let mods: Vec<Modality> = indices.iter().map(|&i| table.modalities[i]).collect();
    let mut spaces = (0..table.expert_ids.len())
        .into_par_iter()
        .map(|k| {
            space(&table.expert_ids[k], "expert", &ids, &mods, &pick(&table.raw[k]), &pick(&table.annotation[k]), ks)
        })
        .collect::<Result<Vec<_>>>()?;
    let best_expert_gap = spaces.iter().map(|s| s.gap.average).fold(f64::INFINITY, f64::min);
    let best_expert_r1 = spaces.iter().filter_map(|s| s.recall.mean_at(1)).reduce(f64::max);
    let mut fraction = None;
    if let Some(model) = model {
        let fused = table.project(model, indices)?;
        let anchors = pick(&table.annotation[cfg.anchor_index()]);
        let s = space("projection", "projection", &ids, &mods, &fused, &anchors, ks)?;
        if best_expert_gap > 0.0 {
            fraction = Some(s.gap.average / best_expert_gap);
        }
        spaces.push(s);
    }
    Ok(EvalReport {
        split: if cfg.train.holdout_every == 0 {
            "all".into()
        } else {
            format!("holdout (every {})", cfg.train.holdout_every)
        },
        samples: indices.len(),
        ks: ks.to_vec(),
        spaces,
        best_expert_gap,
        best_expert_r1,
        projection_gap_fraction: fraction,
    })
}

pub fn render_eval(report: &EvalReport) -> String {
    let mods: Vec<Modality> =
        Modality::ALL.into_iter().filter(|m| report.spaces.iter().any(|s| s.gap.gap(*m).is_some())).collect();
    let mut gap = Table::new(
        "Modality gap (distance between raw and paired-annotation centroids)",
        std::iter::once("space".to_string()).chain(mods.iter().map(|m| m.to_string())).chain(["avg".to_string()]),
    );
    for s in &report.spaces {
        let mut row = vec![s.name.clone()];
        row.extend(mods.iter().map(|m| s.gap.gap(*m).map_or("-".into(), fmt4)));
        row.push(fmt4(s.gap.average));
        gap.push(row);
    }
    let mut recall = Table::new(
        "Recall@K (R2A: raw to annotation, A2R: annotation to raw)",
        std::iter::once("space".to_string())
            .chain(report.ks.iter().map(|k| format!("R2A@{k}")))
            .chain(report.ks.iter().map(|k| format!("A2R@{k}"))),
    );
    for s in &report.spaces {
        let mut row = vec![s.name.clone()];
        row.extend(s.recall.r2a.iter().map(|v| fmt4(*v)));
        row.extend(s.recall.a2r.iter().map(|v| fmt4(*v)));
        recall.push(row);
    }
    let mut clustering = Table::new("Clustering by modality", ["space", "clustered"]);
    for s in &report.spaces {
        clustering.push(vec![s.name.clone(), s.clustering.as_ref().map_or("-".into(), |c| c.clustered.to_string())]);
    }
    let mut out = format!("split: {}, {} samples\n\n", report.split, report.samples);
    out.push_str(&gap.render());
    if let Some(f) = report.projection_gap_fraction {
        out.push_str(&format!("projection gap = {:.2}% of the best expert's\n", 100.0 * f));
    }
    out.push('\n');
    out.push_str(&recall.render());
    out.push('\n');
    out.push_str(&clustering.render());
    out
}

fn load_model_for(cfg: &EngineConfig, path: &Path) -> Result<ProjectionModel> {
    let saved = model_io::load(path)?;
    let ids: Vec<&str> = cfg.experts.iter().map(|e| e.id.as_str()).collect();
    if saved.experts != ids {
        return Err(EngineError::Validation(format!(
            "{} was trained on experts {:?}, the config has {:?}",
            path.display(),
            saved.experts,
            ids
        )));
    }
    if saved.model.arch.dim != cfg.dim() {
        return Err(EngineError::Validation(format!(
            "{} has dim {}, config has {}",
            path.display(),
            saved.model.arch.dim,
            cfg.dim()
        )));
    }
    Ok(saved.model)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalOptions {
    pub model: Option<PathBuf>,
    pub ks: Vec<usize>,
    pub all: bool,
}

pub fn eval(ctx: &Context, dataset: &Path, opts: &EvalOptions) -> Result<Run> {
    ctx.prepare()?;
    if opts.ks.is_empty() || opts.ks.contains(&0) {
        return Err(EngineError::Validation("--ks needs positive values".into()));
    }
    let mut cfg = ctx.cfg.clone();
    if opts.all {
        cfg.train.holdout_every = 0;
    }
    let records = read_dataset(dataset)?;
    let model = opts.model.as_deref().map(|p| load_model_for(&cfg, p)).transpose()?;
    let (table, _) = ctx.embed(&records)?;
    let (_, eval_idx) = split(&cfg, table.len());
    let report = evaluate(&cfg, &table, model.as_ref(), &eval_idx, &opts.ks)?;
    let outputs: Vec<String> = ["eval.json", "eval.txt"].map(String::from).to_vec();
    write_json(&ctx.out.join(&outputs[0]), &report)?;
    let text = render_eval(&report);
    write_text(&ctx.out.join(&outputs[1]), &text)?;
    let mut m = ctx.manifest("eval", to_value(opts))?;
    m.input(dataset)?;
    if let Some(p) = &opts.model {
        m.input(p)?;
    }
    let manifest = m.finish(&ctx.out, &outputs)?;
    Ok(Run { outputs, manifest, summary: text })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CurateOptions {
    pub strategy: Option<Strategy>,
    pub n: Option<usize>,
    pub query: Option<String>,
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlendRow<'a> {
    pub sample_id: &'a str,
    pub rank: usize,
    pub score: Option<f64>,
    pub pool_id: &'a str,
    pub modality: Modality,
}

/// Builds a blend with any strategy. `fused` must be given for the
/// projection strategy; `table` supplies the traditional pipeline's encoder.
#[allow(clippy::too_many_arguments)]
pub fn build_blend(
    cfg: &EngineConfig,
    strategy: Strategy,
    n: usize,
    query: Option<&str>,
    records: &[Record],
    table: &EmbeddingTable,
    fused: Option<&[Vec<f64>]>,
    experts: &[SharedExpert],
) -> Result<(Blend, Option<(usize, usize)>)> {
    let items: Vec<PoolItem> = records.iter().map(Record::pool_item).collect();
    let need_query =
        || query.ok_or_else(|| EngineError::Validation(format!("strategy '{}' needs a query", strategy.as_str())));
    Ok(match strategy {
        Strategy::Uniform => (sample_uniform(&items, n, cfg.curation.seed)?, None),
        Strategy::Stratified => (sample_stratified(&items, n, cfg.curation.seed)?, None),
        Strategy::Projection => {
            let q = need_query()?;
            let fused = fused.ok_or_else(|| EngineError::Validation("the projection strategy needs --model".into()))?;
            let q_emb = embed_query(&experts[cfg.anchor_index()], q)?;
            (curate_topn(q, &q_emb, &items, fused, n)?, None)
        }
        Strategy::Traditional => {
            let q = need_query()?;
            let enc = cfg.pipeline_index();
            let q_emb = embed_query(&experts[enc], q)?;
            let annotations: Vec<String> = records.iter().map(|r| r.pair.annotation_text()).collect();
            let refs: Vec<&str> = annotations.iter().map(String::as_str).collect();
            let outcome =
                traditional_pipeline(q, &q_emb, &items, &refs, &table.annotation[enc], n, &cfg.curation.pipeline())?;
            (outcome.blend, Some((outcome.filtered, outcome.deduplicated)))
        }
    })
}

pub fn curate(ctx: &Context, dataset: &Path, opts: &CurateOptions) -> Result<Run> {
    let mut ctx = ctx.clone();
    if let Some(s) = opts.strategy {
        ctx.cfg.curation.strategy = s;
    }
    if let Some(n) = opts.n {
        ctx.cfg.curation.n = n;
    }
    if let Some(q) = &opts.query {
        ctx.cfg.curation.query = Some(q.clone());
    }
    ctx.prepare()?;
    let cfg = &ctx.cfg;
    let strategy = cfg.curation.strategy;
    let records = read_dataset(dataset)?;
    let model = opts.model.as_deref().map(|p| load_model_for(cfg, p)).transpose()?;
    let experts = ctx.experts()?;
    let describer = build_describer(cfg);
    let (table, _) = embed_records(cfg, &experts, describer.as_ref(), &records)?;
    let all: Vec<usize> = (0..records.len()).collect();
    let fused = model.as_ref().map(|m| table.project(m, &all)).transpose()?;
    let (blend, pipeline) = build_blend(
        cfg,
        strategy,
        cfg.curation.n,
        cfg.curation.query.as_deref(),
        &records,
        &table,
        fused.as_deref(),
        &experts,
    )?;

    let items: Vec<PoolItem> = records.iter().map(Record::pool_item).collect();
    let coords_space: &[Vec<f64>] = match &fused {
        Some(f) => f,
        None => &table.raw[cfg.pipeline_index()],
    };
    let stats = blend_stats(&blend, &items, Some(coords_space))?;
    let outputs: Vec<String> = ["blend.jsonl", "blend.stats.json", "blend.coords.csv"].map(String::from).to_vec();
    let lookup: BTreeMap<&str, &PoolItem> = items.iter().map(|it| (it.sample_id.as_str(), it)).collect();
    let rows = blend.selected.iter().enumerate().map(|(i, s)| BlendRow {
        sample_id: &s.sample_id,
        rank: i + 1,
        score: s.score,
        pool_id: &lookup[s.sample_id.as_str()].pool_id,
        modality: s.modality,
    });
    write_jsonl(&ctx.out.join(&outputs[0]), rows)?;
    let sidecar = json!({
        "strategy": strategy,
        "n": cfg.curation.n,
        "selected": blend.len(),
        "query": blend.query,
        "seed": blend.seed,
        "curation": cfg.curation,
        "model": opts.model.as_ref().map(|p| p.display().to_string()),
        "coordinates": if fused.is_some() { "projection" } else { cfg.experts[cfg.pipeline_index()].id.as_str() },
        "pipeline": pipeline.map(|(f, d)| json!({"filtered": f, "deduplicated": d})),
        "per_pool": stats.per_pool,
        "per_modality": stats.per_modality,
        "warnings": blend.warnings,
    });
    write_json(&ctx.out.join(&outputs[1]), &sidecar)?;
    let csv_path = ctx.out.join(&outputs[2]);
    let mut w =
        csv::Writer::from_path(&csv_path).map_err(|e| EngineError::Runtime(format!("{}: {e}", csv_path.display())))?;
    for p in &stats.coordinates {
        w.serialize(p).map_err(|e| EngineError::Runtime(format!("{}: {e}", csv_path.display())))?;
    }
    w.flush().map_err(|e| EngineError::io(&csv_path, e))?;
    let mut m = ctx.manifest("curate", to_value(opts))?;
    m.input(dataset)?;
    if let Some(p) = &opts.model {
        m.input(p)?;
    }
    let manifest = m.finish(&ctx.out, &outputs)?;
    let mix: Vec<String> = stats.per_modality.iter().map(|s| format!("{} {:.1}%", s.key, 100.0 * s.fraction)).collect();
    let summary = format!("{} blend of {} samples ({})", strategy.as_str(), blend.len(), mix.join(", "));
    Ok(Run { outputs, manifest, summary })
}
