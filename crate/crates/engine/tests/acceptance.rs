//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.
//!
//! Run with `cargo test -p nucleus-engine --test acceptance`.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nucleus_core::corpus::CorpusConfig;
use nucleus_core::curation::{
    heuristic_filter, sample_stratified, sample_uniform, semantic_dedup, FilterConfig, FilterRule, PoolItem,
};
use nucleus_core::experts::{EmbedItem, Expert};
use nucleus_core::geometry::{cosine_sim, normalize};
use nucleus_core::projection::{
    batch_gradient, batch_loss, loss_cluster, loss_scale, loss_task, loss_total, Architecture, Batch, LossWeights,
    Negatives, Objective, ProjectionModel, TaskOptions, TrainSample,
};
use nucleus_core::retrieval::{recall_at_k, IndexSide, RetrievalIndex};
use nucleus_core::sns::{apply_sns, info_density, PairedSample, SnsConfig};
use nucleus_core::Modality;
use nucleus_engine::ablate::{self, Ablation, Grid, DEPTHS, LAMBDA_GRID, RHO_GRID};
use nucleus_engine::commands::{evaluate, fit, resolve_sns};
use nucleus_engine::pipeline::{build_describer, build_experts, embed_records, split, SharedExpert};
use nucleus_engine::synth::{self, SynthOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&v).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// 1

fn gradients() -> Outcome {
    const STEP: f64 = 1e-5;
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let instances = 24;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(4..=16);
        let k = rng.random_range(2..=3);
        let depth = rng.random_range(1..=3);
        let batch = rng.random_range(6..=16);
        let mut model = ProjectionModel::new(Architecture::new(k, d, depth), seed).map_err(|e| e.to_string())?;
        let samples: Vec<TrainSample> = (0..batch)
            .map(|i| TrainSample {
                input: (0..k).flat_map(|_| unit(&mut rng, d)).collect(),
                anchor: unit(&mut rng, d),
                modality: if i < 2 { Modality::ALL[i + 1] } else { Modality::ALL[rng.random_range(0..4)] },
            })
            .collect();
        let objective = Objective {
            weights: LossWeights {
                task: rng.random_range(0.2..1.0),
                cluster: rng.random_range(0.05..1.0),
                scale: rng.random_range(0.05..1.0),
                temperature: rng.random_range(0.1..1.0),
            },
            task: TaskOptions {
                negatives: if rng.random_bool(0.5) { Negatives::Annotations } else { Negatives::AnnotationsAndFused },
                symmetric: rng.random_bool(0.5),
            },
        };
        let refs: Vec<&TrainSample> = samples.iter().collect();
        let (_, grads) = batch_gradient(&model, &refs, &objective).map_err(|e| e.to_string())?;
        for p in 0..model.param_count() {
            let orig = model.param(p);
            model.set_param(p, orig + STEP);
            let up = batch_loss(&model, &refs, &objective).unwrap().total;
            model.set_param(p, orig - STEP);
            let down = batch_loss(&model, &refs, &objective).unwrap().total;
            model.set_param(p, orig);
            let (a, n) = (grads.param(p), (up - down) / (2.0 * STEP));
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
        }
    }
    let t = start.elapsed();
    ensure(worst <= 1e-4, || format!("max relative error {worst:.2e} > 1e-4"))?;
    ensure(t < Duration::from_secs(30), || format!("took {t:.1?}"))?;
    Ok(format!("{instances} instances, max relative error {worst:.2e}, {t:.1?}"))
}

// 2

fn brute_infonce(fused: &[Vec<f64>], anchors: &[Vec<f64>], t: f64, opts: TaskOptions) -> f64 {
    let n = fused.len();
    let fa: Vec<Vec<f64>> = fused.iter().map(|f| anchors.iter().map(|a| dot(f, a) / t).collect()).collect();
    let ff: Vec<Vec<f64>> = fused.iter().map(|f| fused.iter().map(|g| dot(f, g) / t).collect()).collect();
    let aa: Vec<Vec<f64>> = anchors.iter().map(|f| anchors.iter().map(|g| dot(f, g) / t).collect()).collect();
    let extra = opts.negatives == Negatives::AnnotationsAndFused;
    let row = |cross: &dyn Fn(usize, usize) -> f64, same: &Vec<Vec<f64>>, i: usize| {
        let mut terms: Vec<f64> = (0..n).map(|j| cross(i, j)).collect();
        if extra {
            terms.extend((0..n).filter(|&j| j != i).map(|j| same[i][j]));
        }
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|x| (x - m).exp()).sum::<f64>().ln() - cross(i, i)
    };
    let fwd = (0..n).map(|i| row(&|i, j| fa[i][j], &ff, i)).sum::<f64>() / n as f64;
    if !opts.symmetric {
        return fwd;
    }
    0.5 * (fwd + (0..n).map(|i| row(&|i, j| fa[j][i], &aa, i)).sum::<f64>() / n as f64)
}

fn loss_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(2..24);
        let n = rng.random_range(2..40);
        let t = rng.random_range(0.03..2.0);
        let fused: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng, d)).collect();
        let anchors: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng, d)).collect();
        let opts = TaskOptions {
            negatives: if rng.random_bool(0.5) { Negatives::Annotations } else { Negatives::AnnotationsAndFused },
            symmetric: rng.random_bool(0.5),
        };
        let got = loss_task(&fused, &anchors, t, opts).map_err(|e| e.to_string())?;
        worst = worst.max((got - brute_infonce(&fused, &anchors, t, opts)).abs());
    }
    ensure(worst <= 1e-10, || format!("InfoNCE deviates by {worst:.2e}"))?;

    // two groups at (1,0) and (-1,0): centroid distances 1 + 1, spreads 0 against a global spread 1
    let pts = [[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]];
    let c = loss_cluster(&pts, &[0, 0, 1, 1], 2).map_err(|e| e.to_string())?;
    let s = loss_scale(&pts, &[0, 0, 1, 1], 2).map_err(|e| e.to_string())?;
    ensure((c - 2.0).abs() <= 1e-12 && (s - 2.0).abs() <= 1e-12, || format!("fixture: cluster {c}, scale {s}"))?;

    let fused: Vec<Vec<f64>> = (0..8).map(|_| unit(&mut rng, 5)).collect();
    let anchors: Vec<Vec<f64>> = (0..8).map(|_| unit(&mut rng, 5)).collect();
    let mods: Vec<Modality> = (0..8).map(|i| Modality::ALL[1 + i % 3]).collect();
    let batch = Batch { fused: &fused, anchors: &anchors, modalities: &mods };
    let opts = TaskOptions::default();
    let w = LossWeights::new(0.9, 0.05, 0.05);
    let p = loss_total(&batch, &w, opts).map_err(|e| e.to_string())?;
    let recombined = (p.total - (0.9 * p.task + 0.05 * p.cluster + 0.05 * p.scale)).abs();
    ensure(recombined <= 1e-12, || format!("recombination off by {recombined:.2e}"))?;
    let l = |w: LossWeights| loss_total(&batch, &w, opts).unwrap().total;
    let lin = (l(LossWeights::new(0.8, 0.25, 0.5))
        - l(LossWeights::new(0.3, 0.2, 0.1))
        - l(LossWeights::new(0.5, 0.05, 0.4)))
    .abs();
    ensure(lin <= 1e-10, || format!("linearity off by {lin:.2e}"))?;
    Ok(format!("InfoNCE max deviation {worst:.2e} over 100 batches; fixtures exact; recombination {recombined:.1e}; linearity {lin:.1e}"))
}

// 3 and 4

struct SeedResult {
    seed: u64,
    clustered: bool,
    fraction: f64,
    r1: f64,
    best_expert_r1: f64,
}

fn benchmark(seed: u64, cache: &Path) -> Result<SeedResult, String> {
    let opts = SynthOptions::with_seed(seed);
    let mut cfg = synth::engine_config(&opts);
    cfg.cache_dir = cache.join(format!("seed{seed}"));
    let records = synth::records(&opts.corpus);
    let experts = build_experts(&cfg, 1).map_err(|e| e.to_string())?;
    let (table, _) =
        embed_records(&cfg, &experts, build_describer(&cfg).as_ref(), &records).map_err(|e| e.to_string())?;
    let (train_idx, eval_idx) = split(&cfg, table.len());
    let (model, _) = fit(&cfg, &table, &train_idx).map_err(|e| e.to_string())?;
    let report = evaluate(&cfg, &table, Some(&model), &eval_idx, &[1]).map_err(|e| e.to_string())?;
    let proj = report.projection().ok_or("no projection space")?;
    Ok(SeedResult {
        seed,
        clustered: report
            .spaces
            .iter()
            .filter(|s| s.kind == "expert")
            .all(|s| s.clustering.as_ref().is_some_and(|c| c.clustered)),
        fraction: report.projection_gap_fraction.ok_or("no gap fraction")?,
        r1: proj.recall.mean_at(1).ok_or("no R@1")?,
        best_expert_r1: report.best_expert_r1.ok_or("no expert R@1")?,
    })
}

fn gap_and_retrieval() -> (Outcome, Outcome) {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let results: Result<Vec<SeedResult>, String> = (1..=3).map(|s| benchmark(s, dir.path())).collect();
    let t = start.elapsed();
    let results = match results {
        Ok(r) => r,
        Err(e) => return (Err(e.clone()), Err(e)),
    };
    let gap = (|| {
        for r in &results {
            ensure(r.clustered, || format!("seed {}: experts do not cluster by modality", r.seed))?;
            ensure(r.fraction <= 0.15, || {
                format!("seed {}: gap at {:.1}% of the best expert", r.seed, 100.0 * r.fraction)
            })?;
        }
        ensure(t < Duration::from_secs(300), || format!("took {t:.1?}"))?;
        let f: Vec<String> = results.iter().map(|r| format!("{:.1}%", 100.0 * r.fraction)).collect();
        Ok(format!("gap at {} of the best expert (seeds 1-3), experts clustered, {t:.1?}", f.join(", ")))
    })();
    let retrieval = (|| {
        for r in &results {
            ensure(r.r1 >= 0.90, || format!("seed {}: R@1 {:.4}", r.seed, r.r1))?;
            ensure(r.r1 >= r.best_expert_r1 - 0.02, || {
                format!("seed {}: R@1 {:.4} vs best expert {:.4}", r.seed, r.r1, r.best_expert_r1)
            })?;
        }
        let f: Vec<String> =
            results.iter().map(|r| format!("{:.4} (best expert {:.4})", r.r1, r.best_expert_r1)).collect();
        Ok(format!("R@1 {}", f.join(", ")))
    })();
    (gap, retrieval)
}

// 5

fn pair_sim(expert: &SharedExpert, p: &PairedSample) -> f64 {
    let x = expert.embed(&EmbedItem::new(format!("{}#raw", p.sample_id), p.raw_modality, p.raw_content())).unwrap();
    let y = expert.embed(&EmbedItem::new(format!("{}#ann", p.sample_id), Modality::Text, p.annotation_text())).unwrap();
    cosine_sim(x.values(), y.values()).unwrap()
}

fn sns_gate() -> Outcome {
    let start = Instant::now();
    let opts = SynthOptions {
        corpus: CorpusConfig {
            seed: 3,
            samples_per_modality: 150,
            annotation_noise: 0.3,
            filler_rate: 0.6,
            ..Default::default()
        },
        ..Default::default()
    };
    let cfg = synth::engine_config(&opts);
    let experts = build_experts(&cfg, 1).map_err(|e| e.to_string())?;
    let gate = &experts[cfg.gating_index()];
    let describer = build_describer(&cfg);
    // the gate is monotone in rho only where the original similarity is positive
    let pairs: Vec<PairedSample> = synth::records(&opts.corpus)
        .into_iter()
        .map(|r| r.pair)
        .filter(|p| pair_sim(gate, p) > 0.0)
        .take(500)
        .collect();
    ensure(pairs.len() == 500, || format!("fixture has {} pairs", pairs.len()))?;
    let base = resolve_sns(&cfg, &pairs, gate, &describer).map_err(|e| e.to_string())?;
    let mut rates = Vec::new();
    let mut changed = 0;
    for rho in RHO_GRID {
        let config = SnsConfig { rho, ..base.clone() };
        let mut accepted = 0;
        for pair in &pairs {
            let (out, rec) = apply_sns(pair, &config, gate, describer.as_ref());
            let s0 = pair_sim(gate, pair);
            if out != *pair {
                changed += 1;
                let s1 = pair_sim(gate, &out);
                ensure(s1 >= rho * s0, || format!("{} at rho {rho}: {s1} < {rho} * {s0}", pair.sample_id))?;
                if rho >= 1.0 {
                    let d0 = info_density(s0, pair.raw_size(), pair.annotation_size()).unwrap();
                    let d1 = info_density(s1, out.raw_size(), out.annotation_size()).unwrap();
                    ensure(d1 >= d0, || format!("{} at rho {rho}: density {d1} < {d0}", pair.sample_id))?;
                }
            }
            accepted += usize::from(rec.accepted);
        }
        rates.push(accepted as f64 / pairs.len() as f64);
    }
    let t = start.elapsed();
    ensure(rates.windows(2).all(|w| w[0] >= w[1]), || format!("acceptance not monotone: {rates:?}"))?;
    ensure(rates[0] > 0.0, || "no pair was ever trimmed".into())?;
    ensure(t < Duration::from_secs(60), || format!("took {t:.1?}"))?;
    let r: Vec<String> = rates.iter().map(|r| format!("{r:.3}")).collect();
    Ok(format!("500 pairs, {changed} trimmed emissions all gated, acceptance over rho [{}], {t:.1?}", r.join(", ")))
}

// 6

fn naive_ranking(index: &[(String, Vec<f64>)], q: &[f64]) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = index.iter().map(|(id, v)| (id.clone(), dot(q, v).clamp(-1.0, 1.0))).collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all
}

fn retrieval_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0usize;
    for fixture in 0..50 {
        let n = rng.random_range(1..=1000);
        let d = rng.random_range(2..12);
        let coarse = fixture % 3 == 0;
        let entries: Vec<(String, Vec<f64>)> = (0..n)
            .map(|i| {
                let v = if coarse {
                    let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1i32..=1) as f64).collect();
                    normalize(&raw).unwrap_or_else(|_| (0..d).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect())
                } else {
                    unit(&mut rng, d)
                };
                (format!("id{:04}", (i * 7919) % 10007), v)
            })
            .collect();
        let index =
            RetrievalIndex::build(IndexSide::AnnotationAnchor, d, entries.clone()).map_err(|e| e.to_string())?;
        let queries: Vec<(Vec<f64>, String)> =
            (0..10).map(|_| (unit(&mut rng, d), entries[rng.random_range(0..n)].0.clone())).collect();
        let ks: Vec<usize> = (1..=n.min(50)).collect();
        let mut want = vec![0usize; ks.len()];
        for (q, partner) in &queries {
            let oracle = naive_ranking(&entries, q);
            for k in [1, 5, n] {
                let got: Vec<(String, f64)> =
                    index.top_k(q, k).unwrap().into_iter().map(|h| (h.sample_id, h.score)).collect();
                ensure(got == oracle[..k.min(n)], || format!("fixture {fixture}: top_{k} differs"))?;
            }
            let rank = oracle.iter().position(|(id, _)| id == partner).unwrap() + 1;
            for (j, k) in ks.iter().enumerate() {
                want[j] += usize::from(rank <= *k);
            }
            checked += 1;
        }
        let qs: Vec<(&[f64], &str)> = queries.iter().map(|(q, p)| (q.as_slice(), p.as_str())).collect();
        let recall = recall_at_k(&qs, &index, &ks).map_err(|e| e.to_string())?;
        for (r, w) in recall.iter().zip(&want) {
            ensure(*r == *w as f64 / queries.len() as f64, || format!("fixture {fixture}: recall differs"))?;
        }
        ensure(recall.windows(2).all(|w| w[0] <= w[1]), || format!("fixture {fixture}: R@K not monotone"))?;
    }
    Ok(format!("50 fixtures, {checked} queries agree exactly with a full sort; R@K monotone"))
}

// 7

fn curation() -> Outcome {
    let cfg = FilterConfig::default();
    let ratio = |t: &str| heuristic_filter("s", t, &cfg).non_alnum_ratio;
    ensure(ratio("a b !") == 1.0 / 3.0, || "ratio of 'a b !'".into())?;
    ensure(ratio("ab!!cd.") == 3.0 / 7.0, || "ratio of 'ab!!cd.'".into())?;
    let ten = ["same line"; 10].join("\n");
    let r = heuristic_filter("s", &ten, &cfg);
    ensure((r.repeated_line_fraction - 0.9).abs() < 1e-12, || "repeated line fraction".into())?;
    ensure(r.failed_rules == vec![FilterRule::RepeatedLineFraction], || format!("{:?}", r.failed_rules))?;
    ensure(heuristic_filter("s", "", &cfg).failed_rules == vec![FilterRule::Empty], || "empty text".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for round in 0..40u64 {
        let n = rng.random_range(1..30);
        let base: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut rng, 8)).collect();
        let mut ids = Vec::new();
        let mut embs = Vec::new();
        for (i, v) in base.iter().enumerate() {
            ids.extend([format!("a{i:03}"), format!("b{i:03}")]);
            embs.extend([v.clone(), v.clone()]);
        }
        let kept = semantic_dedup(&ids, &embs, n.min(5), 0.0, round).map_err(|e| e.to_string())?;
        ensure(kept.len() == n && kept.iter().all(|id| id.starts_with('a')), || {
            format!("round {round}: kept {kept:?}")
        })?;
        let kept_embs: Vec<&Vec<f64>> =
            kept.iter().map(|id| &embs[ids.iter().position(|x| x == id).unwrap()]).collect();
        let again = semantic_dedup(&kept, &kept_embs, n.min(5), 0.0, round + 1).map_err(|e| e.to_string())?;
        ensure(again == kept, || format!("round {round}: dedup not idempotent"))?;
    }

    let items: Vec<PoolItem> = (0..10_000)
        .map(|i| PoolItem::new(format!("s{i:05}"), format!("pool{}", i % 5), Modality::ALL[i % 4]))
        .collect();
    let blend = sample_stratified(&items, 5000, 17).map_err(|e| e.to_string())?;
    let distinct: BTreeSet<&str> = blend.ids().collect();
    ensure(blend.per_pool.values().all(|&c| c == 1000) && distinct.len() == 5000, || format!("{:?}", blend.per_pool))?;

    let items: Vec<PoolItem> = (0..10).map(|i| PoolItem::new(format!("s{i}"), "p", Modality::Text)).collect();
    let mut counts = [0usize; 10];
    for seed in 0..1000 {
        for id in sample_uniform(&items, 5, seed).map_err(|e| e.to_string())?.ids() {
            counts[id[1..].parse::<usize>().unwrap()] += 1;
        }
    }
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / 1000.0).collect();
    ensure(freqs.iter().all(|f| (f - 0.5).abs() <= 0.05), || format!("inclusion frequencies {freqs:?}"))?;
    let lo = freqs.iter().copied().fold(1.0, f64::min);
    let hi = freqs.iter().copied().fold(0.0, f64::max);
    Ok(format!("filter fixtures exact; dedup idempotent and drops one of each pair; 1000 per pool; uniform inclusion {lo:.3}..{hi:.3}"))
}

// 8

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out =
        Command::new(env!("CARGO_BIN_EXE_nucleus")).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter(|e| e.path().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut commands: Vec<Vec<&str>> = vec![
        vec![
            "synth",
            "--samples-per-modality",
            "40",
            "--annotation-noise",
            "0.3",
            "--filler-rate",
            "0.5",
            "--seed",
            "9",
            "--out",
            "w",
        ],
        vec!["--config", "w/engine.toml", "sns", "--dataset", "w/dataset.jsonl", "--out", "sns"],
        vec!["--config", "w/engine.toml", "train", "--dataset", "w/dataset.jsonl", "--steps", "300", "--out", "train"],
    ];
    for s in ["projection", "uniform", "stratified", "traditional"] {
        commands.push(vec![
            "--config",
            "w/engine.toml",
            "curate",
            "--dataset",
            "w/dataset.jsonl",
            "--model",
            "train/model.json",
            "--strategy",
            s,
            "--n",
            "40",
            "--out",
            s,
        ]);
    }
    let mut compared = 0;
    for args in &commands {
        for r in &runs {
            run_cli(r.path(), args)?;
        }
        let out = args[args.len() - 1];
        let (a, b) = (snapshot(&runs[0].path().join(out)), snapshot(&runs[1].path().join(out)));
        ensure(!a.is_empty() && a == b, || format!("{out}: outputs differ between reruns"))?;
        compared += a.len();
    }
    Ok(format!("synth, sns, train and 4 curation strategies: {compared} files byte-identical across reruns"))
}

// 9

fn ablation_shapes() -> Outcome {
    let opts = SynthOptions {
        corpus: CorpusConfig {
            samples_per_modality: 20,
            annotation_noise: 0.3,
            filler_rate: 0.5,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut cfg = synth::engine_config(&opts);
    let dir = tempfile::tempdir().unwrap();
    cfg.cache_dir = dir.path().to_path_buf();
    cfg.train.steps = 20;
    let records = synth::records(&opts.corpus);
    let n_experts = cfg.experts.len();

    let rho = ablate::run_grid(&cfg, &records, Grid::Rho, 2).map_err(|e| e.to_string())?;
    let Ablation::Rho { cells, .. } = &rho else { return Err("rho grid returned another table".into()) };
    ensure(cells.len() == RHO_GRID.len() && cells.iter().all(|c| c.recall.len() == n_experts), || {
        "rho grid shape".into()
    })?;
    let text = ablate::render(&rho);
    ensure(text.contains("(a) Raw -> Annotation") && text.contains("(b) Annotation -> Raw"), || {
        "missing a direction".into()
    })?;
    ensure(text.contains("desk-scale"), || "rho report does not state desk scale".into())?;

    let proj = ablate::run_grid(&cfg, &records, Grid::Projection, 2).map_err(|e| e.to_string())?;
    let Ablation::Projection { cells, ks, .. } = &proj else {
        return Err("projection grid returned another table".into());
    };
    let rows = LAMBDA_GRID.len() * DEPTHS.len();
    ensure(cells.len() == rows && ks == &[1, 3, 5] && cells.iter().all(|c| c.recall.len() == 3), || {
        "projection grid shape".into()
    })?;
    let text = ablate::render(&proj);
    ensure(text.contains("R@1") && text.contains("R@5") && text.contains("desk-scale"), || "projection report".into())?;
    Ok(format!(
        "rho table: {} rho columns x {n_experts} experts x 2 directions + acceptance; projection table: {rows} rows ({} weightings x {} depths) x R@1/3/5; reports state desk-scale values",
        RHO_GRID.len(),
        LAMBDA_GRID.len(),
        DEPTHS.len()
    ))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let guard = |f: fn() -> Outcome| std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
    results.push((1, "gradient correctness", guard(gradients)));
    results.push((2, "loss oracle equivalence", guard(loss_oracles)));
    let (gap, retrieval) = std::panic::catch_unwind(gap_and_retrieval)
        .unwrap_or_else(|_| (Err("panicked".into()), Err("panicked".into())));
    results.push((3, "modality-gap collapse", gap));
    results.push((4, "retrieval preservation", retrieval));
    results.push((5, "SNS gate safety and monotonicity", guard(sns_gate)));
    results.push((6, "retrieval oracle", guard(retrieval_oracle)));
    results.push((7, "curation baselines", guard(curation)));
    results.push((8, "determinism", guard(determinism)));
    results.push((9, "ablation table shapes", guard(ablation_shapes)));
    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("PASS {n} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n} {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
