use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn nucleus(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nucleus")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = nucleus(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn assert_same(a: &Path, b: &Path) {
    let (fa, fb) = (files(a), files(b));
    assert!(!fa.is_empty(), "{} is empty", a.display());
    assert_eq!(fa.iter().map(|f| &f.0).collect::<Vec<_>>(), fb.iter().map(|f| &f.0).collect::<Vec<_>>());
    for ((name, x), (_, y)) in fa.iter().zip(&fb) {
        assert!(x == y, "{name} differs between {} and {}", a.display(), b.display());
    }
}

/// Runs the whole pipeline in `dir` and returns the output directories.
fn pipeline(dir: &Path, tag: &str) -> Vec<PathBuf> {
    let cfg = ["--config", "w/engine.toml"];
    let data = ["--dataset", "w/dataset.jsonl"];
    let mut outs = Vec::new();
    let mut run = |extra: &[&str], name: String| {
        let mut args: Vec<&str> = cfg.to_vec();
        args.extend_from_slice(extra);
        args.extend_from_slice(&data);
        args.extend_from_slice(&["--out", &name]);
        ok(dir, &args);
        outs.push(dir.join(&name));
    };
    run(&["sns"], format!("sns{tag}"));
    run(&["train", "--steps", "150"], format!("train{tag}"));
    // same manifest as the first run: the warm rerun reads the first model
    let model = "train/model.json";
    for s in ["projection", "uniform", "stratified", "traditional"] {
        run(&["curate", "--strategy", s, "--n", "24", "--model", model], format!("curate-{s}{tag}"));
    }
    outs
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        ok(
            d,
            &[
                "synth",
                "--samples-per-modality",
                "30",
                "--annotation-noise",
                "0.3",
                "--filler-rate",
                "0.5",
                "--seed",
                "4",
                "--out",
                "w",
            ],
        );
    }
    assert_same(&a.path().join("w"), &b.path().join("w"));
    // a and b each start from an empty cache; the third run reuses a's cache
    let first = pipeline(a.path(), "");
    let second = pipeline(b.path(), "");
    let warm = pipeline(a.path(), "-again");
    for ((x, y), z) in first.iter().zip(&second).zip(&warm) {
        assert_same(x, y);
        assert_same(x, z);
    }
    let blend = std::fs::read_to_string(a.path().join("curate-stratified/blend.jsonl")).unwrap();
    assert_eq!(blend.lines().count(), 24);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("train/manifest.train.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert!(manifest["inputs"].as_array().unwrap().iter().any(|i| i["path"] == "w/dataset.jsonl"));
}

#[test]
fn eval_and_ablate_write_reports() {
    let d = tempfile::tempdir().unwrap();
    let d = d.path();
    ok(
        d,
        &["synth", "--samples-per-modality", "20", "--annotation-noise", "0.3", "--filler-rate", "0.5", "--out", "w"],
    );
    let text = ok(d, &["--config", "w/engine.toml", "eval", "--dataset", "w/dataset.jsonl", "--all", "--out", "e"]);
    assert!(text.contains("Recall@K"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("e/eval.json")).unwrap()).unwrap();
    assert_eq!(report["samples"], 80);
    assert_eq!(report["spaces"].as_array().unwrap().len(), 3);

    for grid in ["rho", "direction", "tau", "projection"] {
        ok(
            d,
            &[
                "--config",
                "w/engine.toml",
                "ablate",
                "--dataset",
                "w/dataset.jsonl",
                "--grid",
                grid,
                "--steps",
                "10",
                "--out",
                "a",
            ],
        );
        let txt = std::fs::read_to_string(d.join(format!("a/ablate.{grid}.txt"))).unwrap();
        assert!(txt.contains("desk-scale"), "{grid}: {txt}");
        assert!(d.join(format!("a/ablate.{grid}.json")).exists());
    }
}

#[test]
fn errors_map_to_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let d = d.path();
    let out = nucleus(d, &["train", "--dataset", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));

    ok(d, &["synth", "--samples-per-modality", "5", "--out", "w"]);
    ok(d, &["--config", "w/engine.toml", "embed", "--dataset", "w/dataset.jsonl"]);
    std::fs::write(
        d.join("bad.jsonl"),
        "{\"sample_id\":\"a\",\"pool_id\":\"p\",\"modality\":\"text\",\"raw\":\"x\",\"annotation\":\"y\"}\nnot json\n",
    )
    .unwrap();
    let out = nucleus(d, &["--config", "w/engine.toml", "embed", "--dataset", "bad.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2"), "{}", String::from_utf8_lossy(&out.stderr));

    let out = nucleus(d, &["--config", "w/engine.toml", "ablate", "--dataset", "w/dataset.jsonl", "--grid", "nope"]);
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(d.join("w/cache/expert0.eec"), b"garbage").unwrap();
    let out = nucleus(d, &["--config", "w/engine.toml", "embed", "--dataset", "w/dataset.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}
