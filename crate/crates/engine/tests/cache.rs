use nucleus_core::{Embedding, Modality};
use nucleus_engine::cache::EmbeddingCache;
use nucleus_engine::EngineError;

fn emb(id: &str, v: Vec<f64>) -> Embedding {
    Embedding::new(v, "e0", Modality::Image, id).unwrap()
}

#[test]
fn round_trip_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/e0.eec");
    let a = emb("a", vec![3.0, 4.0, 0.0]);
    let b = emb("b", vec![0.0, 1.0, 1.0]);
    {
        let cache = EmbeddingCache::open(&path, 3).unwrap();
        assert!(cache.is_empty());
        assert!(cache.get("a", "e0").is_none());
        cache.put_all(&[a.clone(), b.clone()]).unwrap();
        cache.put(&a).unwrap();
        assert_eq!(cache.len(), 2);
    }
    let cache = EmbeddingCache::open(&path, 3).unwrap();
    assert_eq!(cache.len(), 2);
    assert!(cache.contains("b", "e0"));
    assert!(!cache.contains("b", "e1"));
    let got = cache.get("a", "e0").unwrap();
    assert_eq!(got.modality, Modality::Image);
    for (x, y) in got.values().iter().zip(a.values()) {
        assert!((x - y).abs() < 1e-7);
    }
    // a second read is bit-identical to the first
    assert_eq!(cache.get("a", "e0").unwrap(), got);
}

#[test]
fn existing_entries_are_not_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e0.eec");
    let cache = EmbeddingCache::open(&path, 2).unwrap();
    cache.put(&emb("a", vec![1.0, 0.0])).unwrap();
    cache.put(&emb("a", vec![0.0, 1.0])).unwrap();
    assert_eq!(cache.get("a", "e0").unwrap().values(), &[1.0, 0.0]);
    drop(cache);
    assert_eq!(EmbeddingCache::open(&path, 2).unwrap().len(), 1);
}

#[test]
fn corrupt_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.eec");
    std::fs::write(&path, b"not a cache file at all").unwrap();
    let err = EmbeddingCache::open(&path, 4).unwrap_err();
    assert!(matches!(err, EngineError::CacheCorrupt { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);

    let good = dir.path().join("good.eec");
    EmbeddingCache::open(&good, 2).unwrap().put(&emb("a", vec![1.0, 1.0])).unwrap();
    let mut bytes = std::fs::read(&good).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&good, &bytes).unwrap();
    assert!(matches!(EmbeddingCache::open(&good, 2), Err(EngineError::CacheCorrupt { .. })));
}

#[test]
fn dimension_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e0.eec");
    let cache = EmbeddingCache::open(&path, 2).unwrap();
    assert!(matches!(cache.put(&emb("a", vec![1.0, 0.0, 0.0])), Err(EngineError::Validation(_))));
    drop(cache);
    assert!(matches!(EmbeddingCache::open(&path, 5), Err(EngineError::Validation(_))));
}
