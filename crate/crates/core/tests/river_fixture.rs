use std::path::Path;

use dynrca::river::{ingest_river, write_synthetic_fixture, RiverConfig, FIXTURE_STATIONS};

fn shipped() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/river")
}

#[test]
fn shipped_fixture_matches_regeneration() {
    let tmp = tempfile::tempdir().unwrap();
    write_synthetic_fixture(tmp.path(), 7).unwrap();
    let mut files: Vec<String> = FIXTURE_STATIONS.iter().map(|s| format!("{s}.csv")).collect();
    files.push("graph.json".into());
    files.push("river.json".into());
    for f in files {
        let fresh = std::fs::read(tmp.path().join(&f)).unwrap();
        let kept = std::fs::read(shipped().join(&f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        assert!(fresh == kept, "{f} differs from a fresh regeneration with seed 7");
    }
}

#[test]
fn shipped_fixture_ingests_with_gap_policy() {
    let (cfg, base) = RiverConfig::load(&shipped().join("river.json")).unwrap();
    let ds = ingest_river(&cfg, &base).unwrap();
    // 2-step gap filled, 10-step gap splits the training window
    assert_eq!(ds.n_interpolated, 2);
    assert_eq!(ds.normal.len(), 2);
    assert_eq!(ds.train_steps(), 2000 - 10);
    assert_eq!(ds.factum.len(), 90);
    assert!(ds.graph.nodes().iter().all(|n| n.name != "rainfall"));
    let phi = ds.classifier().unwrap();
    assert!(phi.normality(&ds.factum).unwrap() < 1.0, "the surge must reach the target");
}
