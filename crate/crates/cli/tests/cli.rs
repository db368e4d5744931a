use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dynrca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynrca")).args(args).output().expect("spawn dynrca")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn line_count(p: PathBuf) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count()
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/river")
}

#[test]
fn generate_writes_dataset_files_with_preset_lengths() {
    let tmp = tempfile::tempdir().unwrap();
    let lin = tmp.path().join("lin");
    let o = dynrca(&["generate", "--system", "linear4", "--preset", "lin", "--seed", "1", "--out", path(&lin)]);
    assert!(o.status.success(), "{o:?}");
    for f in ["graph.json", "normal.csv", "factum.csv", "truth.json"] {
        assert!(lin.join(f).exists(), "{f}");
    }
    assert_eq!(line_count(lin.join("factum.csv")), 21);
    assert_eq!(line_count(lin.join("normal.csv")), 1001);

    let fhn = tmp.path().join("fhn");
    let o = dynrca(&["generate", "--system", "fhn", "--seed", "2", "--out", path(&fhn)]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(line_count(fhn.join("factum.csv")), 51);
}

#[test]
fn generate_is_deterministic_and_config_file_matches_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for dir in [&a, &b] {
        let o = dynrca(&["generate", "--system", "benchmark", "--seed", "4", "--t-factum", "120", "--out", path(dir)]);
        assert!(o.status.success(), "{o:?}");
    }
    let cfg = tmp.path().join("cfg.json");
    let body = serde_json::json!({"system": "benchmark", "seed": 4, "t_factum": 120, "out": c});
    std::fs::write(&cfg, body.to_string()).unwrap();
    let o = dynrca(&["generate", "--config", path(&cfg)]);
    assert!(o.status.success(), "{o:?}");
    for f in ["graph.json", "normal.csv", "factum.csv", "truth.json", "diagnosis.json"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(x, std::fs::read(c.join(f)).unwrap(), "{f}");
    }
    assert_eq!(line_count(a.join("factum.csv")), 121);
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, serde_json::json!({"system": "fhn", "seed": 1, "t_factum": 40}).to_string()).unwrap();
    let o = dynrca(&["generate", "--config", path(&cfg), "--t-factum", "30", "--out", path(&out)]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(line_count(out.join("factum.csv")), 31);
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    // seed is mandatory
    assert_eq!(dynrca(&["generate", "--system", "fhn", "--out", path(&out)]).status.code(), Some(2));
    assert_eq!(dynrca(&["generate", "--system", "nope", "--seed", "1"]).status.code(), Some(2));
    assert_eq!(dynrca(&["no-such-command"]).status.code(), Some(2));
    // missing dataset files
    let missing = tmp.path().join("missing");
    assert_eq!(dynrca(&["diagnose", "--data", path(&missing), "--seed", "1"]).status.code(), Some(3));
    // schema mismatch: a factum with the wrong columns
    let ds = tmp.path().join("ds");
    assert!(dynrca(&["generate", "--system", "linear4", "--seed", "1", "--out", path(&ds)]).status.success());
    std::fs::write(ds.join("factum.csv"), "t,a_1\n0,1.0\n1,2.0\n").unwrap();
    let o = dynrca(&["diagnose", "--data", path(&ds), "--seed", "1", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}

#[test]
fn diagnose_reports_identification_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let out = tmp.path().join("out");
    assert!(dynrca(&["generate", "--system", "linear4", "--seed", "1", "--out", path(&ds)]).status.success());
    let o = dynrca(&[
        "diagnose",
        "--data",
        path(&ds),
        "--seed",
        "3",
        "--out",
        path(&out),
        "--variant",
        "lin-sn",
        "--variant",
        "lin-n",
        "--emit-plot-data",
        "--epochs",
        "20",
    ]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let lines: Vec<_> = text.lines().filter(|l| l.starts_with("identified: ")).collect();
    assert_eq!(lines.len(), 2, "{text}");
    assert!(lines.iter().all(|l| *l == "identified: true" || *l == "identified: false"));
    for slug in ["lin-sn", "lin-n"] {
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join(format!("report_{slug}.json"))).unwrap()).unwrap();
        assert!(report["ranking"].is_object());
        let plot = std::fs::read_to_string(out.join(format!("shapley_time_{slug}.csv"))).unwrap();
        assert!(plot.starts_with("time,node,score\n"));
        // 4 nodes at t = 1..=19
        assert_eq!(plot.lines().count(), 1 + 4 * 19);
        assert!(out.join(format!("report_{slug}_exemplar_0.csv")).exists());
    }
}

#[test]
fn diagnose_without_truth_prints_no_identification_line() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let out = tmp.path().join("out");
    assert!(dynrca(&["generate", "--system", "linear4", "--seed", "5", "--out", path(&ds)]).status.success());
    std::fs::remove_file(ds.join("truth.json")).unwrap();
    let o = dynrca(&["diagnose", "--data", path(&ds), "--seed", "1", "--out", path(&out), "--epochs", "5"]);
    assert!(o.status.success(), "{o:?}");
    assert!(!stdout(&o).contains("identified:"));
    assert!(stdout(&o).contains("Lin(S,N)"));
}

#[test]
fn train_writes_a_model_that_the_library_reads_back() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let out = tmp.path().join("out");
    assert!(dynrca(&["generate", "--system", "linear4", "--seed", "2", "--out", path(&ds)]).status.success());
    let o = dynrca(&["train", "--data", path(&ds), "--seed", "2", "--model", "lin", "--out", path(&out)]);
    assert!(o.status.success(), "{o:?}");
    let graph =
        dynrca::graph::SummaryGraph::from_json(&std::fs::read_to_string(ds.join("graph.json")).unwrap()).unwrap();
    let fit =
        dynrca::models::FitResult::from_json(&std::fs::read_to_string(out.join("model_lin.json")).unwrap(), &graph)
            .unwrap();
    assert_eq!(fit.sigma_val_sq.len(), 4);
    assert!(stdout(&o).contains("sigma_val_sq"));
}

#[test]
fn ingest_river_on_shipped_fixture_ranks_the_surge() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("river");
    let cfg = fixture_dir().join("river.json");
    let o = dynrca(&[
        "ingest-river",
        "--river-config",
        path(&cfg),
        "--seed",
        "7",
        "--variant",
        "lin-sn",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("2 segment(s)"), "{text}");
    assert!(text.contains("1. henthorn @ t=30"), "{text}");
    let plot = std::fs::read_to_string(out.join("shapley_time_lin-sn.csv")).unwrap();
    for row in plot.lines().skip(1) {
        let score: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(score.is_finite());
    }
}

#[test]
fn small_experiment_runs_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let o = dynrca(&[
        "inject-sweep",
        "--system",
        "linear4",
        "--seed",
        "1",
        "--constants",
        "500",
        "--facta",
        "2",
        "--variant",
        "lin-sn",
        "--epochs",
        "10",
        "--n-samples",
        "4",
        "--emit-plot-data",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{o:?}");
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("constant,variant,accuracy,stderr,n\n"));
    assert_eq!(csv.lines().count(), 2);

    let out = tmp.path().join("bench");
    let o = dynrca(&[
        "benchmark",
        "--seed",
        "1",
        "--graphs",
        "2",
        "--lengths",
        "100",
        "--kind",
        "structural",
        "--variant",
        "lin-sn",
        "--epochs",
        "10",
        "--n-samples",
        "4",
        "--write-corpus",
        "--emit-plot-data",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(line_count(out.join("benchmark.csv")), 2);
    assert!(out.join("corpus/structural_T100_g001/truth.json").exists());

    let out = tmp.path().join("robust");
    let o = dynrca(&[
        "robustness",
        "--seed",
        "1",
        "--facta",
        "2",
        "--edit",
        "add:1",
        "--variant",
        "lin-sn",
        "--epochs",
        "10",
        "--n-samples",
        "4",
        "--emit-plot-data",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(line_count(out.join("robustness.csv")), 2);
    assert_eq!(dynrca(&["robustness", "--seed", "1", "--edit", "swap:1"]).status.code(), Some(2));
}
