//! Subcommand bodies.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use dynrca::config::{ExperimentConfig, SystemSelector};
use dynrca::graph::SummaryGraph;
use dynrca::io::{exemplar_path, shapley_time_csv, sweep_plot_csv, trajectory_to_csv, write_atomic, Dataset, Truth};
use dynrca::models::{fit, ModelKind};
use dynrca::pipeline::{
    run_benchmark, run_injection_protocol, run_robustness, CandidateMode, DiagnoseConfig, Diagnoser, DiagnosisReport,
    EditMode, InjectionSetup, MethodVariant, PhiSpec,
};
use dynrca::river::{self, write_synthetic_fixture, RiverConfig};
use dynrca::rng::keyed_seed;
use dynrca::scoring::{format_float, Candidate};
use dynrca::systems::{generate_benchmark_instance, BenchmarkKind, BenchmarkSpec};
use dynrca::RcaError;

use crate::settings::{read_optional, ClassifierSpec, DiagnosisSpec, DIAGNOSIS_FILE, EXPERIMENT_FILE};
use crate::{
    BenchmarkArgs, ClassifierArgs, DiagnoseArgs, GenerateArgs, RiverArgs, RobustnessArgs, SweepArgs, TrainArgs,
};

const DEFAULT_OUT: &str = "dynrca-out";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    RcaError::Config(msg.into()).into()
}

fn out_dir(cfg: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    std::fs::create_dir_all(&dir).map_err(RcaError::from).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn parse_variants(names: &[String], default: &[MethodVariant]) -> anyhow::Result<Vec<MethodVariant>> {
    if names.is_empty() {
        return Ok(default.to_vec());
    }
    let mut out = Vec::new();
    for n in names {
        let v: MethodVariant = n.parse()?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

fn parse_model(name: Option<&str>) -> anyhow::Result<ModelKind> {
    match name.unwrap_or("lin").to_lowercase().as_str() {
        "lin" | "linear" => Ok(ModelKind::Linear),
        "nlin" | "mlp" | "residual_mlp" => Ok(ModelKind::ResidualMlp),
        other => Err(usage(format!("unknown model '{other}' (lin, nlin)"))),
    }
}

fn data_dir(data: &Option<PathBuf>) -> anyhow::Result<&Path> {
    data.as_deref().ok_or_else(|| usage("--data is required"))
}

fn truth_candidate(truth: &Truth, graph: &SummaryGraph) -> anyhow::Result<Candidate> {
    let rc = truth.evaluated(graph)?;
    Ok(match rc.time {
        Some(time) => Candidate::Site { node: rc.node, time },
        None => Candidate::Node { node: rc.node },
    })
}

// ---------------------------------------------------------------------------

pub fn generate(args: GenerateArgs) -> anyhow::Result<()> {
    let system: SystemSelector = args.system.as_deref().ok_or_else(|| usage("--system is required"))?.parse()?;
    let cfg = args.common.experiment(None, system)?;
    let seed = cfg.require_seed()?;
    let dir = out_dir(&cfg)?;
    let index = args.index.unwrap_or(0);

    let spec = match system {
        SystemSelector::Linear4 | SystemSelector::Fhn => {
            let kind = system.injection_system().expect("injection system");
            let mut setup = InjectionSetup::for_system(kind);
            setup.t_train = cfg.t_train;
            setup.t_factum = cfg.t_factum;
            if setup.time + 1 >= setup.t_factum {
                return Err(usage(format!("t_factum must exceed the injection time {}", setup.time + 1)));
            }
            let constant = args.constant.unwrap_or(match kind {
                dynrca::pipeline::SystemKind::Linear => 500.0,
                dynrca::pipeline::SystemKind::Fhn => 2.0,
            });
            let graph = setup.scm.graph().clone();
            let normal = setup.normal_data(seed)?;
            let (factum, clean) = setup.factum(constant, seed, index)?;
            let truth = Truth::new(&[setup.injection(constant).label()], &graph);
            write_atomic(&dir.join("clean.csv"), trajectory_to_csv(&clean, &graph)?)?;
            Dataset { graph: graph.clone(), normal, factum, truth: Some(truth) }.write(&dir)?;
            let classifier = match kind {
                dynrca::pipeline::SystemKind::Linear => {
                    ClassifierSpec::Corridor { node: graph.name(graph.len() - 1).to_string(), k: setup.k }
                }
                dynrca::pipeline::SystemKind::Fhn => {
                    ClassifierSpec::Band { reference: "clean.csv".into(), sigma: setup.sigma, k: setup.k }
                }
            };
            DiagnosisSpec { classifier, candidates: CandidateMode::Sites, exclude: vec![] }
        }
        SystemSelector::Benchmark => {
            let kind = parse_benchmark_kind(args.kind.as_deref().unwrap_or("structural"))?;
            let bspec = BenchmarkSpec { seed, ..BenchmarkSpec::default() };
            let inst = generate_benchmark_instance(&bspec, kind, cfg.t_factum, keyed_seed(seed, &[index as u64]))?;
            let graph = inst.graph().clone();
            let evaluated = inst.root_causes.iter().position(|r| r == inst.evaluated_root_cause());
            let truth = Truth { evaluated, ..Truth::new(&inst.root_causes, &graph) };
            let roots = graph.roots().iter().map(|&r| graph.name(r).to_string()).collect();
            Dataset { graph, normal: inst.normal, factum: inst.factum, truth: Some(truth) }.write(&dir)?;
            DiagnosisSpec { classifier: ClassifierSpec::Loglik, candidates: CandidateMode::Nodes, exclude: roots }
        }
        SystemSelector::River => return Err(usage("river data come from station files; use ingest-river")),
    };
    write_json(&dir.join(DIAGNOSIS_FILE), &spec)?;
    // the stored config carries no seed so a later diagnosis must name its own
    write_json(&dir.join(EXPERIMENT_FILE), &ExperimentConfig { seed: None, output_dir: None, ..cfg })?;
    println!("wrote dataset to {}", dir.display());
    Ok(())
}

fn parse_benchmark_kind(s: &str) -> anyhow::Result<BenchmarkKind> {
    match s {
        "parametric" => Ok(BenchmarkKind::Parametric),
        "structural" => Ok(BenchmarkKind::Structural),
        other => Err(usage(format!("unknown benchmark kind '{other}' (parametric, structural)"))),
    }
}

// ---------------------------------------------------------------------------

pub fn train(args: TrainArgs) -> anyhow::Result<()> {
    let data = data_dir(&args.data)?;
    let ds = Dataset::read(data)?;
    let base = read_optional::<ExperimentConfig>(&data.join(EXPERIMENT_FILE))?;
    let cfg = args.common.experiment(base, SystemSelector::Linear4)?;
    let model = parse_model(args.model.as_deref())?;
    let result = fit(&ds.normal, &ds.graph, model, &cfg.train)?;
    let dir = out_dir(&cfg)?;
    let path = dir.join(format!("model_{}.json", model.label().to_lowercase()));
    write_atomic(&path, result.to_json(&ds.graph)?)?;
    for (j, s) in result.sigma_val_sq.iter().enumerate() {
        println!("{}: sigma_val_sq = {}", ds.graph.name(j), format_float(*s));
    }
    println!("wrote {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------

fn classifier_override(c: &ClassifierArgs, graph: &SummaryGraph) -> anyhow::Result<Option<ClassifierSpec>> {
    let Some(kind) = c.classifier.as_deref() else {
        return Ok(None);
    };
    let node = || c.node.clone().unwrap_or_else(|| graph.name(graph.len() - 1).to_string());
    Ok(Some(match kind {
        "corridor" => ClassifierSpec::Corridor { node: node(), k: c.k.unwrap_or(10.0) },
        "band" => ClassifierSpec::Band {
            reference: c.reference.clone().ok_or_else(|| usage("a band classifier needs --reference"))?,
            sigma: c.sigma.ok_or_else(|| usage("a band classifier needs --sigma"))?,
            k: c.k.unwrap_or(10.0),
        },
        "loglik" => ClassifierSpec::Loglik,
        "zscore" => ClassifierSpec::Zscore { node: node(), threshold: c.threshold.unwrap_or(3.0) },
        other => return Err(usage(format!("unknown classifier '{other}' (corridor, band, loglik, zscore)"))),
    }))
}

struct DiagnosisOutput<'a> {
    dir: &'a Path,
    graph: &'a SummaryGraph,
    emit_plot_data: bool,
    /// Renders a time index for stdout (river timestamps).
    time_label: &'a dyn Fn(usize) -> String,
}

impl DiagnosisOutput<'_> {
    fn write(&self, report: &DiagnosisReport) -> anyhow::Result<()> {
        let slug = report.variant.slug();
        let stem = format!("report_{slug}");
        write_atomic(&self.dir.join(format!("{stem}.json")), report.to_json(self.graph)?)?;
        write_atomic(&self.dir.join(format!("scores_{slug}.csv")), report.scores.to_csv(self.graph)?)?;
        for (i, ex) in report.exemplars.iter().enumerate() {
            write_atomic(&exemplar_path(self.dir, &stem, i), trajectory_to_csv(ex, self.graph)?)?;
        }
        if self.emit_plot_data {
            write_atomic(
                &self.dir.join(format!("shapley_time_{slug}.csv")),
                shapley_time_csv(&report.scores, self.graph)?,
            )?;
        }
        self.print(report);
        Ok(())
    }

    fn label(&self, c: &Candidate) -> String {
        match c.time() {
            Some(t) => format!("{} @ t={} ({})", self.graph.name(c.node()), t, (self.time_label)(t)),
            None => self.graph.name(c.node()).to_string(),
        }
    }

    fn print(&self, report: &DiagnosisReport) {
        println!("== {} ==", report.variant.label());
        for (rank, (c, score)) in report.ranking.sorted.iter().take(5).enumerate() {
            println!("{:>3}. {:<40} {}", rank + 1, self.label(c), format_float(*score));
        }
        if report.no_unique_root_cause() {
            println!("no unique root cause: {} candidates share the top score", report.ranking.argmax.len());
        }
        if let Some(t) = &report.truth {
            println!("truth: {}", self.label(t));
            println!("identified: {}", report.identified());
        }
    }
}

pub fn diagnose(args: DiagnoseArgs) -> anyhow::Result<()> {
    let data = data_dir(&args.data)?;
    let ds = Dataset::read(data).with_context(|| format!("reading dataset {}", data.display()))?;
    let base = read_optional::<ExperimentConfig>(&data.join(EXPERIMENT_FILE))?;
    let cfg = args.common.experiment(base, SystemSelector::Linear4)?;
    let seed = cfg.require_seed()?;
    let mut spec = read_optional::<DiagnosisSpec>(&data.join(DIAGNOSIS_FILE))?.unwrap_or_default();
    if let Some(c) = classifier_override(&args.classifier, &ds.graph)? {
        spec.classifier = c;
    }
    if let Some(m) = &args.candidates {
        spec.candidates = match m.as_str() {
            "sites" => CandidateMode::Sites,
            "nodes" => CandidateMode::Nodes,
            other => return Err(usage(format!("unknown candidate mode '{other}' (sites, nodes)"))),
        };
    }
    if !args.exclude.is_empty() {
        spec.exclude = args.exclude.clone();
    }
    let exclude = spec.exclude.iter().map(|n| ds.graph.index_of(n)).collect::<Result<Vec<_>, _>>()?;
    let phi = match spec.classifier.build(&ds.graph, &ds.normal, data)? {
        Some(c) => PhiSpec::Fixed(c),
        None => PhiSpec::LogLikUnderM,
    };
    let truth = ds.truth.as_ref().map(|t| truth_candidate(t, &ds.graph)).transpose()?;
    let variants = parse_variants(&args.variant, &[MethodVariant::ALL[1]])?;
    let dcfg = DiagnoseConfig {
        train: cfg.train.clone(),
        n_samples: cfg.n_samples,
        n_exemplars: args.exemplars.unwrap_or(5),
        candidates: spec.candidates,
        exclude,
    };
    let dir = out_dir(&cfg)?;
    let output = DiagnosisOutput {
        dir: &dir,
        graph: &ds.graph,
        emit_plot_data: args.emit_plot_data,
        time_label: &|t| format!("step {t}"),
    };
    run_variants(&ds.normal, &ds.factum, &ds.graph, &variants, &dcfg, &phi, truth, seed, &output)
}

#[allow(clippy::too_many_arguments)]
fn run_variants(
    normal: &[dynrca::dynamics::Trajectory],
    factum: &dynrca::dynamics::Trajectory,
    graph: &SummaryGraph,
    variants: &[MethodVariant],
    dcfg: &DiagnoseConfig,
    phi: &PhiSpec,
    truth: Option<Candidate>,
    seed: u64,
    output: &DiagnosisOutput<'_>,
) -> anyhow::Result<()> {
    // one fit of M per model kind, shared by its intervention kinds
    let mut by_model: BTreeMap<&str, (ModelKind, Vec<MethodVariant>)> = BTreeMap::new();
    for v in variants {
        by_model.entry(v.model.label()).or_insert((v.model, vec![])).1.push(*v);
    }
    for (model, vs) in by_model.into_values() {
        let d = Diagnoser::fit(normal.to_vec(), graph, model, dcfg.clone())?;
        for v in vs {
            let report = d.diagnose(factum, v.intervention, phi, truth, seed)?;
            output.write(&report)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RunRecord<'a, T> {
    config: &'a ExperimentConfig,
    rows: &'a [T],
}

pub fn benchmark(args: BenchmarkArgs) -> anyhow::Result<()> {
    let cfg = args.common.experiment(None, SystemSelector::Benchmark)?;
    let seed = cfg.require_seed()?;
    let defaults = BenchmarkSpec::default();
    let spec = BenchmarkSpec {
        n_nodes: args.nodes.unwrap_or(defaults.n_nodes),
        n_graphs: args.graphs.unwrap_or(defaults.n_graphs),
        lengths: if args.lengths.is_empty() { defaults.lengths.clone() } else { args.lengths.clone() },
        seed,
        ..defaults
    };
    let kinds = if args.kind.is_empty() {
        vec![BenchmarkKind::Parametric, BenchmarkKind::Structural]
    } else {
        args.kind.iter().map(|k| parse_benchmark_kind(k)).collect::<anyhow::Result<Vec<_>>>()?
    };
    let variants = parse_variants(&args.variant, &MethodVariant::ALL)?;
    let dir = out_dir(&cfg)?;
    if args.write_corpus {
        write_corpus(&dir.join("corpus"), &spec, &kinds)?;
    }
    let rows = run_benchmark(&spec, &kinds, &cfg.train, cfg.n_samples, &variants)?;
    write_json(&dir.join("benchmark.json"), &RunRecord { config: &cfg, rows: &rows })?;
    let mut table = String::from("kind,length,variant,accuracy,stderr,n\n");
    for r in &rows {
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.kind.name(),
            r.length,
            r.variant,
            format_float(r.accuracy.mean),
            format_float(r.accuracy.stderr),
            r.accuracy.n
        ));
        println!("{:<10} T={:<5} {:<10} {}", r.kind.name(), r.length, r.variant, r.accuracy);
    }
    if args.emit_plot_data {
        write_atomic(&dir.join("benchmark.csv"), table)?;
    }
    Ok(())
}

/// Same instances `run_benchmark` draws, one dataset directory each.
fn write_corpus(root: &Path, spec: &BenchmarkSpec, kinds: &[BenchmarkKind]) -> anyhow::Result<()> {
    for &kind in kinds {
        for &len in &spec.lengths {
            for g in 0..spec.n_graphs {
                let inst_seed = keyed_seed(spec.seed, &[kind as u64, len as u64, g as u64]);
                let inst = generate_benchmark_instance(spec, kind, len, inst_seed)?;
                let graph = inst.graph().clone();
                let evaluated = inst.root_causes.iter().position(|r| r == inst.evaluated_root_cause());
                let truth = Truth { evaluated, ..Truth::new(&inst.root_causes, &graph) };
                let dir = root.join(format!("{}_T{len}_g{g:03}", kind.name()));
                std::fs::create_dir_all(&dir).map_err(RcaError::from)?;
                let roots = graph.roots().iter().map(|&r| graph.name(r).to_string()).collect();
                Dataset { graph, normal: inst.normal, factum: inst.factum, truth: Some(truth) }.write(&dir)?;
                let d = DiagnosisSpec {
                    classifier: ClassifierSpec::Loglik,
                    candidates: CandidateMode::Nodes,
                    exclude: roots,
                };
                write_json(&dir.join(DIAGNOSIS_FILE), &d)?;
            }
        }
    }
    Ok(())
}

pub fn inject_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let system: SystemSelector = args.system.as_deref().unwrap_or("linear4").parse()?;
    let kind = system.injection_system().ok_or_else(|| usage("inject-sweep needs --system linear4 or fhn"))?;
    let cfg = args.common.experiment(None, system)?;
    let seed = cfg.require_seed()?;
    let constants = if args.constants.is_empty() {
        match kind {
            dynrca::pipeline::SystemKind::Linear => vec![1.0, 10.0, 100.0, 500.0],
            dynrca::pipeline::SystemKind::Fhn => vec![0.5, 1.0, 2.0, 5.0],
        }
    } else {
        args.constants.clone()
    };
    let variants = parse_variants(&args.variant, &MethodVariant::ALL)?;
    let dcfg = DiagnoseConfig { n_samples: cfg.n_samples, n_exemplars: 0, ..DiagnoseConfig::new(cfg.train.clone()) };
    let rows = run_injection_protocol(kind, &constants, args.facta.unwrap_or(20), &variants, &dcfg, seed)?;
    let dir = out_dir(&cfg)?;
    write_json(&dir.join("sweep.json"), &RunRecord { config: &cfg, rows: &rows })?;
    for r in &rows {
        println!("c = {:<8} {:<10} {}", format_float(r.constant), r.variant, r.accuracy);
    }
    if args.emit_plot_data {
        write_atomic(&dir.join("sweep.csv"), sweep_plot_csv(&rows)?)?;
    }
    Ok(())
}

fn parse_edit(s: &str) -> anyhow::Result<(EditMode, usize)> {
    let (mode, n) = s.split_once(':').ok_or_else(|| usage(format!("edit '{s}' should look like remove:1")))?;
    let n = n.parse().map_err(|_| usage(format!("edit '{s}': count must be a non-negative integer")))?;
    Ok((mode.parse()?, n))
}

pub fn robustness(args: RobustnessArgs) -> anyhow::Result<()> {
    let cfg = args.common.experiment(None, SystemSelector::Linear4)?;
    let seed = cfg.require_seed()?;
    let edits = if args.edit.is_empty() {
        vec![(EditMode::Remove, 1), (EditMode::Add, 1)]
    } else {
        args.edit.iter().map(|e| parse_edit(e)).collect::<anyhow::Result<Vec<_>>>()?
    };
    let variants = parse_variants(&args.variant, &[MethodVariant::ALL[1], MethodVariant::ALL[3]])?;
    let dcfg = DiagnoseConfig { n_samples: cfg.n_samples, n_exemplars: 0, ..DiagnoseConfig::new(cfg.train.clone()) };
    let rows =
        run_robustness(&dcfg, &edits, args.facta.unwrap_or(20), args.constant.unwrap_or(500.0), &variants, seed)?;
    let dir = out_dir(&cfg)?;
    write_json(&dir.join("robustness.json"), &RunRecord { config: &cfg, rows: &rows })?;
    let mut table = String::from("mode,n_edits,variant,accuracy,stderr,n\n");
    for r in &rows {
        let mode = match r.mode {
            EditMode::Remove => "remove",
            EditMode::Add => "add",
        };
        table.push_str(&format!(
            "{mode},{},{},{},{},{}\n",
            r.n_edits,
            r.variant,
            format_float(r.accuracy.mean),
            format_float(r.accuracy.stderr),
            r.accuracy.n
        ));
        println!("{mode} {} {:<10} {}", r.n_edits, r.variant, r.accuracy);
    }
    if args.emit_plot_data {
        write_atomic(&dir.join("robustness.csv"), table)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------

pub fn ingest_river(args: RiverArgs) -> anyhow::Result<()> {
    let cfg = args.common.experiment(None, SystemSelector::River)?;
    let seed = cfg.require_seed()?;
    let (mut rcfg, base) = match (&args.write_fixture, &args.river_config) {
        (Some(dir), None) => {
            std::fs::create_dir_all(dir).map_err(RcaError::from)?;
            let rc: RiverConfig = write_synthetic_fixture(dir, seed)?;
            println!("wrote synthetic river fixture to {}", dir.display());
            (rc, dir.clone())
        }
        (None, Some(path)) => RiverConfig::load(path)?,
        (Some(_), Some(_)) => return Err(usage("give either --write-fixture or --river-config, not both")),
        (None, None) => return Err(usage("--river-config is required")),
    };
    if let Some(cap) = args.subsample_cap {
        rcfg.subsample_cap = cap;
    }
    if let Some(z) = args.z_threshold {
        rcfg.z_threshold = z;
    }
    let ds = river::ingest_river(&rcfg, &base)?;
    println!(
        "ingested {} training steps in {} segment(s), {} interpolated values; factum of {} steps from {}",
        ds.train_steps(),
        ds.normal.len(),
        ds.n_interpolated,
        ds.factum.len(),
        ds.factum_start
    );
    let variants = parse_variants(&args.variant, &[MethodVariant::ALL[3]])?;
    let dcfg = DiagnoseConfig {
        train: cfg.train.clone(),
        n_samples: cfg.n_samples,
        n_exemplars: args.exemplars.unwrap_or(5),
        candidates: CandidateMode::Sites,
        exclude: vec![],
    };
    let phi = PhiSpec::Fixed(ds.classifier()?);
    let dir = out_dir(&cfg)?;
    let output = DiagnosisOutput {
        dir: &dir,
        graph: &ds.graph,
        emit_plot_data: true,
        time_label: &|t| ds.timestamp(t).format("%Y-%m-%d %H:%M").to_string(),
    };
    run_variants(&ds.normal, &ds.factum, &ds.graph, &variants, &dcfg, &phi, None, seed, &output)
}
