//! End-to-end diagnosis: fit the normal-behaviour model M, optionally the
//! normal-plus-factum model FM, abduct, score candidates, rank. Also the
//! experiment drivers built on it.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, DynamicScm, NoiseModel, Trajectory};
use crate::error::{RcaError, Result};
use crate::graph::SummaryGraph;
use crate::models::{fit, fit_fm_transitions, FitResult, ModelKind, TrainConfig, Transition};
use crate::rng::keyed_seed;
use crate::scoring::{
    approx_shapley, rank, Candidate, Classifier, CounterfactualEngine, InterventionRecipe, RankingResult, ScoreTable,
};
use crate::systems::{
    generate_benchmark_instance, inject, make_fhn, make_linear_4node, BenchmarkKind, BenchmarkSpec, FhnSpec,
    LinearSystemSpec, RcaInjection,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InterventionKind {
    /// Fresh noise at the site, abducted within M.
    NoiseOnly,
    /// Fresh noise plus M's transition at the site, abducted within FM.
    StructuralAndNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MethodVariant {
    pub model: ModelKind,
    pub intervention: InterventionKind,
}

impl MethodVariant {
    pub const ALL: [MethodVariant; 4] = [
        MethodVariant { model: ModelKind::Linear, intervention: InterventionKind::NoiseOnly },
        MethodVariant { model: ModelKind::Linear, intervention: InterventionKind::StructuralAndNoise },
        MethodVariant { model: ModelKind::ResidualMlp, intervention: InterventionKind::NoiseOnly },
        MethodVariant { model: ModelKind::ResidualMlp, intervention: InterventionKind::StructuralAndNoise },
    ];

    pub fn new(model: ModelKind, intervention: InterventionKind) -> Self {
        Self { model, intervention }
    }

    /// Display name such as `NLin(S,N)`.
    pub fn label(&self) -> String {
        let i = match self.intervention {
            InterventionKind::NoiseOnly => "N",
            InterventionKind::StructuralAndNoise => "S,N",
        };
        format!("{}({i})", self.model.label())
    }

    /// Command-line name such as `nlin-sn`.
    pub fn slug(&self) -> String {
        let i = match self.intervention {
            InterventionKind::NoiseOnly => "n",
            InterventionKind::StructuralAndNoise => "sn",
        };
        format!("{}-{i}", self.model.label().to_lowercase())
    }
}

impl fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for MethodVariant {
    type Err = RcaError;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.to_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        MethodVariant::ALL
            .into_iter()
            .find(|v| {
                v.slug().replace('-', "") == norm || v.label().to_lowercase().replace(['(', ')', ','], "") == norm
            })
            .ok_or_else(|| RcaError::Config(format!("unknown variant '{s}' (use lin-n, lin-sn, nlin-n, nlin-sn)")))
    }
}

/// Which classifier scores counterfactuals.
#[derive(Debug, Clone)]
pub enum PhiSpec {
    Fixed(Classifier),
    /// Gaussian log-likelihood under the fitted M with its `sigma_val_sq`.
    LogLikUnderM,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMode {
    /// Every `(node, time)` pair.
    Sites,
    /// One all-times intervention per node.
    Nodes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseConfig {
    pub train: TrainConfig,
    pub n_samples: usize,
    pub n_exemplars: usize,
    pub candidates: CandidateMode,
    /// Nodes left out of the candidate set.
    #[serde(default)]
    pub exclude: Vec<usize>,
}

impl DiagnoseConfig {
    pub const DEFAULT_SAMPLES: usize = 32;

    pub fn new(train: TrainConfig) -> Self {
        Self {
            train,
            n_samples: Self::DEFAULT_SAMPLES,
            n_exemplars: 5,
            candidates: CandidateMode::Sites,
            exclude: vec![],
        }
    }
}

/// Fitted normal-behaviour model.
#[derive(Debug, Clone)]
pub struct NormalModel {
    pub fit: FitResult,
    pub scm: Arc<DynamicScm>,
}

impl NormalModel {
    pub fn sigma_val_sq(&self) -> &[f64] {
        &self.fit.sigma_val_sq
    }
}

/// SCM over fitted transitions with isotropic noise at `sigma_val_sq`.
pub fn scm_from_fit(graph: &SummaryGraph, fit: &FitResult, sigma_val_sq: &[f64]) -> Result<DynamicScm> {
    let transitions = fit.transitions.iter().map(|f| Arc::new(f.clone()) as Arc<dyn Transition>).collect();
    DynamicScm::new(graph.clone(), transitions, NoiseModel::isotropic(sigma_val_sq), 1.0)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub fit_m_secs: f64,
    pub fit_fm_secs: f64,
    pub scoring_secs: f64,
    pub n_candidates: usize,
    pub n_diverged: usize,
}

#[derive(Debug, Clone)]
pub struct DiagnosisReport {
    pub variant: MethodVariant,
    pub scores: ScoreTable,
    pub ranking: RankingResult,
    pub truth: Option<Candidate>,
    /// Counterfactual samples of the top-ranked candidate.
    pub exemplars: Vec<Trajectory>,
    pub exemplar_candidate: Candidate,
    pub sigma_val_sq: Vec<f64>,
    pub runtime: RuntimeStats,
}

impl DiagnosisReport {
    pub fn identified(&self) -> bool {
        self.ranking.identified
    }

    /// True when several candidates tie at the top score.
    pub fn no_unique_root_cause(&self) -> bool {
        !self.ranking.is_unique()
    }

    pub fn to_json(&self, graph: &SummaryGraph) -> Result<String> {
        let ranking: serde_json::Value = serde_json::from_str(&self.ranking.to_json(graph)?)?;
        let named = |c: &Candidate| serde_json::json!({"node": graph.name(c.node()), "time": c.time()});
        let doc = serde_json::json!({
            "variant": self.variant.label(),
            "ranking": ranking,
            "no_unique_root_cause": self.no_unique_root_cause(),
            "truth": self.truth.as_ref().map(named),
            "top": self.ranking.sorted.iter().take(10)
                .map(|(c, s)| serde_json::json!({"candidate": named(c), "score": crate::scoring::format_float(*s)}))
                .collect::<Vec<_>>(),
            "scores_csv": self.scores.to_csv(graph)?,
            "sigma_val_sq": graph.nodes().iter().zip(&self.sigma_val_sq)
                .map(|(n, s)| (n.name.clone(), serde_json::json!(s)))
                .collect::<serde_json::Map<_, _>>(),
            "exemplar_candidate": named(&self.exemplar_candidate),
            "n_exemplars": self.exemplars.len(),
            "runtime": self.runtime,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// M fitted once on normal data, reused across facta and intervention kinds.
#[derive(Debug, Clone)]
pub struct Diagnoser {
    graph: SummaryGraph,
    normal: Vec<Trajectory>,
    model: ModelKind,
    cfg: DiagnoseConfig,
    m: NormalModel,
    fit_secs: f64,
}

impl Diagnoser {
    pub fn fit(normal: Vec<Trajectory>, graph: &SummaryGraph, model: ModelKind, cfg: DiagnoseConfig) -> Result<Self> {
        let start = Instant::now();
        let fit_m = fit(&normal, graph, model, &cfg.train)?;
        let scm = Arc::new(scm_from_fit(graph, &fit_m, &fit_m.sigma_val_sq)?);
        log::info!(
            "fitted {} on {} trajectories, sigma_val_sq = {:?}",
            model.label(),
            normal.len(),
            fit_m.sigma_val_sq
        );
        Ok(Self {
            graph: graph.clone(),
            normal,
            model,
            cfg,
            m: NormalModel { fit: fit_m, scm },
            fit_secs: start.elapsed().as_secs_f64(),
        })
    }

    pub fn model(&self) -> &NormalModel {
        &self.m
    }

    pub fn graph(&self) -> &SummaryGraph {
        &self.graph
    }

    pub fn config(&self) -> &DiagnoseConfig {
        &self.cfg
    }

    /// Abducted counterfactual SCM for `factum` under the given kind.
    pub fn engine(&self, factum: &Trajectory, kind: InterventionKind) -> Result<(CounterfactualEngine, f64)> {
        factum.check_layout(&self.graph)?;
        let sigma = self.m.fit.sigma_val_sq.clone();
        match kind {
            InterventionKind::NoiseOnly => {
                let recipe = InterventionRecipe { sigma_val_sq: sigma, replacements: None };
                Ok((CounterfactualEngine::new(self.m.scm.clone(), factum.clone(), recipe)?, 0.0))
            }
            InterventionKind::StructuralAndNoise => {
                let start = Instant::now();
                let fm = fit_fm_transitions(&self.normal, factum, &self.graph, self.model, &self.cfg.train)?;
                let host = Arc::new(scm_from_fit(&self.graph, &fm, &sigma)?);
                let recipe =
                    InterventionRecipe { sigma_val_sq: sigma, replacements: Some(self.m.scm.transitions().to_vec()) };
                let engine = CounterfactualEngine::new(host, factum.clone(), recipe)?;
                Ok((engine, start.elapsed().as_secs_f64()))
            }
        }
    }

    pub fn classifier(&self, phi: &PhiSpec) -> Result<Classifier> {
        match phi {
            PhiSpec::Fixed(c) => Ok(c.clone()),
            PhiSpec::LogLikUnderM => Classifier::loglik(self.m.scm.clone(), self.m.fit.sigma_val_sq.clone()),
        }
    }

    pub fn diagnose(
        &self,
        factum: &Trajectory,
        kind: InterventionKind,
        phi: &PhiSpec,
        truth: Option<Candidate>,
        seed: u64,
    ) -> Result<DiagnosisReport> {
        let variant = MethodVariant::new(self.model, kind);
        let (engine, fm_secs) = self.engine(factum, kind)?;
        let phi = self.classifier(phi)?;
        let candidates = match self.cfg.candidates {
            CandidateMode::Sites => engine.site_candidates(&self.cfg.exclude),
            CandidateMode::Nodes => (0..self.graph.len())
                .filter(|j| !self.cfg.exclude.contains(j))
                .map(|node| Candidate::Node { node })
                .collect(),
        };
        if candidates.is_empty() {
            return Err(RcaError::Config("no candidates left after exclusions".into()));
        }
        let start = Instant::now();
        let scores = approx_shapley(&candidates, &engine, &phi, self.cfg.n_samples, seed)?;
        let ranking = rank(&scores, truth.as_ref())?;
        let top = ranking.argmax[0];
        let exemplars = if self.cfg.n_exemplars > 0 {
            engine.samples(&[top], self.cfg.n_exemplars, keyed_seed(seed, &[0xE0]))?.trajectories()
        } else {
            vec![]
        };
        let runtime = RuntimeStats {
            fit_m_secs: self.fit_secs,
            fit_fm_secs: fm_secs,
            scoring_secs: start.elapsed().as_secs_f64(),
            n_candidates: candidates.len(),
            n_diverged: scores.entries.iter().map(|e| e.n_diverged).sum(),
        };
        if runtime.n_diverged > 0 {
            log::warn!("{variant}: {} counterfactual samples diverged", runtime.n_diverged);
        }
        Ok(DiagnosisReport {
            variant,
            scores,
            ranking,
            truth,
            exemplars,
            exemplar_candidate: top,
            sigma_val_sq: self.m.fit.sigma_val_sq.clone(),
            runtime,
        })
    }
}

/// One-shot diagnosis of a factum.
#[allow(clippy::too_many_arguments)]
pub fn diagnose(
    normal: &[Trajectory],
    factum: &Trajectory,
    graph: &SummaryGraph,
    variant: MethodVariant,
    cfg: &DiagnoseConfig,
    phi: &PhiSpec,
    truth: Option<Candidate>,
    seed: u64,
) -> Result<DiagnosisReport> {
    let d = Diagnoser::fit(normal.to_vec(), graph, variant.model, cfg.clone())?;
    d.diagnose(factum, variant.intervention, phi, truth, seed)
}

// ---------------------------------------------------------------------------
// Experiments

/// Mean and standard error of identification outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Accuracy {
    pub fn from_outcomes(hits: &[bool]) -> Self {
        let n = hits.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = hits.iter().filter(|h| **h).count() as f64 / n as f64;
        Self { mean, stderr: (mean * (1.0 - mean) / n as f64).sqrt(), n }
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.stderr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Linear,
    Fhn,
}

impl FromStr for SystemKind {
    type Err = RcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "linear" | "linear4" | "lin" => Ok(SystemKind::Linear),
            "fhn" => Ok(SystemKind::Fhn),
            other => Err(RcaError::Config(format!("unknown system '{other}'"))),
        }
    }
}

/// Fixed experimental setting of an injection system.
#[derive(Debug, Clone)]
pub struct InjectionSetup {
    pub scm: DynamicScm,
    pub y0: Vec<f64>,
    pub t_train: usize,
    pub t_factum: usize,
    pub node: usize,
    pub dim: usize,
    pub time: usize,
    /// Noise standard deviation that the constants are multiples of.
    pub sigma: f64,
    /// Corridor/band multiplier.
    pub k: f64,
}

impl InjectionSetup {
    /// Linear system: `x`, first dimension, `t = 6`, `T_factum = 20`.
    pub fn linear() -> Self {
        let spec = LinearSystemSpec::four_node();
        Self {
            scm: make_linear_4node(),
            y0: vec![0.0; 8],
            t_train: 1000,
            t_factum: 20,
            node: 1,
            dim: 0,
            time: 6,
            sigma: spec.noise_std(1),
            k: 10.0,
        }
    }

    /// FHN oscillator: `x1`, `t = 24`, `T_factum = 50`.
    pub fn fhn() -> Self {
        let spec = FhnSpec::default();
        Self {
            scm: make_fhn(&spec).expect("default spec"),
            y0: spec.y0.to_vec(),
            t_train: 1000,
            t_factum: 50,
            node: 0,
            dim: 0,
            time: 24,
            sigma: spec.noise_variance.sqrt(),
            k: 10.0,
        }
    }

    pub fn for_system(kind: SystemKind) -> Self {
        match kind {
            SystemKind::Linear => Self::linear(),
            SystemKind::Fhn => Self::fhn(),
        }
    }

    pub fn normal_data(&self, seed: u64) -> Result<Vec<Trajectory>> {
        Ok(vec![simulate(&self.scm, &self.y0, self.t_train, keyed_seed(seed, &[0x40]))?])
    }

    pub fn injection(&self, multiple: f64) -> RcaInjection {
        RcaInjection::AdditiveConstant { node: self.node, dim: self.dim, time: self.time, c: multiple * self.sigma }
    }

    pub fn truth(&self) -> Candidate {
        Candidate::Site { node: self.node, time: self.time }
    }

    /// Faulty trajectory `index` and its clean counterpart (same noise).
    pub fn factum(&self, multiple: f64, seed: u64, index: usize) -> Result<(Trajectory, Trajectory)> {
        let s = keyed_seed(seed, &[0xFA, index as u64]);
        let faulty = inject(&self.scm, &self.y0, self.t_factum, s, &self.injection(multiple))?;
        let clean = simulate(&self.scm, &self.y0, self.t_factum, s)?;
        Ok((faulty, clean))
    }
}

/// Classifier used by the injection experiments: a corridor on the last
/// node for the linear system, a band around the clean counterpart for FHN.
pub fn injection_classifier(
    kind: SystemKind,
    setup: &InjectionSetup,
    normal: &[Trajectory],
    clean: &Trajectory,
) -> Result<Classifier> {
    let g = setup.scm.graph();
    match kind {
        SystemKind::Linear => Classifier::corridor_from_data(g, g.len() - 1, normal, setup.k),
        SystemKind::Fhn => Classifier::band(clean.values().clone(), vec![setup.sigma; g.total_dim()], setup.k),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub constant: f64,
    pub variant: String,
    pub accuracy: Accuracy,
    pub outcomes: Vec<bool>,
}

/// Accuracy per injected constant (in multiples of the noise std) and
/// variant over `n_facta` facta.
pub fn run_injection_protocol(
    system: SystemKind,
    constants: &[f64],
    n_facta: usize,
    variants: &[MethodVariant],
    cfg: &DiagnoseConfig,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let setup = InjectionSetup::for_system(system);
    let normal = setup.normal_data(seed)?;
    let graph = setup.scm.graph().clone();
    let mut rows = Vec::new();
    for model in [ModelKind::Linear, ModelKind::ResidualMlp] {
        let kinds: Vec<InterventionKind> =
            variants.iter().filter(|v| v.model == model).map(|v| v.intervention).collect();
        if kinds.is_empty() {
            continue;
        }
        let diagnoser = Diagnoser::fit(normal.clone(), &graph, model, cfg.clone())?;
        for &c in constants {
            let mut outcomes: HashMap<InterventionKind, Vec<bool>> = HashMap::new();
            for i in 0..n_facta {
                let (factum, clean) = setup.factum(c, seed, i)?;
                let phi = PhiSpec::Fixed(injection_classifier(system, &setup, &normal, &clean)?);
                for &kind in &kinds {
                    let report =
                        diagnoser.diagnose(&factum, kind, &phi, Some(setup.truth()), keyed_seed(seed, &[i as u64]))?;
                    log::debug!(
                        "{} c={c} factum {i}: argmax {:?} identified {}",
                        report.variant,
                        report.ranking.argmax,
                        report.identified()
                    );
                    outcomes.entry(kind).or_default().push(report.identified());
                }
            }
            for kind in kinds.iter() {
                let hits = outcomes.remove(kind).unwrap_or_default();
                let variant = MethodVariant::new(model, *kind);
                let accuracy = Accuracy::from_outcomes(&hits);
                log::info!("{system:?} c = {c}σ {variant}: {accuracy}");
                rows.push(SweepRow { constant: c, variant: variant.label(), accuracy, outcomes: hits });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditMode {
    Remove,
    Add,
}

impl FromStr for EditMode {
    type Err = RcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remove" => Ok(EditMode::Remove),
            "add" => Ok(EditMode::Add),
            other => Err(RcaError::Config(format!("unknown edit mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub mode: EditMode,
    pub n_edits: usize,
    pub variant: String,
    pub accuracy: Accuracy,
}

/// Edges of a model graph, used as a cache key.
type EdgeList = Vec<(usize, usize)>;

/// Linear-system injection at `multiple` sigma with the model-side graph
/// randomly edited per factum. Data are always generated from the true graph.
pub fn run_robustness(
    cfg: &DiagnoseConfig,
    edits: &[(EditMode, usize)],
    n_facta: usize,
    multiple: f64,
    variants: &[MethodVariant],
    seed: u64,
) -> Result<Vec<RobustnessRow>> {
    let setup = InjectionSetup::linear();
    let normal = setup.normal_data(seed)?;
    let facta = (0..n_facta).map(|i| setup.factum(multiple, seed, i)).collect::<Result<Vec<_>>>()?;
    let true_graph = setup.scm.graph().clone();
    let phi = PhiSpec::Fixed(injection_classifier(SystemKind::Linear, &setup, &normal, &facta[0].1)?);
    let mut rows = Vec::new();
    for &(mode, n) in edits {
        let mut cache: HashMap<(ModelKind, EdgeList), Arc<Diagnoser>> = HashMap::new();
        let mut hits: HashMap<MethodVariant, Vec<bool>> = HashMap::new();
        for (i, (factum, _)) in facta.iter().enumerate() {
            let (n_remove, n_add) = match mode {
                EditMode::Remove => (n, 0),
                EditMode::Add => (0, n),
            };
            let (graph, edit) = true_graph.perturb(n_remove, n_add, keyed_seed(seed, &[0xED, i as u64]))?;
            log::debug!("factum {i}: removed {:?} added {:?}", edit.removed, edit.added);
            for v in variants {
                let key = (v.model, graph.edges().collect::<Vec<_>>());
                let d = match cache.get(&key) {
                    Some(d) => d.clone(),
                    None => {
                        let d = Arc::new(Diagnoser::fit(normal.clone(), &graph, v.model, cfg.clone())?);
                        cache.insert(key, d.clone());
                        d
                    }
                };
                let r = d.diagnose(factum, v.intervention, &phi, Some(setup.truth()), keyed_seed(seed, &[i as u64]))?;
                hits.entry(*v).or_default().push(r.identified());
            }
        }
        for v in variants {
            let accuracy = Accuracy::from_outcomes(&hits.remove(v).unwrap_or_default());
            log::info!("{mode:?} {n}: {v} {accuracy}");
            rows.push(RobustnessRow { mode, n_edits: n, variant: v.label(), accuracy });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub kind: BenchmarkKind,
    pub length: usize,
    pub variant: String,
    pub accuracy: Accuracy,
}

/// Node-level diagnosis over `spec.n_graphs` random instances per
/// `(kind, length)`, root node excluded, log-likelihood classifier.
pub fn run_benchmark(
    spec: &BenchmarkSpec,
    kinds: &[BenchmarkKind],
    train: &TrainConfig,
    n_samples: usize,
    variants: &[MethodVariant],
) -> Result<Vec<BenchmarkRow>> {
    let mut rows = Vec::new();
    for &kind in kinds {
        for &len in &spec.lengths {
            let mut hits: HashMap<MethodVariant, Vec<bool>> = HashMap::new();
            for g in 0..spec.n_graphs {
                let inst_seed = keyed_seed(spec.seed, &[kind as u64, len as u64, g as u64]);
                let inst = generate_benchmark_instance(spec, kind, len, inst_seed)?;
                let truth = Candidate::Node { node: inst.evaluated_root_cause().node };
                let cfg = DiagnoseConfig {
                    train: train.clone().with_seed(inst_seed),
                    n_samples,
                    n_exemplars: 0,
                    candidates: CandidateMode::Nodes,
                    exclude: inst.graph().roots(),
                };
                for model in [ModelKind::Linear, ModelKind::ResidualMlp] {
                    let wanted: Vec<_> = variants.iter().filter(|v| v.model == model).collect();
                    if wanted.is_empty() {
                        continue;
                    }
                    let d = Diagnoser::fit(inst.normal.clone(), inst.graph(), model, cfg.clone())?;
                    for v in wanted {
                        let r =
                            d.diagnose(&inst.factum, v.intervention, &PhiSpec::LogLikUnderM, Some(truth), inst_seed)?;
                        log::debug!("{kind:?} T={len} graph {g} {v}: argmax {:?} truth {truth}", r.ranking.argmax);
                        hits.entry(*v).or_default().push(r.identified());
                    }
                }
            }
            for v in variants {
                let accuracy = Accuracy::from_outcomes(&hits.remove(v).unwrap_or_default());
                log::info!("{kind:?} T={len} {v}: {accuracy}");
                rows.push(BenchmarkRow { kind, length: len, variant: v.label(), accuracy });
            }
        }
    }
    Ok(rows)
}
