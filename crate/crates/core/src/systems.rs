//! Ground-truth systems and root-cause injection: the coupled linear
//! 4-node system, the FitzHugh-Nagumo oscillator, and a random linear
//! benchmark over six univariate nodes.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{array, concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    simulate, simulate_interventional, DynamicScm, Intervention, NodeNoise, NoiseModel, OffsetTransition, Trajectory,
};
use crate::error::{RcaError, Result};
use crate::graph::SummaryGraph;
use crate::models::{ModelKind, Transition, TransitionFn};
use crate::rng::{keyed_seed, rng_from_seed};

/// Coupled linear system `Y^j_t = A^j Y^j_{t-1} + sum_k B^{kj} Y^k_{t-1} + C^j z`.
#[derive(Debug, Clone)]
pub struct LinearSystemSpec {
    pub graph: SummaryGraph,
    pub a: Vec<Array2<f64>>,
    /// Coupling matrices keyed by `(source, target)`.
    pub b: BTreeMap<(usize, usize), Array2<f64>>,
    pub c: Vec<Array2<f64>>,
}

impl LinearSystemSpec {
    /// The four-node system `w -> x -> {y, z}`, `y -> z`.
    pub fn four_node() -> Self {
        let graph = SummaryGraph::from_names(
            &[("w", 2), ("x", 2), ("y", 2), ("z", 2)],
            &[("w", "x"), ("x", "y"), ("x", "z"), ("y", "z")],
        )
        .expect("static graph");
        let a = vec![
            array![[0.949, 0.313], [-0.313, 0.949]],
            array![[0.2, -0.1], [-0.1, 0.2]],
            array![[0.2, 0.1], [0.1, 0.2]],
            array![[0.2, 0.1], [0.1, 0.2]],
        ];
        let b = BTreeMap::from([
            ((0, 1), array![[0.5, 0.2], [0.2, -0.5]]),
            ((1, 2), array![[-0.9, 0.7], [0.7, -0.9]]),
            ((1, 3), array![[0.4, 0.9], [0.9, 0.4]]),
            ((2, 3), array![[0.6, 0.4], [0.4, 0.6]]),
        ]);
        let c = vec![array![[0.01, 0.01], [0.01, 0.01]]; 4];
        Self { graph, a, b, c }
    }

    /// Residual-form SCM: the transition of node `j` is
    /// `[B^{k_1 j} .. B^{k_m j}, A^j - I]` applied to `parents ++ self`.
    pub fn build(&self) -> Result<DynamicScm> {
        let g = &self.graph;
        let mut transitions: Vec<Arc<dyn Transition>> = Vec::with_capacity(g.len());
        for j in 0..g.len() {
            let d = g.dim(j);
            if self.a[j].dim() != (d, d) {
                return Err(RcaError::shape(format!("{d}x{d} self matrix"), format!("{:?}", self.a[j].dim())));
            }
            let radius = spectral_radius_bound(self.a[j].view());
            if radius >= 1.0 {
                return Err(RcaError::Config(format!(
                    "self matrix of '{}' is not stable (spectral radius {radius:.4})",
                    g.name(j)
                )));
            }
            let mut blocks = Vec::new();
            for &k in g.parents(j)? {
                let m = self
                    .b
                    .get(&(k, j))
                    .ok_or_else(|| RcaError::Config(format!("missing coupling {} -> {}", g.name(k), g.name(j))))?;
                blocks.push(m.clone());
            }
            blocks.push(&self.a[j] - &Array2::<f64>::eye(d));
            let views: Vec<_> = blocks.iter().map(|m| m.view()).collect();
            let w = concatenate(Axis(1), &views).map_err(|e| RcaError::shape(g.input_dim(j), e))?;
            transitions.push(Arc::new(TransitionFn::linear(w, Array1::zeros(d))?));
        }
        if self.b.keys().any(|&(k, j)| !g.has_edge(k, j)) {
            return Err(RcaError::Config("coupling matrix for an edge that is not in the graph".into()));
        }
        let noise = NoiseModel { nodes: self.c.iter().map(|c| NodeNoise::Scaled(c.clone())).collect() };
        DynamicScm::new(g.clone(), transitions, noise, 1.0)
    }

    /// Per-dimension noise standard deviation of node `j` (`sqrt` of the
    /// mean diagonal of `C C^T`).
    pub fn noise_std(&self, j: usize) -> f64 {
        NodeNoise::Scaled(self.c[j].clone()).mean_variance().sqrt()
    }
}

/// Spectral radius of a small square matrix: exact for 1x1 and 2x2,
/// otherwise the Gelfand estimate `||A^k||^(1/k)` at `k = 256`.
pub fn spectral_radius_bound(a: ArrayView2<'_, f64>) -> f64 {
    match a.dim() {
        (1, 1) => a[[0, 0]].abs(),
        (2, 2) => {
            let tr = a[[0, 0]] + a[[1, 1]];
            let det = a[[0, 0]] * a[[1, 1]] - a[[0, 1]] * a[[1, 0]];
            let disc = tr * tr / 4.0 - det;
            if disc >= 0.0 {
                (tr / 2.0).abs() + disc.sqrt()
            } else {
                det.sqrt()
            }
        }
        _ => {
            let mut p = a.to_owned();
            let mut log_scale = 0.0;
            for _ in 0..8 {
                p = p.dot(&p);
                let n = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                p /= n;
                log_scale = 2.0 * log_scale + n.ln();
            }
            (log_scale / 256.0).exp()
        }
    }
}

pub fn make_linear_4node() -> DynamicScm {
    LinearSystemSpec::four_node().build().expect("static system is valid")
}

/// FitzHugh-Nagumo right-hand side.
pub fn fhn_rhs(x1: f64, x2: f64) -> (f64, f64) {
    (3.0 * (x1 - x1.powi(3) / 3.0 + x2), (0.2 - 3.0 * x1 - 0.2 * x2) / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhnSpec {
    pub noise_variance: f64,
    pub dt: f64,
    /// Explicit Euler substeps per sampling step.
    pub substeps: usize,
    pub y0: [f64; 2],
}

impl Default for FhnSpec {
    fn default() -> Self {
        Self { noise_variance: 0.0025, dt: 1.0, substeps: 20, y0: [-1.0, 1.0] }
    }
}

/// Euler-integrated FitzHugh-Nagumo increment over one sampling step.
#[derive(Debug, Clone, Copy)]
pub struct FhnTransition {
    pub dt: f64,
    pub substeps: usize,
}

impl FhnTransition {
    pub fn increment(&self, x1: f64, x2: f64) -> (f64, f64) {
        let h = self.dt / self.substeps as f64;
        let (mut a, mut b) = (x1, x2);
        for _ in 0..self.substeps {
            let (da, db) = fhn_rhs(a, b);
            a += h * da;
            b += h * db;
        }
        (a - x1, b - x2)
    }
}

impl Transition for FhnTransition {
    fn in_dim(&self) -> usize {
        2
    }

    fn out_dim(&self) -> usize {
        2
    }

    fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((inputs.nrows(), 2));
        for (row, mut o) in inputs.outer_iter().zip(out.outer_iter_mut()) {
            let (a, b) = self.increment(row[0], row[1]);
            o[0] = a;
            o[1] = b;
        }
        out
    }
}

pub fn make_fhn(spec: &FhnSpec) -> Result<DynamicScm> {
    if spec.substeps == 0 {
        return Err(RcaError::Config("FHN substeps must be at least 1".into()));
    }
    let graph = SummaryGraph::from_names(&[("x", 2)], &[])?;
    let f = FhnTransition { dt: spec.dt, substeps: spec.substeps };
    DynamicScm::new(graph, vec![Arc::new(f)], NoiseModel::isotropic(&[spec.noise_variance]), spec.dt)
}

/// Root cause planted into a generated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RcaInjection {
    /// Adds `c` to dimension `dim` of the node's equation at one step.
    AdditiveConstant { node: usize, dim: usize, time: usize, c: f64 },
    /// Redraws the node's linear coefficients from `onset` on, magnitudes
    /// uniform in `range` with random signs.
    ParametricChange {
        node: usize,
        onset: usize,
        seed: u64,
        #[serde(default = "default_coef_range")]
        range: (f64, f64),
    },
    /// Zeroes the node's linear coefficients from `onset` on.
    StructuralBreak { node: usize, onset: usize },
}

impl RcaInjection {
    pub fn node(&self) -> usize {
        match self {
            RcaInjection::AdditiveConstant { node, .. }
            | RcaInjection::ParametricChange { node, .. }
            | RcaInjection::StructuralBreak { node, .. } => *node,
        }
    }

    pub fn time(&self) -> usize {
        match self {
            RcaInjection::AdditiveConstant { time, .. } => *time,
            RcaInjection::ParametricChange { onset, .. } | RcaInjection::StructuralBreak { onset, .. } => *onset,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            RcaInjection::AdditiveConstant { .. } => "additive",
            RcaInjection::ParametricChange { .. } => "parametric",
            RcaInjection::StructuralBreak { .. } => "structural",
        }
    }

    /// Ground-truth label: a single site for additive constants, the node
    /// for persistent changes.
    pub fn label(&self) -> RootCause {
        match self {
            RcaInjection::AdditiveConstant { node, time, .. } => {
                RootCause { node: *node, time: Some(*time), kind: self.kind_name().into() }
            }
            _ => RootCause { node: self.node(), time: None, kind: self.kind_name().into() },
        }
    }

    /// Structural replacements that realise this injection in `scm`.
    pub fn interventions(&self, scm: &DynamicScm, len: usize) -> Result<Vec<Intervention>> {
        let g = scm.graph();
        let node = self.node();
        if node >= g.len() {
            return Err(RcaError::Bounds(format!("injection on node #{node}")));
        }
        if self.time() == 0 || self.time() >= len {
            return Err(RcaError::Bounds(format!("injection time {} outside [1, {}]", self.time(), len - 1)));
        }
        match self {
            RcaInjection::AdditiveConstant { dim, time, c, .. } => {
                if *dim >= g.dim(node) {
                    return Err(RcaError::Bounds(format!("dim {dim} of node '{}'", g.name(node))));
                }
                let mut offset = vec![0.0; g.dim(node)];
                offset[*dim] = *c;
                let transition = Arc::new(OffsetTransition { base: scm.transition(node).clone(), offset });
                Ok(vec![Intervention::StructReplace { node, time: *time, transition }])
            }
            RcaInjection::ParametricChange { onset, seed, range, .. } => {
                let f = changed_linear(scm, node, CoefficientChange::Redraw(*seed, *range))?;
                Ok(persistent(node, *onset, len, Arc::new(f)))
            }
            RcaInjection::StructuralBreak { onset, .. } => {
                let f = changed_linear(scm, node, CoefficientChange::Zero)?;
                Ok(persistent(node, *onset, len, Arc::new(f)))
            }
        }
    }
}

fn persistent(node: usize, onset: usize, len: usize, f: Arc<dyn Transition>) -> Vec<Intervention> {
    (onset..len).map(|time| Intervention::StructReplace { node, time, transition: f.clone() }).collect()
}

/// Ground-truth root cause as stored in `truth.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootCause {
    pub node: usize,
    pub time: Option<usize>,
    pub kind: String,
}

/// Simulate with the same seed as `simulate` and plant `injection`.
pub fn inject(scm: &DynamicScm, y0: &[f64], len: usize, seed: u64, injection: &RcaInjection) -> Result<Trajectory> {
    inject_all(scm, y0, len, seed, std::slice::from_ref(injection))
}

pub fn inject_all(
    scm: &DynamicScm,
    y0: &[f64],
    len: usize,
    seed: u64,
    injections: &[RcaInjection],
) -> Result<Trajectory> {
    let mut all = Vec::new();
    for inj in injections {
        all.extend(inj.interventions(scm, len)?);
    }
    simulate_interventional(scm, y0, len, seed, &all)
}

// ---------------------------------------------------------------------------
// Linear univariate benchmark

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    Parametric,
    Structural,
}

impl BenchmarkKind {
    pub fn name(self) -> &'static str {
        match self {
            BenchmarkKind::Parametric => "parametric",
            BenchmarkKind::Structural => "structural",
        }
    }
}

/// Every tunable constant of the benchmark generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub n_nodes: usize,
    pub n_graphs: usize,
    pub lengths: Vec<usize>,
    /// Magnitude range of coupling coefficients; signs are random.
    pub coef_range: (f64, f64),
    /// Non-residual self coefficient of every node.
    pub self_coef: f64,
    pub noise_std: f64,
    pub max_parents: usize,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            n_nodes: 6,
            n_graphs: 30,
            lengths: vec![100, 200, 500, 1000],
            coef_range: (0.5, 0.95),
            self_coef: 0.2,
            noise_std: 0.1,
            max_parents: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkInstance {
    pub scm: DynamicScm,
    pub normal: Vec<Trajectory>,
    pub factum: Trajectory,
    pub root_causes: Vec<RootCause>,
    pub injections: Vec<RcaInjection>,
}

impl BenchmarkInstance {
    pub fn graph(&self) -> &SummaryGraph {
        self.scm.graph()
    }

    /// The root cause away from the root node, the one that is scored.
    pub fn evaluated_root_cause(&self) -> &RootCause {
        let roots = self.graph().roots();
        self.root_causes.iter().find(|r| !roots.contains(&r.node)).expect("one non-root cause")
    }
}

fn draw_coefficients(seed: u64, n: usize, range: (f64, f64)) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let mag = rng.random_range(range.0..=range.1);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Coefficient seed of node `j` in an instance or a parametric redraw.
pub fn coefficient_seed(seed: u64, node: usize) -> u64 {
    keyed_seed(seed, &[0xC0EF, node as u64])
}

fn default_coef_range() -> (f64, f64) {
    BenchmarkSpec::default().coef_range
}

enum CoefficientChange {
    Redraw(u64, (f64, f64)),
    Zero,
}

/// Linear transition of `node` with its coupling (or, for a root node, its
/// self) coefficients changed.
fn changed_linear(scm: &DynamicScm, node: usize, change: CoefficientChange) -> Result<TransitionFn> {
    let g = scm.graph();
    if g.dim(node) != 1 {
        return Err(RcaError::Config("coefficient changes need a univariate node".into()));
    }
    let base = scm
        .transition(node)
        .as_transition_fn()
        .filter(|f| f.kind() == ModelKind::Linear)
        .ok_or_else(|| RcaError::Config(format!("node '{}' is not linear", g.name(node))))?;
    let layer = &base.layers()[0];
    let mut w = layer.w.row(0).to_vec();
    let n_par = g.parents(node)?.len();
    if n_par == 0 {
        // root node: change the (non-residual) self coefficient
        let self_coef = match change {
            CoefficientChange::Redraw(seed, range) => draw_coefficients(coefficient_seed(seed, node), 1, range)[0],
            CoefficientChange::Zero => 0.0,
        };
        w[0] = self_coef - 1.0;
    } else {
        let new = match change {
            CoefficientChange::Redraw(seed, range) => draw_coefficients(coefficient_seed(seed, node), n_par, range),
            CoefficientChange::Zero => vec![0.0; n_par],
        };
        w[..n_par].copy_from_slice(&new);
    }
    let len = w.len();
    TransitionFn::linear(Array2::from_shape_vec((1, len), w).expect("row"), layer.b.clone())
}

/// Random DAG over univariate nodes with node 0 the unique root; every
/// other node takes 1 to `max_parents` parents among earlier nodes.
pub fn benchmark_scm(spec: &BenchmarkSpec, seed: u64) -> Result<DynamicScm> {
    if spec.n_nodes < 2 {
        return Err(RcaError::Config("benchmark needs at least two nodes".into()));
    }
    let mut rng = rng_from_seed(keyed_seed(seed, &[0x6A]));
    let mut edges = Vec::new();
    for j in 1..spec.n_nodes {
        let k = rng.random_range(1..=spec.max_parents.min(j).max(1));
        for p in rand::seq::index::sample(&mut rng, j, k).into_iter() {
            edges.push((p, j));
        }
    }
    let names: Vec<String> = (0..spec.n_nodes).map(|i| format!("v{i}")).collect();
    let nodes = names.iter().map(|n| crate::graph::NodeSpec::new(n, 1)).collect();
    let graph = SummaryGraph::new(nodes, edges)?;
    let mut transitions: Vec<Arc<dyn Transition>> = Vec::new();
    for j in 0..spec.n_nodes {
        let n_par = graph.parents(j)?.len();
        let mut w = draw_coefficients(coefficient_seed(seed, j), n_par, spec.coef_range);
        w.push(spec.self_coef - 1.0);
        let len = w.len();
        transitions
            .push(Arc::new(TransitionFn::linear(Array2::from_shape_vec((1, len), w).expect("row"), array![0.0])?));
    }
    let var = spec.noise_std * spec.noise_std;
    DynamicScm::new(graph, transitions, NoiseModel::isotropic(&vec![var; spec.n_nodes]), 1.0)
}

/// One benchmark instance: normal data and a factum of length `len`, with
/// persistent root causes from `len / 2` on the root node and on one other
/// node chosen uniformly.
pub fn generate_benchmark_instance(
    spec: &BenchmarkSpec,
    kind: BenchmarkKind,
    len: usize,
    seed: u64,
) -> Result<BenchmarkInstance> {
    let scm = benchmark_scm(spec, seed)?;
    let onset = len / 2;
    let mut rng = rng_from_seed(keyed_seed(seed, &[0x7A]));
    let target = rng.random_range(1..spec.n_nodes);
    let redraw = keyed_seed(seed, &[0xD1FF]);
    let injections: Vec<RcaInjection> = [0, target]
        .into_iter()
        .map(|node| match kind {
            BenchmarkKind::Parametric => {
                RcaInjection::ParametricChange { node, onset, seed: redraw, range: spec.coef_range }
            }
            BenchmarkKind::Structural => RcaInjection::StructuralBreak { node, onset },
        })
        .collect();
    let y0 = vec![0.0; spec.n_nodes];
    let normal = vec![simulate(&scm, &y0, len, keyed_seed(seed, &[1]))?];
    let factum = inject_all(&scm, &y0, len, keyed_seed(seed, &[2]), &injections)?;
    let root_causes = injections.iter().map(RcaInjection::label).collect();
    Ok(BenchmarkInstance { scm, normal, factum, root_causes, injections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::abduct;

    #[test]
    fn four_node_wiring_and_stability() {
        let spec = LinearSystemSpec::four_node();
        let g = &spec.graph;
        let z = g.index_of("z").unwrap();
        assert_eq!(g.parents(z).unwrap(), &[1, 2]);
        for a in &spec.a {
            assert!(spectral_radius_bound(a.view()) < 1.0);
        }
        let rho = spectral_radius_bound(spec.a[0].view());
        assert!((rho - (0.949f64.powi(2) + 0.313f64.powi(2)).sqrt()).abs() < 1e-12);
        assert!((spec.noise_std(0) - 2e-4f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gelfand_estimate_matches_closed_form() {
        let a = array![[0.5, 0.2, 0.0], [0.0, -0.7, 0.1], [0.0, 0.0, 0.3]];
        assert!((spectral_radius_bound(a.view()) - 0.7).abs() < 0.02);
    }

    #[test]
    fn unstable_self_matrix_is_rejected() {
        let mut spec = LinearSystemSpec::four_node();
        spec.a[2] = array![[1.1, 0.0], [0.0, 0.2]];
        assert!(matches!(spec.build(), Err(RcaError::Config(_))));
    }

    #[test]
    fn linear_scm_matches_dense_recursion() {
        // noiseless: Y_t = M Y_{t-1} with M assembled from the blocks
        let spec = LinearSystemSpec::four_node();
        let scm = spec.build().unwrap().with_noise(NoiseModel::zero(4)).unwrap();
        let mut m = Array2::<f64>::zeros((8, 8));
        for j in 0..4 {
            m.slice_mut(ndarray::s![2 * j..2 * j + 2, 2 * j..2 * j + 2]).assign(&spec.a[j]);
        }
        for (&(k, j), b) in &spec.b {
            m.slice_mut(ndarray::s![2 * j..2 * j + 2, 2 * k..2 * k + 2]).assign(b);
        }
        let y0: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) / 4.0).collect();
        let traj = simulate(&scm, &y0, 10, 0).unwrap();
        let mut y = Array1::from(y0);
        for t in 1..10 {
            y = m.dot(&y);
            for c in 0..8 {
                assert!((traj.values()[[t, c]] - y[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_noise_zero_start_stays_zero() {
        let scm = make_linear_4node().with_noise(NoiseModel::zero(4)).unwrap();
        let traj = simulate(&scm, &[0.0; 8], 50, 3).unwrap();
        assert!(traj.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn noiseless_runs_stay_bounded() {
        let scm = make_linear_4node().with_noise(NoiseModel::zero(4)).unwrap();
        let traj = simulate(&scm, &[1.0; 8], 1000, 0).unwrap();
        let max = traj.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // the recursion oracle peaks below 5 for this start
        assert!(max < 5.0, "max {max}");
        let w: Vec<f64> = traj.values().outer_iter().map(|r| (r[0] * r[0] + r[1] * r[1]).sqrt()).collect();
        assert!(w.windows(2).all(|p| p[1] < p[0]));
    }

    #[test]
    fn fhn_rhs_values() {
        let (a, b) = fhn_rhs(0.0, 0.0);
        assert_eq!(a, 0.0);
        assert!((b - 0.0667).abs() < 1e-4);
        let (a, b) = fhn_rhs(1.0, -1.0);
        assert!((a + 1.0).abs() < 1e-12);
        assert!((b + 0.8667).abs() < 1e-4);
    }

    #[test]
    fn fhn_single_euler_step() {
        let spec = FhnSpec { noise_variance: 0.0, substeps: 1, y0: [0.0, 0.0], ..FhnSpec::default() };
        let traj = simulate(&make_fhn(&spec).unwrap(), &spec.y0, 2, 0).unwrap();
        assert_eq!(traj.values()[[1, 0]], 0.0);
        assert!((traj.values()[[1, 1]] - 0.0667).abs() < 1e-4);
    }

    #[test]
    fn fhn_limit_cycle_is_bounded() {
        let spec = FhnSpec { noise_variance: 0.0, ..FhnSpec::default() };
        let traj = simulate(&make_fhn(&spec).unwrap(), &spec.y0, 200, 0).unwrap();
        let x1 = traj.values().column(0).to_owned();
        assert!(x1.iter().all(|v| v.abs() < 3.0));
        // oscillates: x1 changes sign repeatedly
        let flips = x1.windows(2).into_iter().filter(|w| w[0].signum() != w[1].signum()).count();
        assert!(flips >= 4, "{flips} sign changes");
    }

    #[test]
    fn additive_injection_is_local() {
        let scm = make_linear_4node();
        let clean = simulate(&scm, &[0.0; 8], 20, 9).unwrap();
        let zero = RcaInjection::AdditiveConstant { node: 1, dim: 0, time: 6, c: 0.0 };
        assert_eq!(inject(&scm, &[0.0; 8], 20, 9, &zero).unwrap(), clean);
        let c = 500.0 * 2e-4f64.sqrt();
        let inj = RcaInjection::AdditiveConstant { node: 1, dim: 0, time: 6, c };
        let faulty = inject(&scm, &[0.0; 8], 20, 9, &inj).unwrap();
        for t in 0..6 {
            assert_eq!(faulty.values().row(t), clean.values().row(t));
        }
        let d = &faulty.values().row(6) - &clean.values().row(6);
        assert!((d[2] - c).abs() < 1e-12);
        for k in [0, 1, 3, 4, 5, 6, 7] {
            assert_eq!(d[k], 0.0);
        }
        // abduction sees exactly one changed residual
        let (n0, n1) = (abduct(&scm, &clean).unwrap(), abduct(&scm, &faulty).unwrap());
        let diff = &n1.residuals - &n0.residuals;
        for ((t, k), v) in diff.indexed_iter() {
            let expected = if (t, k) == (5, 2) { c } else { 0.0 };
            assert!((v - expected).abs() < 1e-12, "({t},{k}) {v}");
        }
    }

    #[test]
    fn fhn_injection_offset() {
        let spec = FhnSpec::default();
        let scm = make_fhn(&spec).unwrap();
        let c = 2.0 * 0.05;
        let inj = RcaInjection::AdditiveConstant { node: 0, dim: 0, time: 24, c };
        let clean = simulate(&scm, &spec.y0, 50, 4).unwrap();
        let faulty = inject(&scm, &spec.y0, 50, 4, &inj).unwrap();
        assert!((faulty.values()[[24, 0]] - clean.values()[[24, 0]] - 0.1).abs() < 1e-12);
        assert_eq!(faulty.values()[[24, 1]], clean.values()[[24, 1]]);
    }

    #[test]
    fn injection_bounds() {
        let scm = make_linear_4node();
        for inj in [
            RcaInjection::AdditiveConstant { node: 1, dim: 0, time: 20, c: 1.0 },
            RcaInjection::AdditiveConstant { node: 1, dim: 2, time: 3, c: 1.0 },
            RcaInjection::AdditiveConstant { node: 9, dim: 0, time: 3, c: 1.0 },
            RcaInjection::AdditiveConstant { node: 1, dim: 0, time: 0, c: 1.0 },
        ] {
            assert!(matches!(inject(&scm, &[0.0; 8], 20, 0, &inj), Err(RcaError::Bounds(_))));
        }
    }

    #[test]
    fn benchmark_graphs_have_a_unique_root() {
        let spec = BenchmarkSpec::default();
        for seed in 0..50 {
            let scm = benchmark_scm(&spec, seed).unwrap();
            assert_eq!(scm.graph().roots(), vec![0]);
            for j in 1..6 {
                let p = scm.graph().parents(j).unwrap();
                assert!((1..=2).contains(&p.len()) && p.iter().all(|&k| k < j));
            }
        }
    }

    #[test]
    fn benchmark_instances_are_deterministic() {
        let spec = BenchmarkSpec::default();
        let a = generate_benchmark_instance(&spec, BenchmarkKind::Parametric, 100, 5).unwrap();
        let b = generate_benchmark_instance(&spec, BenchmarkKind::Parametric, 100, 5).unwrap();
        assert_eq!(a.factum, b.factum);
        assert_eq!(a.normal, b.normal);
        assert_eq!(a.root_causes, b.root_causes);
        assert_eq!(a.root_causes[0].node, 0);
        assert!(a.evaluated_root_cause().node > 0);
    }

    fn regression_on_parents(inst: &BenchmarkInstance, j: usize, from: usize) -> Vec<f64> {
        // least squares of Y_t - 0.2 Y_{t-1} on the parents at t-1
        let g = inst.graph();
        let p = g.parents(j).unwrap().to_vec();
        let y = inst.factum.values();
        let mut xtx = Array2::<f64>::zeros((p.len(), p.len()));
        let mut xty = Array1::<f64>::zeros(p.len());
        for t in from.max(1)..y.nrows() {
            let target = y[[t, j]] - 0.2 * y[[t - 1, j]];
            for (a, &pa) in p.iter().enumerate() {
                xty[a] += y[[t - 1, pa]] * target;
                for (b, &pb) in p.iter().enumerate() {
                    xtx[[a, b]] += y[[t - 1, pa]] * y[[t - 1, pb]];
                }
            }
        }
        match p.len() {
            1 => vec![xty[0] / xtx[[0, 0]]],
            _ => {
                let det = xtx[[0, 0]] * xtx[[1, 1]] - xtx[[0, 1]] * xtx[[1, 0]];
                vec![
                    (xtx[[1, 1]] * xty[0] - xtx[[0, 1]] * xty[1]) / det,
                    (xtx[[0, 0]] * xty[1] - xtx[[1, 0]] * xty[0]) / det,
                ]
            }
        }
    }

    #[test]
    fn structural_break_zeroes_coupling() {
        let spec = BenchmarkSpec::default();
        let inst = generate_benchmark_instance(&spec, BenchmarkKind::Structural, 4000, 2).unwrap();
        let j = inst.evaluated_root_cause().node;
        for coef in regression_on_parents(&inst, j, 2000) {
            assert!(coef.abs() < 0.1, "coefficient {coef}");
        }
    }

    #[test]
    fn parametric_redraw_with_generation_seed_is_null() {
        let spec = BenchmarkSpec::default();
        let seed = 8;
        let scm = benchmark_scm(&spec, seed).unwrap();
        let inj = RcaInjection::ParametricChange { node: 3, onset: 10, seed, range: default_coef_range() };
        let clean = simulate(&scm, &[0.0; 6], 40, 1).unwrap();
        let same = inject(&scm, &[0.0; 6], 40, 1, &inj).unwrap();
        for (a, b) in same.values().iter().zip(clean.values().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
