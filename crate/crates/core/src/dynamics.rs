//! Dynamic SCM engine: simulation, interventions, noise abduction and
//! counterfactual sampling.
//!
//! Every node follows the residual step
//!
//! ```text
//! Y^j_t = Y^j_{t-1} + f^j(Y^{PA(j)}_{t-1}, Y^j_{t-1}) + N^j_t
//! ```
//!
//! Noise is added per step without any `sqrt(dt)` scaling. Row 0 of a
//! trajectory is the initial condition and is never intervened on.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{RcaError, Result};
use crate::graph::SummaryGraph;
use crate::models::Transition;
use crate::rng::{child_seed, rng_from_seed};
use crate::scoring::Classifier;

/// Observed or simulated time series, one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    values: Array2<f64>,
    dt: f64,
}

impl Trajectory {
    pub fn new(values: Array2<f64>, dt: f64) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(RcaError::Data(format!("trajectory needs at least 2 rows, got {}", values.nrows())));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(RcaError::Data(format!("step size must be positive, got {dt}")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (t, c) = (pos / values.ncols(), pos % values.ncols());
            return Err(RcaError::Data(format!("non-finite value at row {t}, column {c}")));
        }
        Ok(Self { values, dt })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    /// `T x dim(j)` block of node `j`.
    pub fn node_view(&self, graph: &SummaryGraph, j: usize) -> ArrayView2<'_, f64> {
        self.values.slice(s![.., graph.columns(j)])
    }

    pub(crate) fn check_layout(&self, graph: &SummaryGraph) -> Result<()> {
        if self.width() != graph.total_dim() {
            return Err(RcaError::shape(format!("{} columns", graph.total_dim()), format!("{} columns", self.width())));
        }
        Ok(())
    }

    /// Contiguous window `[start, end)` as a new trajectory.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if end > self.len() || start + 2 > end {
            return Err(RcaError::Bounds(format!("window {start}..{end} of {} rows", self.len())));
        }
        Self::new(self.values.slice(s![start..end, ..]).to_owned(), self.dt)
    }
}

/// Additive Gaussian noise of one node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeNoise {
    /// `N(0, variance * I)`. A zero variance makes the node deterministic.
    Isotropic(f64),
    /// `C z` with `z ~ N(0, I)`; `C` is `dim x dim`.
    Scaled(Array2<f64>),
}

impl NodeNoise {
    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            NodeNoise::Isotropic(v) if !(*v >= 0.0 && v.is_finite()) => {
                Err(RcaError::Config(format!("noise variance must be non-negative, got {v}")))
            }
            NodeNoise::Scaled(c) if c.dim() != (dim, dim) => {
                Err(RcaError::shape(format!("{dim}x{dim} noise scale"), format!("{:?}", c.dim())))
            }
            _ => Ok(()),
        }
    }

    /// Per-dimension marginal variance averaged over dimensions.
    pub fn mean_variance(&self) -> f64 {
        match self {
            NodeNoise::Isotropic(v) => *v,
            NodeNoise::Scaled(c) => c.iter().map(|v| v * v).sum::<f64>() / c.nrows() as f64,
        }
    }

    fn apply(&self, z: &[f64], out: &mut [f64]) {
        match self {
            NodeNoise::Isotropic(v) => {
                let sd = v.sqrt();
                out.iter_mut().zip(z).for_each(|(o, zi)| *o = sd * zi);
            }
            NodeNoise::Scaled(c) => {
                for (r, o) in out.iter_mut().enumerate() {
                    *o = (0..z.len()).map(|k| c[[r, k]] * z[k]).sum();
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub nodes: Vec<NodeNoise>,
}

impl NoiseModel {
    pub fn isotropic(variances: &[f64]) -> Self {
        Self { nodes: variances.iter().map(|&v| NodeNoise::Isotropic(v)).collect() }
    }

    pub fn zero(n_nodes: usize) -> Self {
        Self::isotropic(&vec![0.0; n_nodes])
    }
}

/// Transition plus noise per node over a summary graph.
#[derive(Clone)]
pub struct DynamicScm {
    graph: SummaryGraph,
    transitions: Vec<Arc<dyn Transition>>,
    noise: NoiseModel,
    dt: f64,
}

impl fmt::Debug for DynamicScm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicScm").field("nodes", &self.graph.len()).field("dt", &self.dt).finish_non_exhaustive()
    }
}

impl DynamicScm {
    pub fn new(graph: SummaryGraph, transitions: Vec<Arc<dyn Transition>>, noise: NoiseModel, dt: f64) -> Result<Self> {
        if transitions.len() != graph.len() || noise.nodes.len() != graph.len() {
            return Err(RcaError::shape(
                format!("{} transitions and noise terms", graph.len()),
                format!("{} / {}", transitions.len(), noise.nodes.len()),
            ));
        }
        for (j, (f, n)) in transitions.iter().zip(&noise.nodes).enumerate() {
            check_transition_shape(&graph, j, f.as_ref())?;
            n.validate(graph.dim(j))?;
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(RcaError::Config(format!("step size must be positive, got {dt}")));
        }
        Ok(Self { graph, transitions, noise, dt })
    }

    pub fn graph(&self) -> &SummaryGraph {
        &self.graph
    }

    pub fn transition(&self, j: usize) -> &Arc<dyn Transition> {
        &self.transitions[j]
    }

    pub fn transitions(&self) -> &[Arc<dyn Transition>] {
        &self.transitions
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self> {
        Self::new(self.graph.clone(), self.transitions.clone(), noise, self.dt)
    }

    /// Gather node `j`'s transition inputs from a batch of state rows.
    pub(crate) fn gather_inputs(&self, j: usize, rows: ArrayView2<'_, f64>) -> Array2<f64> {
        let cols = self.graph.input_columns(j);
        rows.select(Axis(1), &cols)
    }
}

fn check_transition_shape(graph: &SummaryGraph, j: usize, f: &dyn Transition) -> Result<()> {
    if f.in_dim() != graph.input_dim(j) || f.out_dim() != graph.dim(j) {
        return Err(RcaError::shape(
            format!("transition {}->{} for node '{}'", graph.input_dim(j), graph.dim(j), graph.name(j)),
            format!("{}->{}", f.in_dim(), f.out_dim()),
        ));
    }
    Ok(())
}

/// Soft noise intervention and/or structural replacement at `(node, time)`.
#[derive(Clone)]
pub enum Intervention {
    NoiseReplace { node: usize, time: usize, variance: f64 },
    StructReplace { node: usize, time: usize, transition: Arc<dyn Transition> },
    Both { node: usize, time: usize, variance: f64, transition: Arc<dyn Transition> },
}

impl fmt::Debug for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Intervention::NoiseReplace { node, time, variance } => {
                write!(f, "do(N[{node},{time}] ~ N(0, {variance}))")
            }
            Intervention::StructReplace { node, time, .. } => write!(f, "do(S[{node},{time}])"),
            Intervention::Both { node, time, variance, .. } => {
                write!(f, "do(S[{node},{time}], N ~ N(0, {variance}))")
            }
        }
    }
}

impl Intervention {
    pub fn node(&self) -> usize {
        match self {
            Intervention::NoiseReplace { node, .. }
            | Intervention::StructReplace { node, .. }
            | Intervention::Both { node, .. } => *node,
        }
    }

    pub fn time(&self) -> usize {
        match self {
            Intervention::NoiseReplace { time, .. }
            | Intervention::StructReplace { time, .. }
            | Intervention::Both { time, .. } => *time,
        }
    }

    fn variance(&self) -> Option<f64> {
        match self {
            Intervention::NoiseReplace { variance, .. } | Intervention::Both { variance, .. } => Some(*variance),
            Intervention::StructReplace { .. } => None,
        }
    }

    fn replacement(&self) -> Option<&Arc<dyn Transition>> {
        match self {
            Intervention::StructReplace { transition, .. } | Intervention::Both { transition, .. } => Some(transition),
            Intervention::NoiseReplace { .. } => None,
        }
    }
}

#[derive(Clone)]
struct Action {
    variance: Option<f64>,
    transition: Option<Arc<dyn Transition>>,
}

/// Validated lookup of interventions by `(time, node)`.
struct ActionTable {
    actions: BTreeMap<(usize, usize), Action>,
}

impl ActionTable {
    fn build(scm: &DynamicScm, len: usize, interventions: &[Intervention]) -> Result<Self> {
        let mut actions = BTreeMap::new();
        for iv in interventions {
            let (node, time) = (iv.node(), iv.time());
            if node >= scm.graph.len() {
                return Err(RcaError::Bounds(format!("intervention on node #{node}")));
            }
            if time == 0 || time >= len {
                return Err(RcaError::Bounds(format!("intervention time {time} outside [1, {}]", len - 1)));
            }
            if let Some(v) = iv.variance() {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(RcaError::Config(format!("intervention variance {v}")));
                }
            }
            if let Some(f) = iv.replacement() {
                check_transition_shape(&scm.graph, node, f.as_ref())?;
            }
            let action = Action { variance: iv.variance(), transition: iv.replacement().cloned() };
            if actions.insert((time, node), action).is_some() {
                return Err(RcaError::Config(format!("conflicting interventions at node #{node}, t = {time}")));
            }
        }
        Ok(Self { actions })
    }

    fn get(&self, time: usize, node: usize) -> Option<&Action> {
        self.actions.get(&(time, node))
    }

    fn first_time(&self) -> Option<usize> {
        self.actions.keys().next().map(|&(t, _)| t)
    }
}

/// Forward simulation with fresh noise. Deterministic given `seed`.
pub fn simulate(scm: &DynamicScm, y0: &[f64], len: usize, seed: u64) -> Result<Trajectory> {
    simulate_interventional(scm, y0, len, seed, &[])
}

/// Simulate the intervened SCM `M_Xi`. Standard-normal draws are taken in
/// the same order as in `simulate`, so runs with equal seeds share their
/// noise everywhere except at intervened noise sites (common random numbers).
pub fn simulate_interventional(
    scm: &DynamicScm,
    y0: &[f64],
    len: usize,
    seed: u64,
    interventions: &[Intervention],
) -> Result<Trajectory> {
    let g = &scm.graph;
    if y0.len() != g.total_dim() {
        return Err(RcaError::shape(format!("initial state of width {}", g.total_dim()), y0.len()));
    }
    if len < 2 {
        return Err(RcaError::Config(format!("trajectory length must be at least 2, got {len}")));
    }
    let table = ActionTable::build(scm, len, interventions)?;
    let mut rng = rng_from_seed(seed);
    let mut values = Array2::<f64>::zeros((len, g.total_dim()));
    values.row_mut(0).assign(&Array1::from(y0.to_vec()));
    let mut z = Vec::new();
    let mut eps = Vec::new();

    for t in 1..len {
        let prev = values.slice(s![t - 1..t, ..]).to_owned();
        for j in g.topological_schedule() {
            let dim = g.dim(j);
            z.clear();
            z.extend((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            eps.resize(dim, 0.0);
            let action = table.get(t, j);
            match action.and_then(|a| a.variance) {
                Some(v) => NodeNoise::Isotropic(v).apply(&z, &mut eps),
                None => scm.noise.nodes[j].apply(&z, &mut eps),
            }
            let f = action.and_then(|a| a.transition.as_ref()).unwrap_or(&scm.transitions[j]);
            let inc = f.forward_batch(scm.gather_inputs(j, prev.view()).view());
            let off = g.offset(j);
            for k in 0..dim {
                let v = prev[[0, off + k]] + inc[[0, k]] + eps[k];
                if !v.is_finite() {
                    return Err(RcaError::Divergence { node: g.name(j).to_string(), time: t });
                }
                values[[t, off + k]] = v;
            }
        }
    }
    Trajectory::new(values, scm.dt)
}

/// Exogenous noise reproducing a trajectory exactly: row `t - 1` holds
/// `N_t = Y_t - Y_{t-1} - f(Y_{t-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbductedNoise {
    pub residuals: Array2<f64>,
}

impl AbductedNoise {
    /// Residual block of node `j` at step `t >= 1`.
    pub fn at(&self, graph: &SummaryGraph, j: usize, t: usize) -> ndarray::ArrayView1<'_, f64> {
        self.residuals.slice(s![t - 1, graph.columns(j)])
    }
}

pub fn abduct(scm: &DynamicScm, factum: &Trajectory) -> Result<AbductedNoise> {
    factum.check_layout(&scm.graph)?;
    let y = factum.values();
    let len = y.nrows();
    let prev = y.slice(s![..len - 1, ..]);
    let next = y.slice(s![1.., ..]);
    // same operation order as the replay, `(prev + f) + r`, so that a
    // replay without interventions reproduces the factum to the last bit
    // whenever `next - (prev + f)` is exact
    let mut residuals = next.to_owned();
    for j in 0..scm.graph.len() {
        let inc = scm.transitions[j].forward_batch(scm.gather_inputs(j, prev).view());
        let cols = scm.graph.columns(j);
        let predicted = &prev.slice(s![.., cols.clone()]) + &inc;
        let mut block = residuals.slice_mut(s![.., cols]);
        block -= &predicted;
    }
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(RcaError::Data("abducted noise is not finite".into()));
    }
    Ok(AbductedNoise { residuals })
}

/// Counterfactual trajectories drawn from one intervened, abducted SCM.
#[derive(Debug, Clone)]
pub struct CounterfactualBatch {
    /// `n_samples x T x D`.
    pub values: Array3<f64>,
    pub diverged: Vec<bool>,
    pub dt: f64,
}

impl CounterfactualBatch {
    pub fn n_samples(&self) -> usize {
        self.diverged.len()
    }

    pub fn n_diverged(&self) -> usize {
        self.diverged.iter().filter(|d| **d).count()
    }

    /// Non-diverged samples as trajectories.
    pub fn trajectories(&self) -> Vec<Trajectory> {
        self.values
            .outer_iter()
            .zip(&self.diverged)
            .filter(|(_, d)| !**d)
            .filter_map(|(v, _)| Trajectory::new(v.to_owned(), self.dt).ok())
            .collect()
    }
}

/// Abduction-action-prediction: replay the abducted residuals everywhere
/// except at intervened sites. A noise intervention draws a fresh
/// `N(0, variance I)`; a structural replacement swaps the increment function
/// while the active noise rule still applies. Rows before the earliest
/// intervention equal the factum and are copied; with no interventions the
/// whole trajectory is replayed from row 1.
pub fn counterfactual_sample(
    scm: &DynamicScm,
    abducted: &AbductedNoise,
    factum: &Trajectory,
    interventions: &[Intervention],
    n_samples: usize,
    seed: u64,
) -> Result<CounterfactualBatch> {
    let g = &scm.graph;
    factum.check_layout(g)?;
    let len = factum.len();
    if abducted.residuals.dim() != (len - 1, g.total_dim()) {
        return Err(RcaError::shape(
            format!("{:?} residuals", (len - 1, g.total_dim())),
            format!("{:?}", abducted.residuals.dim()),
        ));
    }
    if n_samples == 0 {
        return Err(RcaError::Config("n_samples must be at least 1".into()));
    }
    let table = ActionTable::build(scm, len, interventions)?;
    let start = table.first_time().unwrap_or(1);
    let mut rng = rng_from_seed(seed);

    let width = g.total_dim();
    let mut values = Array3::<f64>::zeros((n_samples, len, width));
    for mut sample in values.outer_iter_mut() {
        sample.slice_mut(s![..start, ..]).assign(&factum.values().slice(s![..start, ..]));
    }
    for t in start..len {
        let prev = values.slice(s![.., t - 1, ..]).to_owned();
        for j in g.topological_schedule() {
            let action = table.get(t, j);
            let f = action.and_then(|a| a.transition.as_ref()).unwrap_or(&scm.transitions[j]);
            let inc = f.forward_batch(scm.gather_inputs(j, prev.view()).view());
            let noise = node_noise(abducted, g, j, t, action, n_samples, &mut rng);
            let cols = g.columns(j);
            let mut next = values.slice_mut(s![.., t, cols.clone()]);
            next.assign(&prev.slice(s![.., cols]));
            next += &inc;
            next += &noise;
        }
    }
    let diverged = values.outer_iter().map(|sample| sample.iter().any(|v| !v.is_finite())).collect();
    Ok(CounterfactualBatch { values, diverged, dt: factum.dt() })
}

fn node_noise(
    abducted: &AbductedNoise,
    g: &SummaryGraph,
    j: usize,
    t: usize,
    action: Option<&Action>,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Array2<f64> {
    let dim = g.dim(j);
    match action.and_then(|a| a.variance) {
        Some(v) => {
            let sd = v.sqrt();
            Array2::from_shape_simple_fn((n, dim), || sd * rng.sample::<f64, _>(StandardNormal))
        }
        None => abducted.at(g, j, t).broadcast((n, dim)).expect("broadcast residual row").to_owned(),
    }
}

/// Monte Carlo estimate of `E[fault | M_Xi] - E[fault | M]` with common
/// random numbers, where fault is `1 - normality` for bounded classifiers
/// and `-normality` otherwise. Diverged simulations count as faulty.
pub fn treatment_effect(
    scm: &DynamicScm,
    y0: &[f64],
    len: usize,
    interventions: &[Intervention],
    phi: &Classifier,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n == 0 {
        return Err(RcaError::Config("n must be at least 1".into()));
    }
    let fault = |traj: Result<Trajectory>| -> Result<f64> {
        match traj {
            Ok(t) => {
                let v = phi.normality(&t)?;
                Ok(if phi.is_bounded() { 1.0 - v } else { -v })
            }
            Err(RcaError::Divergence { .. }) if phi.is_bounded() => Ok(1.0),
            Err(e) => Err(e),
        }
    };
    let mut total = 0.0;
    for i in 0..n {
        let s = child_seed(seed, i as u64);
        let base = fault(simulate(scm, y0, len, s))?;
        let treated = fault(simulate_interventional(scm, y0, len, s, interventions))?;
        total += treated - base;
    }
    Ok(total / n as f64)
}

/// Transition plus a constant offset; used to express additive root causes
/// as structural replacements.
#[derive(Debug)]
pub struct OffsetTransition {
    pub base: Arc<dyn Transition>,
    pub offset: Vec<f64>,
}

impl Transition for OffsetTransition {
    fn in_dim(&self) -> usize {
        self.base.in_dim()
    }

    fn out_dim(&self) -> usize {
        self.base.out_dim()
    }

    fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = self.base.forward_batch(inputs);
        out += &ArrayView2::from_shape((1, self.offset.len()), &self.offset).expect("offset row");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelKind, TransitionFn};
    use proptest::prelude::*;
    use rand::Rng;

    fn chain_graph(n: usize, dim: usize) -> SummaryGraph {
        let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
        let nodes: Vec<(&str, usize)> = names.iter().map(|s| (s.as_str(), dim)).collect();
        let edges: Vec<(&str, &str)> = (1..n).map(|i| (names[i - 1].as_str(), names[i].as_str())).collect();
        SummaryGraph::from_names(&nodes, &edges).unwrap()
    }

    fn random_scm(g: SummaryGraph, kind: ModelKind, seed: u64, var: f64) -> DynamicScm {
        let transitions = (0..g.len())
            .map(|j| {
                let mut f = TransitionFn::init(kind, g.input_dim(j), g.dim(j), seed + j as u64);
                // keep linear maps contractive so long runs stay finite
                if kind == ModelKind::Linear {
                    let w = f.layers()[0].w.mapv(|v| 0.3 * v);
                    f.layers_mut()[0].w = w;
                }
                Arc::new(f) as Arc<dyn Transition>
            })
            .collect();
        let n = g.len();
        DynamicScm::new(g, transitions, NoiseModel::isotropic(&vec![var; n]), 1.0).unwrap()
    }

    #[test]
    fn zero_map_zero_trajectory_has_zero_residuals() {
        let g = chain_graph(2, 2);
        let zero: Vec<Arc<dyn Transition>> = (0..2)
            .map(|j| Arc::new(TransitionFn::zeros(ModelKind::Linear, g.input_dim(j), 2)) as Arc<dyn Transition>)
            .collect();
        let scm = DynamicScm::new(g, zero, NoiseModel::zero(2), 1.0).unwrap();
        let traj = simulate(&scm, &[0.0; 4], 6, 1).unwrap();
        assert!(traj.values().iter().all(|v| *v == 0.0));
        let noise = abduct(&scm, &traj).unwrap();
        assert!(noise.residuals.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn abduction_recovers_simulated_noise() {
        let g = chain_graph(3, 2);
        let scm = random_scm(g.clone(), ModelKind::ResidualMlp, 4, 0.01);
        let traj = simulate(&scm, &[0.1; 6], 15, 77).unwrap();
        let noise = abduct(&scm, &traj).unwrap();
        // Redraw the same standard normals directly from the seed.
        let mut rng = rng_from_seed(77);
        for t in 1..15 {
            for j in 0..3 {
                for k in 0..2 {
                    let z: f64 = rng.sample(StandardNormal);
                    let want = 0.1 * z;
                    assert!((noise.at(&g, j, t)[k] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_intervention_set_reproduces_factum() {
        let scm = random_scm(chain_graph(3, 1), ModelKind::ResidualMlp, 1, 0.05);
        let traj = simulate(&scm, &[0.0; 3], 12, 5).unwrap();
        let noise = abduct(&scm, &traj).unwrap();
        let batch = counterfactual_sample(&scm, &noise, &traj, &[], 4, 0).unwrap();
        for sample in batch.values.outer_iter() {
            for (a, b) in sample.iter().zip(traj.values().iter()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_variance_noise_intervention_zeroes_one_residual() {
        let g = chain_graph(2, 1);
        let scm = random_scm(g.clone(), ModelKind::Linear, 2, 0.05);
        let traj = simulate(&scm, &[0.5, -0.5], 10, 3).unwrap();
        let noise = abduct(&scm, &traj).unwrap();
        let iv = Intervention::Both { node: 0, time: 4, variance: 0.0, transition: scm.transition(0).clone() };
        let batch = counterfactual_sample(&scm, &noise, &traj, &[iv], 2, 9).unwrap();
        let cf = Trajectory::new(batch.values.index_axis(Axis(0), 0).to_owned(), 1.0).unwrap();
        let cf_noise = abduct(&scm, &cf).unwrap();
        let mut expected = noise.residuals.clone();
        expected[[3, 0]] = 0.0;
        for (a, b) in cf_noise.residuals.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        // Rows before the intervention are untouched.
        for t in 0..4 {
            assert_eq!(cf.values().row(t), traj.values().row(t));
        }
    }

    #[test]
    fn intervention_bounds_are_checked() {
        let scm = random_scm(chain_graph(2, 1), ModelKind::Linear, 2, 0.05);
        let traj = simulate(&scm, &[0.0, 0.0], 5, 3).unwrap();
        let noise = abduct(&scm, &traj).unwrap();
        for (node, time) in [(0, 0), (0, 5), (7, 2)] {
            let iv = Intervention::NoiseReplace { node, time, variance: 1.0 };
            assert!(matches!(counterfactual_sample(&scm, &noise, &traj, &[iv], 1, 0), Err(RcaError::Bounds(_))));
        }
        let dup = vec![
            Intervention::NoiseReplace { node: 0, time: 2, variance: 1.0 },
            Intervention::NoiseReplace { node: 0, time: 2, variance: 2.0 },
        ];
        assert!(counterfactual_sample(&scm, &noise, &traj, &dup, 1, 0).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let scm = random_scm(chain_graph(2, 1), ModelKind::Linear, 2, 0.05);
        let wrong = Trajectory::new(Array2::zeros((5, 3)), 1.0).unwrap();
        assert!(matches!(abduct(&scm, &wrong), Err(RcaError::Shape { .. })));
        assert!(simulate(&scm, &[0.0], 5, 0).is_err());
    }

    #[test]
    fn divergence_names_node_and_time() {
        let g = chain_graph(1, 1);
        let f = TransitionFn::linear(ndarray::array![[1e200]], ndarray::array![0.0]).unwrap();
        let scm = DynamicScm::new(g, vec![Arc::new(f)], NoiseModel::zero(1), 1.0).unwrap();
        match simulate(&scm, &[1.0], 10, 0) {
            Err(RcaError::Divergence { node, time }) => {
                assert_eq!(node, "n0");
                assert_eq!(time, 2);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn diverged_counterfactuals_are_flagged() {
        let g = chain_graph(1, 1);
        let f = TransitionFn::linear(ndarray::array![[0.0]], ndarray::array![0.0]).unwrap();
        let scm = DynamicScm::new(g, vec![Arc::new(f)], NoiseModel::zero(1), 1.0).unwrap();
        let traj = simulate(&scm, &[2.0], 6, 0).unwrap();
        let noise = abduct(&scm, &traj).unwrap();
        let boom = TransitionFn::linear(ndarray::array![[f64::MAX]], ndarray::array![0.0]).unwrap();
        let iv = Intervention::StructReplace { node: 0, time: 2, transition: Arc::new(boom) };
        let batch = counterfactual_sample(&scm, &noise, &traj, &[iv], 3, 0).unwrap();
        assert_eq!(batch.n_diverged(), 3);
        assert!(batch.trajectories().is_empty());
    }

    #[test]
    fn locality_of_residual_edits() {
        // a -> b, c isolated: editing a's residual at t=4 changes a and b
        // from t=4 on, never c, never earlier rows.
        let g = SummaryGraph::from_names(&[("a", 1), ("b", 1), ("c", 1)], &[("a", "b")]).unwrap();
        let scm = random_scm(g.clone(), ModelKind::ResidualMlp, 8, 0.05);
        let traj = simulate(&scm, &[0.0; 3], 10, 1).unwrap();
        let noise = abduct(&scm, &traj).unwrap();
        let iv = Intervention::NoiseReplace { node: 0, time: 4, variance: 1.0 };
        let batch = counterfactual_sample(&scm, &noise, &traj, &[iv], 1, 2).unwrap();
        let cf = batch.values.index_axis(Axis(0), 0);
        let y = traj.values();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        for t in 0..10 {
            if t < 4 {
                assert_eq!(cf.row(t), y.row(t));
            }
            assert!(close(cf[[t, 2]], y[[t, 2]]));
        }
        assert!(!close(cf[[4, 0]], y[[4, 0]]));
        assert!(close(cf[[4, 1]], y[[4, 1]]));
        assert!(!close(cf[[5, 1]], y[[5, 1]]));
    }

    #[test]
    fn offset_transition_adds_constant() {
        let base: Arc<dyn Transition> = Arc::new(TransitionFn::linear(Array2::eye(2), Array1::zeros(2)).unwrap());
        let f = OffsetTransition { base, offset: vec![1.5, 0.0] };
        assert_eq!(f.forward(&[1.0, 2.0]), vec![2.5, 2.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_and_determinism(seed in any::<u64>(), n in 1usize..4, dim in 1usize..3, mlp in any::<bool>()) {
            let kind = if mlp { ModelKind::ResidualMlp } else { ModelKind::Linear };
            let scm = random_scm(chain_graph(n, dim), kind, seed % 1000, 0.01);
            let y0 = vec![0.2; n * dim];
            let traj = simulate(&scm, &y0, 20, seed).unwrap();
            prop_assert_eq!(&traj, &simulate(&scm, &y0, 20, seed).unwrap());
            let noise = abduct(&scm, &traj).unwrap();
            let batch = counterfactual_sample(&scm, &noise, &traj, &[], 1, seed).unwrap();
            for (a, b) in batch.values.iter().zip(traj.values().iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
