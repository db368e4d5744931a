//! Training loop, validation-based noise variance and model persistence.

use std::cmp::Ordering;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::transition::{Dense, ModelKind, Transition, TransitionFn};
use crate::dynamics::Trajectory;
use crate::error::{RcaError, Result};
use crate::graph::SummaryGraph;
use crate::rng::{keyed_seed, rng_from_seed};

/// Smallest noise variance handed out; degenerate data is floored here.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub splits: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Minibatch size; `None` takes one full-batch step per epoch.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl TrainConfig {
    pub const DEFAULT_BATCH: usize = 128;

    fn preset(lr: f64, epochs: usize, splits: usize) -> Self {
        Self { lr, epochs, splits, seed: 0, optimizer: Optimizer::adam(), batch_size: Some(Self::DEFAULT_BATCH) }
    }

    pub fn lin_system() -> Self {
        Self::preset(0.01, 50, 4)
    }

    pub fn fhn() -> Self {
        Self::preset(0.01, 100, 4)
    }

    pub fn benchmark() -> Self {
        Self::preset(0.1, 200, 6)
    }

    pub fn river() -> Self {
        Self::preset(0.01, 50, 4)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "lin" | "lin-system" | "linear4" => Ok(Self::lin_system()),
            "fhn" => Ok(Self::fhn()),
            "benchmark" => Ok(Self::benchmark()),
            "river" => Ok(Self::river()),
            other => Err(RcaError::Config(format!("unknown preset '{other}'"))),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(RcaError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.splits < 2 {
            return Err(RcaError::Config(format!("splits must be at least 2, got {}", self.splits)));
        }
        if self.batch_size == Some(0) {
            return Err(RcaError::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Fit of a single node.
#[derive(Debug, Clone)]
pub struct NodeFit {
    pub transition: TransitionFn,
    pub sigma_val_sq: f64,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub transitions: Vec<TransitionFn>,
    pub sigma_val_sq: Vec<f64>,
    /// Per node, mean training loss of every epoch of the final refit.
    pub train_loss_curve: Vec<Vec<f64>>,
}

impl FitResult {
    fn from_nodes(nodes: Vec<NodeFit>) -> Self {
        let mut out = Self { transitions: vec![], sigma_val_sq: vec![], train_loss_curve: vec![] };
        for n in nodes {
            out.transitions.push(n.transition);
            out.sigma_val_sq.push(n.sigma_val_sq);
            out.train_loss_curve.push(n.loss_curve);
        }
        out
    }

    pub fn to_json(&self, graph: &SummaryGraph) -> Result<String> {
        let models = self
            .transitions
            .iter()
            .zip(&self.sigma_val_sq)
            .enumerate()
            .map(|(j, (f, s))| ModelRecord::from_fit(graph.name(j), f, *s))
            .collect();
        Ok(serde_json::to_string_pretty(&ModelFile { models })?)
    }

    /// Reads models back, matching them to graph nodes by name.
    pub fn from_json(text: &str, graph: &SummaryGraph) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        let mut slots: Vec<Option<NodeFit>> = vec![None; graph.len()];
        for rec in file.models {
            let j = graph.index_of(&rec.node)?;
            let f = rec.to_transition()?;
            if f.in_dim() != graph.input_dim(j) || f.out_dim() != graph.dim(j) {
                return Err(RcaError::shape(
                    format!("{}->{} for '{}'", graph.input_dim(j), graph.dim(j), rec.node),
                    format!("{}->{}", f.in_dim(), f.out_dim()),
                ));
            }
            slots[j] = Some(NodeFit { transition: f, sigma_val_sq: rec.sigma_val_sq, loss_curve: vec![] });
        }
        let nodes = slots
            .into_iter()
            .enumerate()
            .map(|(j, s)| s.ok_or_else(|| RcaError::Data(format!("no model for node '{}'", graph.name(j)))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_nodes(nodes))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    models: Vec<ModelRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelRecord {
    node: String,
    variant: ModelKind,
    in_dim: usize,
    out_dim: usize,
    layers: Vec<LayerRecord>,
    sigma_val_sq: f64,
}

impl ModelRecord {
    fn from_fit(node: &str, f: &TransitionFn, sigma_val_sq: f64) -> Self {
        let layers = f
            .layers()
            .iter()
            .map(|l| LayerRecord { w: l.w.outer_iter().map(|r| r.to_vec()).collect(), b: l.b.to_vec() })
            .collect();
        Self {
            node: node.to_string(),
            variant: f.kind(),
            in_dim: f.in_dim(),
            out_dim: f.out_dim(),
            layers,
            sigma_val_sq,
        }
    }

    fn to_transition(&self) -> Result<TransitionFn> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let cols = l.w.first().map_or(0, Vec::len);
                if l.w.iter().any(|r| r.len() != cols) {
                    return Err(RcaError::Data(format!("ragged weight matrix for '{}'", self.node)));
                }
                let flat: Vec<f64> = l.w.iter().flatten().copied().collect();
                let w = Array2::from_shape_vec((l.w.len(), cols), flat).map_err(|e| RcaError::Data(e.to_string()))?;
                Ok(Dense { w, b: Array1::from(l.b.clone()) })
            })
            .collect::<Result<Vec<_>>>()?;
        let f = TransitionFn::from_layers(self.variant, layers)?;
        if f.in_dim() != self.in_dim || f.out_dim() != self.out_dim {
            return Err(RcaError::shape(
                format!("{}->{}", self.in_dim, self.out_dim),
                format!("{}->{}", f.in_dim(), f.out_dim()),
            ));
        }
        if self.sigma_val_sq.is_nan() || self.sigma_val_sq <= 0.0 {
            return Err(RcaError::Data(format!("sigma_val_sq of '{}' must be positive", self.node)));
        }
        Ok(f)
    }
}

/// Supervised pairs of one node: inputs `parents_{t-1} ++ self_{t-1}`,
/// targets `self_t - self_{t-1}`, stacked over all trajectories.
pub fn training_pairs(data: &[&Trajectory], graph: &SummaryGraph, j: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let in_cols = graph.input_columns(j);
    let cols = graph.columns(j);
    let mut xs = Vec::with_capacity(data.len());
    let mut ys = Vec::with_capacity(data.len());
    for traj in data {
        traj.check_layout(graph)?;
        let v = traj.values();
        let len = v.nrows();
        xs.push(v.slice(s![..len - 1, ..]).select(Axis(1), &in_cols));
        ys.push(&v.slice(s![1.., cols.clone()]) - &v.slice(s![..len - 1, cols.clone()]));
    }
    if xs.is_empty() {
        return Ok((Array2::zeros((0, in_cols.len())), Array2::zeros((0, graph.dim(j)))));
    }
    let xv: Vec<_> = xs.iter().map(|a| a.view()).collect();
    let yv: Vec<_> = ys.iter().map(|a| a.view()).collect();
    Ok((concatenate(Axis(0), &xv).expect("same width"), concatenate(Axis(0), &yv).expect("same width")))
}

/// Canonical data order so results do not depend on list order.
fn canonical_order(data: &[Trajectory]) -> Vec<&Trajectory> {
    let mut refs: Vec<&Trajectory> = data.iter().collect();
    refs.sort_by(|a, b| {
        a.len().cmp(&b.len()).then_with(|| {
            a.values()
                .iter()
                .zip(b.values().iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    refs
}

/// Train one transition on fixed pairs. Returns the model and the mean
/// minibatch loss of every epoch.
pub fn train_transition(
    kind: ModelKind,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(TransitionFn, Vec<f64>)> {
    let mut f = TransitionFn::init(kind, inputs.ncols(), targets.ncols(), seed);
    let n = inputs.nrows();
    if cfg.epochs == 0 || n == 0 {
        return Ok((f, vec![]));
    }
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut rng = rng_from_seed(keyed_seed(seed, &[0x5eed]));
    let mut order: Vec<usize> = (0..n).collect();
    let mut state = OptState::new(&f);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let (grads, loss) = if chunk.len() == n {
                f.gradient(inputs, targets)
            } else {
                let xb = inputs.select(Axis(0), chunk);
                let yb = targets.select(Axis(0), chunk);
                f.gradient(xb.view(), yb.view())
            };
            epoch_loss += loss * chunk.len() as f64;
            state.step(&mut f, &grads, cfg);
        }
        let epoch_loss = epoch_loss / n as f64;
        if !epoch_loss.is_finite() || !f.is_finite() {
            return Err(RcaError::Divergence { node: format!("training ({})", kind.label()), time: epoch });
        }
        curve.push(epoch_loss);
    }
    Ok((f, curve))
}

struct OptState {
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: i32,
}

impl OptState {
    fn new(f: &TransitionFn) -> Self {
        let zeros: Vec<Dense> = f.layers().iter().map(|l| Dense::zeros(l.out_dim(), l.in_dim())).collect();
        Self { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, f: &mut TransitionFn, grads: &[Dense], cfg: &TrainConfig) {
        self.t += 1;
        let lr = cfg.lr;
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (layer, g) in f.layers_mut().iter_mut().zip(grads) {
                    layer.w.scaled_add(-lr, &g.w);
                    layer.b.scaled_add(-lr, &g.b);
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                };
                for (((layer, g), m), v) in f.layers_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    Zip::from(&mut layer.w)
                        .and(&mut m.w)
                        .and(&mut v.w)
                        .and(&g.w)
                        .for_each(|p, m, v, &g| update(p, m, v, g));
                    Zip::from(&mut layer.b)
                        .and(&mut m.b)
                        .and(&mut v.b)
                        .and(&g.b)
                        .for_each(|p, m, v, &g| update(p, m, v, g));
                }
            }
        }
    }
}

/// Pooled held-out MSE over `splits` contiguous folds.
fn validation_variance(kind: ModelKind, x: &Array2<f64>, y: &Array2<f64>, cfg: &TrainConfig, seed: u64) -> Result<f64> {
    let n = x.nrows();
    let k = cfg.splits;
    let mut sse = 0.0;
    let mut count = 0usize;
    for fold in 0..k {
        let (lo, hi) = (fold * n / k, (fold + 1) * n / k);
        let keep: Vec<usize> = (0..lo).chain(hi..n).collect();
        let (f, _) = train_transition(
            kind,
            x.select(Axis(0), &keep).view(),
            y.select(Axis(0), &keep).view(),
            cfg,
            keyed_seed(seed, &[1 + fold as u64]),
        )?;
        let held_x = x.slice(s![lo..hi, ..]);
        let held_y = y.slice(s![lo..hi, ..]);
        sse += f.mse(held_x, held_y) * held_y.len() as f64;
        count += held_y.len();
    }
    Ok(sse / count as f64)
}

fn fit_node_ordered(
    data: &[&Trajectory],
    graph: &SummaryGraph,
    j: usize,
    kind: ModelKind,
    cfg: &TrainConfig,
    estimate_sigma: bool,
) -> Result<NodeFit> {
    cfg.validate()?;
    let (x, y) = training_pairs(data, graph, j)?;
    if x.nrows() < cfg.splits {
        return Err(RcaError::Data(format!(
            "node '{}' has {} training pairs, need at least {}",
            graph.name(j),
            x.nrows(),
            cfg.splits
        )));
    }
    let seed = keyed_seed(cfg.seed, &[j as u64]);
    let (transition, loss_curve) =
        train_transition(kind, x.view(), y.view(), cfg, seed).map_err(|e| rename_divergence(e, graph.name(j)))?;
    let sigma_val_sq = if estimate_sigma {
        let raw = validation_variance(kind, &x, &y, cfg, seed).map_err(|e| rename_divergence(e, graph.name(j)))?;
        if raw < SIGMA_FLOOR {
            log::warn!("node '{}': validation variance {raw:e} floored at {SIGMA_FLOOR:e}", graph.name(j));
            SIGMA_FLOOR
        } else {
            raw
        }
    } else {
        f64::NAN
    };
    Ok(NodeFit { transition, sigma_val_sq, loss_curve })
}

fn rename_divergence(e: RcaError, node: &str) -> RcaError {
    match e {
        RcaError::Divergence { time, .. } => RcaError::Divergence { node: format!("training '{node}'"), time },
        other => other,
    }
}

/// Fit node `j`: final model on all pairs, `sigma_val_sq` from k-fold
/// held-out error.
pub fn fit_node(
    data: &[Trajectory],
    graph: &SummaryGraph,
    j: usize,
    kind: ModelKind,
    cfg: &TrainConfig,
) -> Result<NodeFit> {
    fit_node_ordered(&canonical_order(data), graph, j, kind, cfg, true)
}

/// Fit every node in parallel.
pub fn fit(data: &[Trajectory], graph: &SummaryGraph, kind: ModelKind, cfg: &TrainConfig) -> Result<FitResult> {
    fit_all(&canonical_order(data), graph, kind, cfg, true)
}

/// Same as [`fit`] with the factum appended as one more trajectory.
pub fn fit_fm(
    normal: &[Trajectory],
    factum: &Trajectory,
    graph: &SummaryGraph,
    kind: ModelKind,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    fit_fm_inner(normal, factum, graph, kind, cfg, true)
}

/// Transitions of the normal-plus-factum model only. The noise variance of
/// this model is never used for interventions, so the folds are skipped and
/// `sigma_val_sq` is NaN.
pub fn fit_fm_transitions(
    normal: &[Trajectory],
    factum: &Trajectory,
    graph: &SummaryGraph,
    kind: ModelKind,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    fit_fm_inner(normal, factum, graph, kind, cfg, false)
}

fn fit_fm_inner(
    normal: &[Trajectory],
    factum: &Trajectory,
    graph: &SummaryGraph,
    kind: ModelKind,
    cfg: &TrainConfig,
    estimate_sigma: bool,
) -> Result<FitResult> {
    let mut refs = canonical_order(normal);
    refs.push(factum);
    fit_all(&refs, graph, kind, cfg, estimate_sigma)
}

fn fit_all(
    data: &[&Trajectory],
    graph: &SummaryGraph,
    kind: ModelKind,
    cfg: &TrainConfig,
    estimate_sigma: bool,
) -> Result<FitResult> {
    let nodes = (0..graph.len())
        .into_par_iter()
        .map(|j| fit_node_ordered(data, graph, j, kind, cfg, estimate_sigma))
        .collect::<Result<Vec<_>>>()?;
    Ok(FitResult::from_nodes(nodes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, DynamicScm, NoiseModel};
    use ndarray::array;
    use std::sync::Arc;

    fn gradient_check(kind: ModelKind, seed: u64) -> f64 {
        use rand::Rng;
        let mut rng = rng_from_seed(seed);
        let (in_dim, out_dim, n) = (rng.random_range(1..5), rng.random_range(1..3), rng.random_range(1..6));
        let mut f = TransitionFn::init(kind, in_dim, out_dim, seed);
        // random biases too, so tanh is off its linear regime
        let mut params = f.flat_params();
        params.iter_mut().for_each(|p| *p += rng.random_range(-0.5..0.5));
        f.set_flat_params(&params);
        let x = Array2::from_shape_simple_fn((n, in_dim), || rng.random_range(-2.0..2.0));
        let y = Array2::from_shape_simple_fn((n, out_dim), || rng.random_range(-2.0..2.0));
        let (grads, _) = f.gradient(x.view(), y.view());
        let analytic: Vec<f64> = grads.iter().flat_map(|g| g.w.iter().chain(g.b.iter()).copied()).collect();
        let numeric = f.finite_difference_gradient(x.view(), y.view(), 1e-5);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-12)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [ModelKind::Linear, ModelKind::ResidualMlp] {
            for s in 0..20 {
                let err = gradient_check(kind, 100 + s);
                assert!(err < 1e-5, "{kind:?} seed {s}: relative error {err:e}");
            }
        }
    }

    fn linear_scm(noise_var: f64) -> DynamicScm {
        let g = SummaryGraph::from_names(&[("a", 1), ("b", 2)], &[("a", "b")]).unwrap();
        let fa = TransitionFn::linear(array![[-0.3]], array![0.1]).unwrap();
        let fb = TransitionFn::linear(array![[0.5, -0.4, 0.1], [0.2, 0.05, -0.6]], array![0.0, 0.2]).unwrap();
        DynamicScm::new(g, vec![Arc::new(fa), Arc::new(fb)], NoiseModel::isotropic(&[noise_var, noise_var]), 1.0)
            .unwrap()
    }

    fn ols(x: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
        // [x 1] beta = y via normal equations and Gauss-Jordan elimination
        let n = x.nrows();
        let xa = concatenate(Axis(1), &[x.view(), Array2::ones((n, 1)).view()]).unwrap();
        let mut a = xa.t().dot(&xa);
        let mut b = xa.t().dot(y);
        let p = a.nrows();
        for c in 0..p {
            let piv = (c..p).max_by(|&i, &k| a[[i, c]].abs().total_cmp(&a[[k, c]].abs())).unwrap();
            for k in 0..p {
                a.swap([c, k], [piv, k]);
            }
            for k in 0..b.ncols() {
                b.swap([c, k], [piv, k]);
            }
            let d = a[[c, c]];
            a.row_mut(c).mapv_inplace(|v| v / d);
            b.row_mut(c).mapv_inplace(|v| v / d);
            for r in 0..p {
                if r != c {
                    let m = a[[r, c]];
                    let arow = a.row(c).to_owned();
                    let brow = b.row(c).to_owned();
                    a.row_mut(r).scaled_add(-m, &arow);
                    b.row_mut(r).scaled_add(-m, &brow);
                }
            }
        }
        b.reversed_axes()
    }

    fn long_cfg() -> TrainConfig {
        TrainConfig { lr: 0.01, epochs: 1500, splits: 4, seed: 3, optimizer: Optimizer::adam(), batch_size: None }
    }

    #[test]
    fn linear_fit_matches_least_squares() {
        let scm = linear_scm(0.01);
        let data = vec![simulate(&scm, &[0.5, -0.5, 0.5], 300, 1).unwrap()];
        let fit = fit(&data, scm.graph(), ModelKind::Linear, &long_cfg()).unwrap();
        for j in 0..2 {
            let refs: Vec<&Trajectory> = data.iter().collect();
            let (x, y) = training_pairs(&refs, scm.graph(), j).unwrap();
            let beta = ols(&x, &y);
            let layer = &fit.transitions[j].layers()[0];
            let k = x.ncols();
            for r in 0..layer.w.nrows() {
                for c in 0..k {
                    assert!((layer.w[[r, c]] - beta[[r, c]]).abs() < 1e-4, "W[{r},{c}]");
                }
                assert!((layer.b[r] - beta[[r, k]]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn noiseless_linear_data_is_recovered() {
        use rand::Rng;
        let scm = linear_scm(0.0);
        let mut rng = rng_from_seed(17);
        let data: Vec<_> = (0..40)
            .map(|_| {
                let y0: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                simulate(&scm, &y0, 5, 0).unwrap()
            })
            .collect();
        // Adam with a fixed step keeps jittering around the optimum; plain
        // gradient descent converges linearly on least squares.
        let cfg = TrainConfig { lr: 0.1, epochs: 20_000, optimizer: Optimizer::Sgd, ..long_cfg() };
        let fit = fit(&data, scm.graph(), ModelKind::Linear, &cfg).unwrap();
        let truth = array![[0.5, -0.4, 0.1], [0.2, 0.05, -0.6]];
        let w = &fit.transitions[1].layers()[0].w;
        assert!((w - &truth).iter().all(|d| d.abs() < 1e-6), "{w}");
        assert!(fit.sigma_val_sq.iter().all(|s| *s <= 1e-10));
    }

    #[test]
    fn sigma_val_is_consistent_with_true_noise() {
        let scm = linear_scm(0.0025);
        let data = vec![simulate(&scm, &[0.0; 3], 1001, 11).unwrap()];
        let mut cfg = TrainConfig::lin_system().with_seed(2);
        cfg.epochs = 300;
        let fit = fit(&data, scm.graph(), ModelKind::Linear, &cfg).unwrap();
        for s in &fit.sigma_val_sq {
            assert!((s / 0.0025 - 1.0).abs() < 0.2, "sigma_val_sq {s}");
        }
    }

    #[test]
    fn sigma_val_ignores_data_order() {
        let scm = linear_scm(0.01);
        let mut data: Vec<_> = (0..3).map(|s| simulate(&scm, &[0.0; 3], 40, s).unwrap()).collect();
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::lin_system() };
        let a = fit(&data, scm.graph(), ModelKind::ResidualMlp, &cfg).unwrap();
        data.reverse();
        let b = fit(&data, scm.graph(), ModelKind::ResidualMlp, &cfg).unwrap();
        assert_eq!(a.sigma_val_sq, b.sigma_val_sq);
        assert_eq!(a.transitions, b.transitions);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let scm = linear_scm(0.01);
        let data = vec![simulate(&scm, &[0.0; 3], 30, 0).unwrap()];
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::lin_system().with_seed(9) };
        let fit = fit(&data, scm.graph(), ModelKind::ResidualMlp, &cfg).unwrap();
        let j = 1;
        let init = TransitionFn::init(ModelKind::ResidualMlp, 3, 2, keyed_seed(9, &[j as u64]));
        assert_eq!(fit.transitions[j], init);
        assert!(fit.train_loss_curve.iter().all(Vec::is_empty));
    }

    #[test]
    fn presets_reduce_training_loss() {
        let scm = linear_scm(0.01);
        let data = vec![simulate(&scm, &[1.0; 3], 200, 4).unwrap()];
        for cfg in [TrainConfig::lin_system(), TrainConfig::fhn(), TrainConfig::benchmark(), TrainConfig::river()] {
            for kind in [ModelKind::Linear, ModelKind::ResidualMlp] {
                let fit =
                    fit(&data, scm.graph(), kind, &TrainConfig { epochs: cfg.epochs.min(30), ..cfg.clone() }).unwrap();
                for curve in &fit.train_loss_curve {
                    assert!(curve.last().unwrap() <= curve.first().unwrap());
                }
            }
        }
    }

    #[test]
    fn constant_data_floors_sigma() {
        let g = SummaryGraph::from_names(&[("a", 1)], &[]).unwrap();
        let data = vec![Trajectory::new(Array2::from_elem((50, 1), 2.0), 1.0).unwrap()];
        let cfg = TrainConfig { epochs: 400, lr: 0.05, batch_size: None, ..TrainConfig::lin_system() };
        let fit = fit(&data, &g, ModelKind::Linear, &cfg).unwrap();
        assert!(fit.sigma_val_sq[0] >= SIGMA_FLOOR);
        assert!(fit.sigma_val_sq[0] < 1e-6);
    }

    #[test]
    fn fm_on_factum_alone_and_duplicates() {
        let scm = linear_scm(0.01);
        let factum = simulate(&scm, &[0.0; 3], 40, 5).unwrap();
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::lin_system() };
        let alone = fit_fm(&[], &factum, scm.graph(), ModelKind::Linear, &cfg).unwrap();
        let direct = fit(std::slice::from_ref(&factum), scm.graph(), ModelKind::Linear, &cfg).unwrap();
        assert_eq!(alone.transitions, direct.transitions);

        let dup = fit_fm(std::slice::from_ref(&factum), &factum, scm.graph(), ModelKind::Linear, &cfg).unwrap();
        let twice = fit(&[factum.clone(), factum.clone()], scm.graph(), ModelKind::Linear, &cfg).unwrap();
        assert_eq!(dup.transitions, twice.transitions);
    }

    #[test]
    fn too_little_data_is_rejected() {
        let scm = linear_scm(0.01);
        let data = vec![simulate(&scm, &[0.0; 3], 3, 0).unwrap()];
        assert!(matches!(
            fit(&data, scm.graph(), ModelKind::Linear, &TrainConfig::lin_system()),
            Err(RcaError::Data(_))
        ));
    }

    #[test]
    fn model_json_round_trip() {
        let scm = linear_scm(0.01);
        let data = vec![simulate(&scm, &[0.0; 3], 40, 0).unwrap()];
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::lin_system() };
        for kind in [ModelKind::Linear, ModelKind::ResidualMlp] {
            let fit = fit(&data, scm.graph(), kind, &cfg).unwrap();
            let text = fit.to_json(scm.graph()).unwrap();
            let value: serde_json::Value = serde_json::from_str(&text).unwrap();
            let first = &value["models"][0];
            for key in ["variant", "in_dim", "out_dim", "layers", "sigma_val_sq"] {
                assert!(first.get(key).is_some(), "missing {key}");
            }
            assert!(first["layers"][0]["W"].is_array());
            let back = FitResult::from_json(&text, scm.graph()).unwrap();
            assert_eq!(back.transitions, fit.transitions);
            assert_eq!(back.sigma_val_sq, fit.sigma_val_sq);
        }
    }
}
