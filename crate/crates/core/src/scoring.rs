//! Failure classifiers, the approximate Shapley score, an exact Shapley
//! oracle for small games, and ranking.
//!
//! All classifiers report normality: larger means more normal, and the root
//! cause is the candidate whose counterfactuals are the most normal.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{counterfactual_sample, AbductedNoise, DynamicScm, Intervention, Trajectory};
use crate::error::{RcaError, Result};
use crate::graph::SummaryGraph;
use crate::models::Transition;
use crate::rng::keyed_seed;

/// Laplace smoothing constant for bounded classifiers.
pub const ALPHA: f64 = 1.0;
/// Scores closer than this are tied.
pub const TIE_TOLERANCE: f64 = 1e-12;
/// Largest player count accepted by [`exact_shapley_oracle`].
pub const MAX_EXACT_PLAYERS: usize = 12;

#[derive(Debug, Clone)]
pub enum Classifier {
    /// Fraction of `(dim, time)` entries of one node inside `center +- halfwidth`.
    Corridor { node: usize, offset: usize, center: Vec<f64>, halfwidth: Vec<f64> },
    /// 1 if every entry stays within `reference +- k * sigma` (per column), else 0.
    Band { reference: Array2<f64>, sigma: Vec<f64>, k: f64 },
    /// Mean one-step Gaussian log-density per scalar under a fitted SCM.
    LogLik { scm: Arc<DynamicScm>, sigma_val_sq: Vec<f64> },
    /// Fraction of time steps where every dim of one node has
    /// `(y - mean) / std < threshold`.
    ZScore { node: usize, offset: usize, mean: Vec<f64>, std: Vec<f64>, threshold: f64 },
}

impl Classifier {
    pub fn corridor(graph: &SummaryGraph, node: usize, center: Vec<f64>, halfwidth: Vec<f64>) -> Result<Self> {
        check_len(graph.dim(node), center.len(), "corridor center")?;
        check_len(graph.dim(node), halfwidth.len(), "corridor halfwidth")?;
        check_positive(&halfwidth, "corridor halfwidth")?;
        Ok(Classifier::Corridor { node, offset: graph.offset(node), center, halfwidth })
    }

    /// Corridor centred on the per-dim mean of `node` over `data`, with
    /// halfwidth `k` standard deviations.
    pub fn corridor_from_data(graph: &SummaryGraph, node: usize, data: &[Trajectory], k: f64) -> Result<Self> {
        let (mean, std) = node_moments(graph, node, data)?;
        Self::corridor(graph, node, mean, std.iter().map(|s| k * s).collect())
    }

    pub fn band(reference: Array2<f64>, sigma: Vec<f64>, k: f64) -> Result<Self> {
        check_len(reference.ncols(), sigma.len(), "band sigma")?;
        check_positive(&sigma, "band sigma")?;
        if k.is_nan() || k <= 0.0 {
            return Err(RcaError::Config(format!("band multiplier must be positive, got {k}")));
        }
        Ok(Classifier::Band { reference, sigma, k })
    }

    pub fn loglik(scm: Arc<DynamicScm>, sigma_val_sq: Vec<f64>) -> Result<Self> {
        check_len(scm.graph().len(), sigma_val_sq.len(), "sigma_val_sq")?;
        check_positive(&sigma_val_sq, "sigma_val_sq")?;
        Ok(Classifier::LogLik { scm, sigma_val_sq })
    }

    pub fn zscore(graph: &SummaryGraph, node: usize, mean: Vec<f64>, std: Vec<f64>, threshold: f64) -> Result<Self> {
        check_len(graph.dim(node), mean.len(), "z-score mean")?;
        check_len(graph.dim(node), std.len(), "z-score std")?;
        check_positive(&std, "z-score std")?;
        Ok(Classifier::ZScore { node, offset: graph.offset(node), mean, std, threshold })
    }

    pub fn zscore_from_data(graph: &SummaryGraph, node: usize, data: &[Trajectory], threshold: f64) -> Result<Self> {
        let (mean, std) = node_moments(graph, node, data)?;
        Self::zscore(graph, node, mean, std, threshold)
    }

    /// Bounded classifiers take values in `[0, 1]`.
    pub fn is_bounded(&self) -> bool {
        !matches!(self, Classifier::LogLik { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Classifier::Corridor { .. } => "corridor",
            Classifier::Band { .. } => "band",
            Classifier::LogLik { .. } => "loglik",
            Classifier::ZScore { .. } => "zscore",
        }
    }

    pub fn normality(&self, y: &Trajectory) -> Result<f64> {
        self.check(y.values().view())?;
        Ok(self.eval(y.values().view()))
    }

    fn check(&self, y: ArrayView2<'_, f64>) -> Result<()> {
        match self {
            Classifier::Corridor { offset, center: c, .. } | Classifier::ZScore { offset, mean: c, .. } => {
                if y.ncols() < offset + c.len() {
                    return Err(RcaError::shape(format!(">= {} columns", offset + c.len()), y.ncols()));
                }
            }
            Classifier::Band { reference, .. } => {
                if reference.dim() != y.dim() {
                    return Err(RcaError::shape(format!("{:?}", reference.dim()), format!("{:?}", y.dim())));
                }
            }
            Classifier::LogLik { scm, .. } => {
                if y.ncols() != scm.graph().total_dim() {
                    return Err(RcaError::shape(scm.graph().total_dim(), y.ncols()));
                }
            }
        }
        Ok(())
    }

    /// Normality of raw values; the layout is assumed checked.
    fn eval(&self, y: ArrayView2<'_, f64>) -> f64 {
        match self {
            Classifier::Corridor { offset, center, halfwidth, .. } => {
                let block = y.slice(s![.., *offset..offset + center.len()]);
                let mut inside = 0usize;
                for row in block.outer_iter() {
                    for ((v, c), h) in row.iter().zip(center).zip(halfwidth) {
                        inside += ((v - c).abs() <= *h) as usize;
                    }
                }
                inside as f64 / block.len() as f64
            }
            Classifier::Band { reference, sigma, k } => {
                let ok = y
                    .outer_iter()
                    .zip(reference.outer_iter())
                    .all(|(row, e)| row.iter().zip(e.iter()).zip(sigma).all(|((v, e), s)| (v - e).abs() <= k * s));
                if ok {
                    1.0
                } else {
                    0.0
                }
            }
            Classifier::LogLik { scm, sigma_val_sq } => loglik(scm, sigma_val_sq, y),
            Classifier::ZScore { offset, mean, std, threshold, .. } => {
                let block = y.slice(s![.., *offset..offset + mean.len()]);
                let below = block
                    .outer_iter()
                    .filter(|row| row.iter().zip(mean.iter().zip(std)).all(|(v, (m, s))| (v - m) / s < *threshold))
                    .count();
                below as f64 / block.nrows() as f64
            }
        }
    }
}

fn loglik(scm: &DynamicScm, sigma_val_sq: &[f64], y: ArrayView2<'_, f64>) -> f64 {
    let g = scm.graph();
    let len = y.nrows();
    let prev = y.slice(s![..len - 1, ..]);
    let mut total = 0.0;
    for (j, &var) in sigma_val_sq.iter().enumerate() {
        let inc = scm.transition(j).forward_batch(scm.gather_inputs(j, prev).view());
        let cols = g.columns(j);
        let norm = -0.5 * (2.0 * PI * var).ln();
        let next = y.slice(s![1.., cols.clone()]);
        let last = y.slice(s![..len - 1, cols]);
        for ((n, p), f) in next.iter().zip(last.iter()).zip(inc.iter()) {
            let r = n - p - f;
            total += norm - 0.5 * r * r / var;
        }
    }
    total / ((len - 1) * g.total_dim()) as f64
}

fn check_len(expected: usize, actual: usize, what: &str) -> Result<()> {
    if expected != actual {
        return Err(RcaError::shape(format!("{expected} entries of {what}"), actual));
    }
    Ok(())
}

fn check_positive(v: &[f64], what: &str) -> Result<()> {
    if let Some(bad) = v.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(RcaError::Config(format!("{what} must be positive, got {bad}")));
    }
    Ok(())
}

/// Per-dim mean and standard deviation of a node over all rows of `data`.
pub fn node_moments(graph: &SummaryGraph, node: usize, data: &[Trajectory]) -> Result<(Vec<f64>, Vec<f64>)> {
    if data.is_empty() {
        return Err(RcaError::Data("no data to estimate node moments".into()));
    }
    let blocks: Vec<_> = data.iter().map(|t| t.node_view(graph, node)).collect();
    let all = ndarray::concatenate(Axis(0), &blocks).map_err(|e| RcaError::Data(e.to_string()))?;
    let mean = all.mean_axis(Axis(0)).expect("non-empty");
    let std = all.std_axis(Axis(0), 0.0);
    Ok((mean.to_vec(), std.to_vec()))
}

/// A singleton intervention at `(node, time)` or all times of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Candidate {
    Site { node: usize, time: usize },
    Node { node: usize },
}

impl Candidate {
    pub fn node(&self) -> usize {
        match self {
            Candidate::Site { node, .. } | Candidate::Node { node } => *node,
        }
    }

    pub fn time(&self) -> Option<usize> {
        match self {
            Candidate::Site { time, .. } => Some(*time),
            Candidate::Node { .. } => None,
        }
    }

    fn seed_key(&self) -> [u64; 2] {
        match self {
            Candidate::Site { node, time } => [*node as u64, *time as u64],
            Candidate::Node { node } => [*node as u64, u64::MAX],
        }
    }

    pub fn label(&self, graph: &SummaryGraph) -> String {
        match self {
            Candidate::Site { node, time } => format!("{}@{time}", graph.name(*node)),
            Candidate::Node { node } => graph.name(*node).to_string(),
        }
    }
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Candidate::Site { node, time } => write!(f, "#{node}@{time}"),
            Candidate::Node { node } => write!(f, "#{node}"),
        }
    }
}

/// How a candidate becomes interventions: fresh noise at `sigma_val_sq`
/// and, optionally, the node's transition replaced.
#[derive(Debug, Clone)]
pub struct InterventionRecipe {
    pub sigma_val_sq: Vec<f64>,
    pub replacements: Option<Vec<Arc<dyn Transition>>>,
}

impl InterventionRecipe {
    pub fn at(&self, node: usize, time: usize) -> Intervention {
        let variance = self.sigma_val_sq[node];
        match &self.replacements {
            Some(r) => Intervention::Both { node, time, variance, transition: r[node].clone() },
            None => Intervention::NoiseReplace { node, time, variance },
        }
    }
}

/// Abducted counterfactual SCM plus the recipe turning candidates into
/// interventions.
#[derive(Debug, Clone)]
pub struct CounterfactualEngine {
    pub scm: Arc<DynamicScm>,
    pub abducted: AbductedNoise,
    pub factum: Trajectory,
    pub recipe: InterventionRecipe,
}

/// Aggregate of classifier values over one counterfactual batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSummary {
    pub score: f64,
    pub n_samples: usize,
    pub n_diverged: usize,
}

impl CounterfactualEngine {
    pub fn new(scm: Arc<DynamicScm>, factum: Trajectory, recipe: InterventionRecipe) -> Result<Self> {
        let abducted = crate::dynamics::abduct(&scm, &factum)?;
        if recipe.sigma_val_sq.len() != scm.graph().len() {
            return Err(RcaError::shape(scm.graph().len(), recipe.sigma_val_sq.len()));
        }
        Ok(Self { scm, abducted, factum, recipe })
    }

    pub fn graph(&self) -> &SummaryGraph {
        self.scm.graph()
    }

    /// Every `(node, time)` with `time` in `[1, T-1]`, optionally skipping nodes.
    pub fn site_candidates(&self, exclude: &[usize]) -> Vec<Candidate> {
        let len = self.factum.len();
        (0..self.graph().len())
            .filter(|j| !exclude.contains(j))
            .flat_map(|node| (1..len).map(move |time| Candidate::Site { node, time }))
            .collect()
    }

    pub fn interventions(&self, candidates: &[Candidate]) -> Vec<Intervention> {
        let len = self.factum.len();
        candidates
            .iter()
            .flat_map(|c| match *c {
                Candidate::Site { node, time } => vec![self.recipe.at(node, time)],
                Candidate::Node { node } => (1..len).map(|t| self.recipe.at(node, t)).collect(),
            })
            .collect()
    }

    /// Counterfactual samples under the joint intervention of `candidates`.
    pub fn samples(
        &self,
        candidates: &[Candidate],
        n: usize,
        seed: u64,
    ) -> Result<crate::dynamics::CounterfactualBatch> {
        counterfactual_sample(&self.scm, &self.abducted, &self.factum, &self.interventions(candidates), n, seed)
    }

    /// Value of a set of candidates: smoothed log mean normality for bounded
    /// classifiers, plain mean normality otherwise.
    pub fn value(&self, candidates: &[Candidate], phi: &Classifier, n: usize, seed: u64) -> Result<SampleSummary> {
        let batch = self.samples(candidates, n, seed)?;
        phi.check(batch.values.index_axis(Axis(0), 0))?;
        let values: Vec<f64> =
            batch.values.outer_iter().zip(&batch.diverged).filter(|(_, d)| !**d).map(|(y, _)| phi.eval(y)).collect();
        Ok(SampleSummary { score: aggregate(phi.is_bounded(), &values), n_samples: n, n_diverged: batch.n_diverged() })
    }
}

/// Smoothed log-mean for bounded values, mean otherwise. No valid samples
/// yields negative infinity.
pub fn aggregate(bounded: bool, values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().sum();
    let n = values.len() as f64;
    if bounded {
        ((ALPHA + sum) / (2.0 * ALPHA + n)).ln()
    } else {
        sum / n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub candidate: Candidate,
    pub score: f64,
    pub n_samples: usize,
    pub n_diverged: usize,
    /// Every sample diverged; the score is the negative-infinity sentinel.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub entries: Vec<ScoreEntry>,
    pub n_samples: usize,
    pub alpha: f64,
}

impl ScoreTable {
    pub fn get(&self, c: &Candidate) -> Option<&ScoreEntry> {
        self.entries.iter().find(|e| e.candidate == *c)
    }

    pub fn candidates(&self) -> Vec<Candidate> {
        self.entries.iter().map(|e| e.candidate).collect()
    }

    pub fn to_csv(&self, graph: &SummaryGraph) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["candidate_node", "candidate_time", "score", "n_samples", "n_diverged"])?;
        for e in &self.entries {
            w.write_record([
                graph.name(e.candidate.node()).to_string(),
                e.candidate.time().map(|t| t.to_string()).unwrap_or_default(),
                format_float(e.score),
                e.n_samples.to_string(),
                e.n_diverged.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| RcaError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8 csv"))
    }

    pub fn from_csv(text: &str, graph: &SummaryGraph) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut entries = vec![];
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(RcaError::Data(format!("score row with {} fields", rec.len())));
            }
            let node = graph.index_of(&rec[0])?;
            let candidate = if rec[1].is_empty() {
                Candidate::Node { node }
            } else {
                Candidate::Site { node, time: parse(&rec[1])? }
            };
            let score: f64 = parse(&rec[2])?;
            entries.push(ScoreEntry {
                candidate,
                score,
                n_samples: parse(&rec[3])?,
                n_diverged: parse(&rec[4])?,
                flagged: score == f64::NEG_INFINITY,
            });
        }
        let n_samples = entries.first().map_or(0, |e| e.n_samples);
        Ok(Self { entries, n_samples, alpha: ALPHA })
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| RcaError::Data(format!("cannot parse '{s}'")))
}

/// Shortest decimal that parses back to the same float.
pub fn format_float(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v:?}")
    }
}

/// Score every singleton candidate by counterfactual sampling. Each
/// candidate draws from its own seed keyed by the candidate, so the table
/// does not depend on enumeration order.
pub fn approx_shapley(
    candidates: &[Candidate],
    engine: &CounterfactualEngine,
    phi: &Classifier,
    n_samples: usize,
    seed: u64,
) -> Result<ScoreTable> {
    if n_samples == 0 {
        return Err(RcaError::Config("n_samples must be at least 1".into()));
    }
    let entries = candidates
        .par_iter()
        .map(|c| {
            let s = engine.value(std::slice::from_ref(c), phi, n_samples, keyed_seed(seed, &c.seed_key()))?;
            if s.n_diverged == n_samples {
                log::warn!("all {n_samples} counterfactual samples diverged for candidate {c}");
            }
            Ok(ScoreEntry {
                candidate: *c,
                score: s.score,
                n_samples,
                n_diverged: s.n_diverged,
                flagged: s.n_diverged == n_samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreTable { entries, n_samples, alpha: ALPHA })
}

/// Node-level candidates: one simultaneous intervention at every time of
/// each listed node.
pub fn node_level_scores(
    nodes: &[usize],
    engine: &CounterfactualEngine,
    phi: &Classifier,
    n_samples: usize,
    seed: u64,
) -> Result<ScoreTable> {
    let candidates: Vec<Candidate> = nodes.iter().map(|&node| Candidate::Node { node }).collect();
    approx_shapley(&candidates, engine, phi, n_samples, seed)
}

/// Exact Shapley values by enumerating all coalitions. `v` receives a
/// bitmask of present players.
pub fn exact_shapley_oracle(n_players: usize, v: impl Fn(u32) -> f64) -> Result<Vec<f64>> {
    if n_players > MAX_EXACT_PLAYERS {
        return Err(RcaError::Capacity(format!("{n_players} players exceed the exact limit of {MAX_EXACT_PLAYERS}")));
    }
    let n = n_players;
    let values: Vec<f64> = (0..1u32 << n).map(&v).collect();
    // weight(|S|) = |S|! (n - |S| - 1)! / n!
    let mut fact = vec![1.0f64; n + 1];
    for i in 1..=n {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..n).map(|k| fact[k] * fact[n - k - 1] / fact[n]).collect();
    let mut out = vec![0.0; n];
    for (i, out_i) in out.iter_mut().enumerate() {
        let bit = 1u32 << i;
        for mask in 0..(1u32 << n) {
            if mask & bit == 0 {
                *out_i += weight[mask.count_ones() as usize] * (values[(mask | bit) as usize] - values[mask as usize]);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    /// Candidates tied at the maximum score.
    pub argmax: Vec<Candidate>,
    /// All candidates by decreasing score (ties in candidate order).
    pub sorted: Vec<(Candidate, f64)>,
    pub identified: bool,
}

impl RankingResult {
    pub fn is_unique(&self) -> bool {
        self.argmax.len() == 1
    }

    pub fn to_json(&self, graph: &SummaryGraph) -> Result<String> {
        let argmax: Vec<serde_json::Value> =
            self.argmax.iter().map(|c| serde_json::json!({"node": graph.name(c.node()), "time": c.time()})).collect();
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "argmax": argmax,
            "identified": self.identified,
        }))?)
    }
}

/// Argmax set under a `1e-12` tie tolerance, and whether `truth` is in it.
pub fn rank(st: &ScoreTable, truth: Option<&Candidate>) -> Result<RankingResult> {
    if st.entries.is_empty() {
        return Err(RcaError::Config("cannot rank an empty score table".into()));
    }
    let mut sorted: Vec<(Candidate, f64)> = st.entries.iter().map(|e| (e.candidate, e.score)).collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let best = sorted[0].1;
    let argmax: Vec<Candidate> =
        sorted.iter().take_while(|(_, s)| *s == best || (best - s).abs() <= TIE_TOLERANCE).map(|(c, _)| *c).collect();
    let identified = truth.is_some_and(|t| argmax.contains(t));
    Ok(RankingResult { argmax, sorted, identified })
}
