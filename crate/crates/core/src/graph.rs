//! Summary graph over named, possibly multivariate nodes.
//!
//! Edges connect distinct nodes and may form cycles; every edge is read as a
//! lag-one dependency, so the graph unrolled over time is always acyclic.
//! Self-dependence of a node on its own past is implicit and never stored.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{RcaError, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub index: usize,
    pub name: String,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub dim: usize,
    /// Declared but unobserved (e.g. a confounder). Skipped by fitting.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub latent: bool,
}

impl NodeSpec {
    pub fn new(name: &str, dim: usize) -> Self {
        Self { name: name.to_string(), dim, latent: false }
    }
}

/// Directed summary graph. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryGraph {
    nodes: Vec<NodeSpec>,
    edges: BTreeSet<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    offsets: Vec<usize>,
}

/// Record of a random edit applied to a graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphPerturbation {
    pub removed: Vec<(usize, usize)>,
    pub added: Vec<(usize, usize)>,
    pub seed: u64,
    /// Nodes left without any incident edge after the edit.
    pub isolated: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<NodeSpec>,
    edges: Vec<(String, String)>,
}

impl SummaryGraph {
    pub fn new(nodes: Vec<NodeSpec>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for n in &nodes {
            if n.dim == 0 {
                return Err(RcaError::InvalidGraph(format!("node '{}' has dim 0", n.name)));
            }
            if !seen.insert(n.name.as_str()) {
                return Err(RcaError::InvalidGraph(format!("duplicate node name '{}'", n.name)));
            }
        }
        let mut set = BTreeSet::new();
        for (s, d) in edges {
            if s >= nodes.len() || d >= nodes.len() {
                return Err(RcaError::InvalidGraph(format!("edge ({s}, {d}) references a missing node")));
            }
            if s == d {
                return Err(RcaError::InvalidGraph(format!(
                    "self-loop on '{}' (self-dependence is implicit)",
                    nodes[s].name
                )));
            }
            set.insert((s, d));
        }
        let mut parents = vec![Vec::new(); nodes.len()];
        for &(s, d) in &set {
            parents[d].push(s);
        }
        for p in &mut parents {
            p.sort_unstable();
        }
        let mut offsets = Vec::with_capacity(nodes.len() + 1);
        offsets.push(0);
        for n in &nodes {
            offsets.push(offsets.last().unwrap() + n.dim);
        }
        Ok(Self { nodes, edges: set, parents, offsets })
    }

    /// Convenience constructor from `(name, dim)` pairs and named edges.
    pub fn from_names(nodes: &[(&str, usize)], edges: &[(&str, &str)]) -> Result<Self> {
        let specs: Vec<NodeSpec> =
            nodes.iter().map(|(n, d)| NodeSpec { name: n.to_string(), dim: *d, latent: false }).collect();
        let lookup: BTreeMap<&str, usize> = nodes.iter().enumerate().map(|(i, (n, _))| (*n, i)).collect();
        let mut idx = Vec::with_capacity(edges.len());
        for (s, d) in edges {
            let s = *lookup.get(s).ok_or_else(|| RcaError::UnknownNode(s.to_string()))?;
            let d = *lookup.get(d).ok_or_else(|| RcaError::UnknownNode(d.to_string()))?;
            idx.push((s, d));
        }
        Self::new(specs, idx)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn node(&self, j: usize) -> &NodeSpec {
        &self.nodes[j]
    }

    pub fn node_id(&self, j: usize) -> NodeId {
        NodeId { index: j, name: self.nodes[j].name.clone() }
    }

    pub fn name(&self, j: usize) -> &str {
        &self.nodes[j].name
    }

    pub fn dim(&self, j: usize) -> usize {
        self.nodes[j].dim
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.nodes.iter().position(|n| n.name == name).ok_or_else(|| RcaError::UnknownNode(name.to_string()))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, s: usize, d: usize) -> bool {
        self.edges.contains(&(s, d))
    }

    /// Parents of `j` in index order. Never contains `j`.
    pub fn parents(&self, j: usize) -> Result<&[usize]> {
        self.parents.get(j).map(Vec::as_slice).ok_or_else(|| RcaError::UnknownNode(format!("#{j}")))
    }

    pub fn parents_of(&self, name: &str) -> Result<Vec<NodeId>> {
        let j = self.index_of(name)?;
        Ok(self.parents[j].iter().map(|&p| self.node_id(p)).collect())
    }

    /// Canonical per-step evaluation order: declaration order. Every value at
    /// step `t` depends only on step `t - 1`, so any order is valid.
    pub fn topological_schedule(&self) -> Vec<usize> {
        (0..self.nodes.len()).collect()
    }

    /// Column offset of node `j` in a concatenated state row.
    pub fn offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    pub fn columns(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Width of the transition input for node `j`: parent dims then own dim.
    pub fn input_dim(&self, j: usize) -> usize {
        self.parents[j].iter().map(|&p| self.dim(p)).sum::<usize>() + self.dim(j)
    }

    /// State columns feeding node `j`'s transition, parents first (index
    /// order), own block last.
    pub fn input_columns(&self, j: usize) -> Vec<usize> {
        let mut cols = Vec::with_capacity(self.input_dim(j));
        for &p in &self.parents[j] {
            cols.extend(self.columns(p));
        }
        cols.extend(self.columns(j));
        cols
    }

    /// Nodes reachable from `j` (including `j`) over summary edges.
    pub fn descendants(&self, j: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::from([j]);
        let mut stack = vec![j];
        while let Some(u) = stack.pop() {
            for &(s, d) in &self.edges {
                if s == u && out.insert(d) {
                    stack.push(d);
                }
            }
        }
        out
    }

    /// Nodes with no incoming edge.
    pub fn roots(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.parents[j].is_empty()).collect()
    }

    /// Graph restricted to observed nodes; edges touching latent nodes drop out.
    pub fn observed(&self) -> Result<Self> {
        let keep: Vec<usize> = (0..self.len()).filter(|&j| !self.nodes[j].latent).collect();
        let remap: BTreeMap<usize, usize> = keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let nodes = keep.iter().map(|&j| self.nodes[j].clone()).collect();
        let edges = self.edges.iter().filter_map(|(s, d)| Some((*remap.get(s)?, *remap.get(d)?)));
        Self::new(nodes, edges)
    }

    /// Remove `n_remove` existing edges and add `n_add` absent ones, chosen
    /// uniformly without replacement. Deterministic given `seed`.
    pub fn perturb(&self, n_remove: usize, n_add: usize, seed: u64) -> Result<(Self, GraphPerturbation)> {
        let existing: Vec<(usize, usize)> = self.edges.iter().copied().collect();
        let absent: Vec<(usize, usize)> = (0..self.len())
            .flat_map(|s| (0..self.len()).map(move |d| (s, d)))
            .filter(|&(s, d)| s != d && !self.edges.contains(&(s, d)))
            .collect();
        if n_remove > existing.len() {
            return Err(RcaError::Capacity(format!("cannot remove {n_remove} of {} edges", existing.len())));
        }
        if n_add > absent.len() {
            return Err(RcaError::Capacity(format!("cannot add {n_add} edges, only {} absent pairs", absent.len())));
        }
        let mut rng = rng_from_seed(seed);
        let mut removed: Vec<(usize, usize)> =
            sample(&mut rng, existing.len(), n_remove).into_iter().map(|i| existing[i]).collect();
        let mut added: Vec<(usize, usize)> =
            sample(&mut rng, absent.len(), n_add).into_iter().map(|i| absent[i]).collect();
        removed.sort_unstable();
        added.sort_unstable();

        let mut edges = self.edges.clone();
        for e in &removed {
            edges.remove(e);
        }
        edges.extend(added.iter().copied());
        let graph = Self::new(self.nodes.clone(), edges)?;
        let isolated =
            (0..graph.len()).filter(|&j| graph.edges.iter().all(|&(s, d)| s != j && d != j)).collect::<Vec<_>>();
        if !isolated.is_empty() {
            log::info!("perturbed graph (seed {seed}) leaves nodes {isolated:?} without edges");
        }
        Ok((graph, GraphPerturbation { removed, added, seed, isolated }))
    }

    pub fn to_json(&self) -> Result<String> {
        let file = GraphFile {
            nodes: self.nodes.clone(),
            edges: self.edges.iter().map(|&(s, d)| (self.nodes[s].name.clone(), self.nodes[d].name.clone())).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        let lookup: BTreeMap<&str, usize> = file.nodes.iter().enumerate().map(|(i, n)| (n.name.as_str(), i)).collect();
        let mut edges = Vec::with_capacity(file.edges.len());
        for (s, d) in &file.edges {
            let si = *lookup.get(s.as_str()).ok_or_else(|| RcaError::UnknownNode(s.clone()))?;
            let di = *lookup.get(d.as_str()).ok_or_else(|| RcaError::UnknownNode(d.clone()))?;
            edges.push((si, di));
        }
        Self::new(file.nodes, edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn four_node() -> SummaryGraph {
        SummaryGraph::from_names(
            &[("w", 2), ("x", 2), ("y", 2), ("z", 2)],
            &[("w", "x"), ("x", "y"), ("x", "z"), ("y", "z")],
        )
        .unwrap()
    }

    fn names(g: &SummaryGraph, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| g.name(i).to_string()).collect()
    }

    #[test]
    fn parents_follow_index_order() {
        let g = four_node();
        assert_eq!(names(&g, g.parents(3).unwrap()), ["x", "y"]);
        assert!(g.parents(0).unwrap().is_empty());
        assert!(matches!(g.parents(9), Err(RcaError::UnknownNode(_))));
        assert!(matches!(g.parents_of("q"), Err(RcaError::UnknownNode(_))));
    }

    #[test]
    fn fhn_graph_has_no_parents() {
        let g = SummaryGraph::from_names(&[("x", 2)], &[]).unwrap();
        assert!(g.parents(0).unwrap().is_empty());
        assert_eq!(g.topological_schedule(), vec![0]);
    }

    #[test]
    fn schedule_is_declaration_order() {
        let g = four_node();
        assert_eq!(names(&g, &g.topological_schedule()), ["w", "x", "y", "z"]);
        let empty = SummaryGraph::new(vec![], []).unwrap();
        assert!(empty.topological_schedule().is_empty());
    }

    #[test]
    fn rejects_self_loops_and_zero_dims() {
        let err = SummaryGraph::from_names(&[("a", 1)], &[("a", "a")]);
        assert!(matches!(err, Err(RcaError::InvalidGraph(_))));
        let err = SummaryGraph::from_names(&[("a", 0)], &[]);
        assert!(matches!(err, Err(RcaError::InvalidGraph(_))));
    }

    #[test]
    fn cycles_are_allowed() {
        let g = SummaryGraph::from_names(&[("a", 1), ("b", 1)], &[("a", "b"), ("b", "a")]).unwrap();
        assert_eq!(g.parents(0).unwrap(), &[1]);
        assert_eq!(g.parents(1).unwrap(), &[0]);
    }

    #[test]
    fn input_columns_put_parents_first() {
        let g = four_node();
        assert_eq!(g.input_columns(3), vec![2, 3, 4, 5, 6, 7]);
        assert_eq!(g.input_dim(1), 4);
        assert_eq!(g.total_dim(), 8);
    }

    #[test]
    fn perturb_cardinalities() {
        let g = four_node();
        let (g1, p) = g.perturb(1, 0, 7).unwrap();
        assert_eq!(g1.n_edges(), 3);
        assert_eq!(p.removed.len(), 1);
        assert!(g.has_edge(p.removed[0].0, p.removed[0].1));

        let (g0, p0) = g.perturb(0, 0, 123).unwrap();
        assert_eq!(g0, g);
        assert!(p0.removed.is_empty() && p0.added.is_empty());

        let (g2, p2) = g.perturb(0, 2, 3).unwrap();
        assert_eq!(g2.n_edges(), 6);
        for &(s, d) in &p2.added {
            assert!(!g.has_edge(s, d));
            assert_ne!(s, d);
        }
    }

    #[test]
    fn perturb_rejects_infeasible_counts() {
        let g = four_node();
        assert!(matches!(g.perturb(5, 0, 0), Err(RcaError::Capacity(_))));
        assert!(matches!(g.perturb(0, 9, 0), Err(RcaError::Capacity(_))));
    }

    #[test]
    fn json_round_trip_with_latent_node() {
        let text = r#"{"nodes":[{"name":"a","dim":1},{"name":"b","dim":1},{"name":"Z","dim":1,"latent":true}],
                       "edges":[["a","b"],["Z","a"],["Z","b"]]}"#;
        let g = SummaryGraph::from_json(text).unwrap();
        assert!(g.node(2).latent);
        let back = SummaryGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
        let obs = g.observed().unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs.n_edges(), 1);
    }

    proptest! {
        #[test]
        fn perturb_edge_count_and_determinism(seed in any::<u64>(), n_remove in 0usize..=4, n_add in 0usize..=8) {
            let g = four_node();
            let (a, pa) = g.perturb(n_remove, n_add, seed).unwrap();
            let (b, pb) = g.perturb(n_remove, n_add, seed).unwrap();
            prop_assert_eq!(a.n_edges(), g.n_edges() - n_remove + n_add);
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(pa, pb);
            for j in 0..a.len() {
                prop_assert!(!a.parents(j).unwrap().contains(&j));
            }
        }
    }
}
