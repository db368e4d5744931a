//! Counterfactual root cause analysis for discretized dynamical systems.
//!
//! Normal behaviour is captured by a dynamic SCM with residual transitions
//! fitted per node. Given a faulty trajectory, the exogenous noise is
//! abducted, candidate interventions are replayed, and every `(node, time)`
//! candidate is scored by how normal its counterfactual trajectories look.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod io;
pub mod models;
pub mod pipeline;
pub mod river;
pub mod rng;
pub mod scoring;
pub mod systems;

pub use error::{RcaError, Result};
