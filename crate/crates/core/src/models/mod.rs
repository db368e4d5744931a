//! Trainable transition functions and their fitting.

mod train;
mod transition;

pub use train::{
    fit, fit_fm, fit_fm_transitions, fit_node, train_transition, training_pairs, FitResult, NodeFit, Optimizer,
    TrainConfig, SIGMA_FLOOR,
};
pub use transition::{Dense, ModelKind, Transition, TransitionFn, HIDDEN_WIDTH};
