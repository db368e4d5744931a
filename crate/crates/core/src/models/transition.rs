//! Transition functions: the increment `f(parents_{t-1}, self_{t-1})` of a
//! node. The residual `+ Y_{t-1}` and the noise are added by the SCM step.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::error::{RcaError, Result};
use crate::rng::rng_from_seed;

/// Width of the hidden layers of the residual MLP.
pub const HIDDEN_WIDTH: usize = 128;

/// Anything that maps a batch of transition inputs to increments.
pub trait Transition: Send + Sync + fmt::Debug {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;

    /// Row-wise increments for a batch of inputs (`n x in_dim`).
    fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Array2<f64>;

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        self.forward_batch(x).into_raw_vec_and_offset().0
    }

    /// The trainable parameterization, when there is one.
    fn as_transition_fn(&self) -> Option<&TransitionFn> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Single affine map.
    #[serde(rename = "linear")]
    Linear,
    /// Three affine layers with tanh between them.
    #[serde(rename = "residual_mlp")]
    ResidualMlp,
}

impl ModelKind {
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Linear => "Lin",
            ModelKind::ResidualMlp => "NLin",
        }
    }
}

/// Affine layer `y = W x + b` with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { w: Array2::zeros((out_dim, in_dim)), b: Array1::zeros(out_dim) }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias.
    fn uniform<R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            w: Array2::from_shape_simple_fn((out_dim, in_dim), || rng.sample(dist)),
            b: Array1::from_shape_simple_fn(out_dim, || rng.sample(dist)),
        }
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.t());
        y += &self.b;
        y
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }
}

/// Trainable transition: a linear map or a 3-layer tanh MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionFn {
    kind: ModelKind,
    layers: Vec<Dense>,
}

impl TransitionFn {
    pub fn linear(w: Array2<f64>, b: Array1<f64>) -> Result<Self> {
        Self::from_layers(ModelKind::Linear, vec![Dense { w, b }])
    }

    pub fn from_layers(kind: ModelKind, layers: Vec<Dense>) -> Result<Self> {
        let expected = match kind {
            ModelKind::Linear => 1,
            ModelKind::ResidualMlp => 3,
        };
        if layers.len() != expected {
            return Err(RcaError::shape(format!("{expected} layers"), format!("{} layers", layers.len())));
        }
        for l in &layers {
            if l.b.len() != l.w.nrows() {
                return Err(RcaError::shape(format!("bias of length {}", l.w.nrows()), l.b.len()));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(RcaError::shape(format!("layer input width {}", pair[0].out_dim()), pair[1].in_dim()));
            }
        }
        if layers.iter().any(|l| l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite())) {
            return Err(RcaError::Data("non-finite transition parameter".into()));
        }
        Ok(Self { kind, layers })
    }

    /// Seeded initialization, uniform in +-1/sqrt(fan_in) per layer.
    pub fn init(kind: ModelKind, in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let layers = match kind {
            ModelKind::Linear => vec![Dense::uniform(out_dim, in_dim, &mut rng)],
            ModelKind::ResidualMlp => vec![
                Dense::uniform(HIDDEN_WIDTH, in_dim, &mut rng),
                Dense::uniform(HIDDEN_WIDTH, HIDDEN_WIDTH, &mut rng),
                Dense::uniform(out_dim, HIDDEN_WIDTH, &mut rng),
            ],
        };
        Self { kind, layers }
    }

    /// All parameters zero; shapes as for `init`.
    pub fn zeros(kind: ModelKind, in_dim: usize, out_dim: usize) -> Self {
        let layers = match kind {
            ModelKind::Linear => vec![Dense::zeros(out_dim, in_dim)],
            ModelKind::ResidualMlp => vec![
                Dense::zeros(HIDDEN_WIDTH, in_dim),
                Dense::zeros(HIDDEN_WIDTH, HIDDEN_WIDTH),
                Dense::zeros(out_dim, HIDDEN_WIDTH),
            ],
        };
        Self { kind, layers }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Width-checked single-input evaluation.
    pub fn try_forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim() {
            return Err(RcaError::shape(self.in_dim(), input.len()));
        }
        Ok(self.forward(input))
    }

    /// Forward pass keeping every layer's post-activation output.
    fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { acts[i - 1].view() };
            let mut z = layer.apply(input);
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        acts
    }

    /// Mean squared error `sum((target - f(x))^2) / (n * out_dim)` and its
    /// gradient with respect to every layer, by backpropagation.
    pub fn gradient(&self, inputs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> (Vec<Dense>, f64) {
        let n = inputs.nrows();
        assert!(n > 0, "gradient of an empty batch");
        let acts = self.forward_cached(inputs);
        let out = acts.last().unwrap();
        let resid = out - &targets;
        let scale = 1.0 / (n * self.out_dim()) as f64;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() * scale;

        let mut delta = resid * (2.0 * scale);
        let mut grads = vec![Dense::zeros(0, 0); self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            let input = if i == 0 { inputs } else { acts[i - 1].view() };
            grads[i] = Dense { w: delta.t().dot(&input), b: delta.sum_axis(Axis(0)) };
            if i > 0 {
                let mut back = delta.dot(&self.layers[i].w);
                Zip::from(&mut back).and(&acts[i - 1]).for_each(|d, &h| *d *= 1.0 - h * h);
                delta = back;
            }
        }
        (grads, loss)
    }

    pub fn mse(&self, inputs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> f64 {
        let out = self.forward_batch(inputs);
        let n = (out.len()).max(1) as f64;
        Zip::from(&out).and(&targets).fold(0.0, |acc, &o, &t| acc + (o - t) * (o - t)) / n
    }

    /// Central finite-difference gradient of [`mse`](Self::mse) in
    /// `flat_params` order. A parameter only moves one unit of its layer, so
    /// the forward pass is redone from that unit on instead of from scratch.
    pub fn finite_difference_gradient(
        &self,
        inputs: ArrayView2<'_, f64>,
        targets: ArrayView2<'_, f64>,
        h: f64,
    ) -> Vec<f64> {
        let last = self.layers.len() - 1;
        // pre[l]: pre-activation of layer l; post[l]: input of layer l
        let mut post = vec![inputs.to_owned()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(post[l].view());
            if l < last {
                post.push(z.mapv(f64::tanh));
            }
            pre.push(z);
        }
        let denom = targets.len().max(1) as f64;
        let loss_with = |l: usize, unit: usize, delta: &Array1<f64>| -> f64 {
            let z = &pre[l].column(unit) + delta;
            let out = if l == last {
                let mut out = pre[last].clone();
                out.column_mut(unit).assign(&z);
                out
            } else {
                // one changed hidden unit adds a rank-one term to the next layer
                let dh = z.mapv(f64::tanh) - post[l + 1].column(unit);
                let w_next = self.layers[l + 1].w.column(unit);
                let mut zn = pre[l + 1].clone();
                for (mut row, d) in zn.outer_iter_mut().zip(dh.iter()) {
                    row.scaled_add(*d, &w_next);
                }
                for k in l + 1..last {
                    zn.mapv_inplace(f64::tanh);
                    zn = self.layers[k + 1].apply(zn.view());
                }
                zn
            };
            Zip::from(&out).and(&targets).fold(0.0, |acc, &o, &t| acc + (o - t) * (o - t)) / denom
        };
        let mut grad = Vec::with_capacity(self.n_params());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &post[l];
            for i in 0..layer.out_dim() {
                for k in 0..layer.in_dim() {
                    let col = input.column(k);
                    let up = loss_with(l, i, &col.mapv(|a| h * a));
                    let down = loss_with(l, i, &col.mapv(|a| -h * a));
                    grad.push((up - down) / (2.0 * h));
                }
            }
            for i in 0..layer.out_dim() {
                let shift = Array1::from_elem(input.nrows(), h);
                let up = loss_with(l, i, &shift);
                let down = loss_with(l, i, &(-shift));
                grad.push((up - down) / (2.0 * h));
            }
        }
        grad
    }

    /// Flattened parameter vector (layer by layer, W row-major then b).
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v = it.next().unwrap());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

impl Transition for TransitionFn {
    fn as_transition_fn(&self) -> Option<&TransitionFn> {
        Some(self)
    }

    fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = self.layers[0].apply(inputs);
        for layer in &self.layers[1..] {
            h.mapv_inplace(f64::tanh);
            h = layer.apply(h.view());
        }
        h
    }
}
