//! Feedforward network with sigmoid hidden layers, identity output and
//! hand-written backpropagation for (weighted) squared-error objectives.
//!
//! Layers store `W` as `fan_in x fan_out`, so a batch `X` (K x fan_in) maps to
//! `X W + b`. The model operates in normalized feature space; [`FeatureNorm`]
//! converts to and from raw log-power values.

mod io;
mod train;

use std::fmt::{Debug, Display};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use io::{load_model, save_model, FORMAT_VERSION};
pub use train::{fit_norm_stats, train, train_with_progress, Dataset, EpochRecord, FrameWeights, LrSchedule, TrainConfig, TrainHistory};

use crate::{Error, Result};

/// Scalar type the network can be instantiated with.
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    fn extend_le_bytes(self, out: &mut Vec<u8>);

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }
}

impl Real for f32 {
    fn extend_le_bytes(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Real for f64 {
    fn extend_le_bytes(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply<T: Real>(self, z: &mut Array2<T>) {
        if self == Activation::Sigmoid {
            z.mapv_inplace(sigmoid);
        }
    }
}

pub fn sigmoid<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Layer<T> {
    fn zeros_like(&self) -> Self {
        Self { weights: Array2::zeros(self.weights.raw_dim()), bias: Array1::zeros(self.bias.len()) }
    }
}

/// Per-dimension mean/std for inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorm<T> {
    pub input_mean: Array1<T>,
    pub input_std: Array1<T>,
    pub target_mean: Array1<T>,
    pub target_std: Array1<T>,
}

impl<T: Real> FeatureNorm<T> {
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_mean: Array1::zeros(input_dim),
            input_std: Array1::ones(input_dim),
            target_mean: Array1::zeros(output_dim),
            target_std: Array1::ones(output_dim),
        }
    }

    pub fn normalize_inputs(&self, x: &mut Array2<T>) {
        Zip::from(x.rows_mut()).for_each(|mut row| {
            Zip::from(&mut row).and(&self.input_mean).and(&self.input_std).for_each(|v, &m, &s| *v = (*v - m) / s)
        });
    }

    pub fn normalize_targets(&self, y: &mut Array2<T>) {
        Zip::from(y.rows_mut()).for_each(|mut row| {
            Zip::from(&mut row).and(&self.target_mean).and(&self.target_std).for_each(|v, &m, &s| *v = (*v - m) / s)
        });
    }

    pub fn denormalize_targets(&self, y: &mut Array2<T>) {
        Zip::from(y.rows_mut()).for_each(|mut row| {
            Zip::from(&mut row).and(&self.target_mean).and(&self.target_std).for_each(|v, &m, &s| *v = *v * s + m)
        });
    }

    fn validate(&self, input_dim: usize, output_dim: usize) -> Result<()> {
        if self.input_mean.len() != input_dim
            || self.input_std.len() != input_dim
            || self.target_mean.len() != output_dim
            || self.target_std.len() != output_dim
        {
            return Err(Error::BadDims("feature normalization length does not match layer dims".into()));
        }
        if self.input_std.iter().chain(self.target_std.iter()).any(|s| !(*s > T::zero())) {
            return Err(Error::BadDims("normalization std entries must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T = f32> {
    pub layers: Vec<Layer<T>>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub norm: FeatureNorm<T>,
}

/// Per-parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

/// Frequency weights applied to the output error.
#[derive(Debug, Clone, Copy)]
pub enum LossWeights<'a, T> {
    /// Plain squared error.
    None,
    /// One weight vector shared by every sample.
    Global(ArrayView1<'a, T>),
    /// One weight vector per sample (row).
    PerSample(ArrayView2<'a, T>),
}

impl<T: Real> MlpModel<T> {
    /// Glorot-uniform weights and zero biases, deterministic in `seed`.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::BadDims(format!("{layer_dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                    T::from_f64_lossy(rng.random_range(-limit..limit))
                });
                Layer { weights, bias: Array1::zeros(fan_out) }
            })
            .collect();
        Ok(Self {
            layers,
            hidden_activation: Activation::Sigmoid,
            output_activation: Activation::Identity,
            norm: FeatureNorm::identity(layer_dims[0], layer_dims[layer_dims.len() - 1]),
        })
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weights.ncols()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.weights.ncols()).unwrap_or(0)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::BadDims("no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].weights.ncols() != pair[1].weights.nrows() {
                return Err(Error::BadDims(format!("layer {i} output does not feed layer {}", i + 1)));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.weights.ncols() {
                return Err(Error::BadDims(format!("layer {i} bias length")));
            }
        }
        self.norm.validate(self.input_dim(), self.output_dim())
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!("input has {} columns, model expects {}", x.ncols(), self.input_dim())));
        }
        Ok(())
    }

    /// Network output for a batch, in normalized target space.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights);
            z += &layer.bias;
            if i == last {
                self.output_activation.apply(&mut z);
            } else {
                self.hidden_activation.apply(&mut z);
            }
            a = z;
        }
        Ok(a)
    }

    /// Raw inputs in, raw (denormalized) targets out.
    pub fn predict(&self, raw_inputs: &Array2<T>) -> Result<Array2<T>> {
        let mut x = raw_inputs.clone();
        self.check_input(&x.view())?;
        self.norm.normalize_inputs(&mut x);
        let mut y = self.forward(x.view())?;
        self.norm.denormalize_targets(&mut y);
        Ok(y)
    }

    fn activations(&self, x: ArrayView2<T>) -> Vec<Array2<T>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&layer.weights);
            z += &layer.bias;
            if i == last {
                self.output_activation.apply(&mut z);
            } else {
                self.hidden_activation.apply(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    /// Sum of squared weight entries over all layers (biases excluded).
    pub fn weight_square_norm(&self) -> T {
        self.layers.iter().map(|l| l.weights.iter().fold(T::zero(), |acc, &w| acc + w * w)).fold(T::zero(), |a, b| a + b)
    }

    /// Data term `(1/K) sum_k ||w (.) (s_hat - s)||^2` for a batch of outputs.
    pub fn data_loss(output: &ArrayView2<T>, target: &ArrayView2<T>, weights: LossWeights<T>) -> T {
        let k = T::from_usize(output.nrows()).expect("batch size");
        let mut total = T::zero();
        for (i, (o_row, t_row)) in output.rows().into_iter().zip(target.rows()).enumerate() {
            let mut row_sum = T::zero();
            for (f, (&o, &t)) in o_row.iter().zip(t_row.iter()).enumerate() {
                let e = o - t;
                let w = weight_at(weights, i, f);
                row_sum = row_sum + (w * w) * (e * e);
            }
            total = total + row_sum;
        }
        total / k
    }

    /// Loss `(1/K) sum_k ||w (.) (s_hat - s)||^2 + lambda ||W||^2` and its
    /// gradient with respect to every weight and bias.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<T>,
        target: ArrayView2<T>,
        weights: LossWeights<T>,
        lambda: T,
    ) -> Result<(T, Gradients<T>)> {
        self.check_input(&x)?;
        let k = x.nrows();
        if target.dim() != (k, self.output_dim()) {
            return Err(Error::DimensionMismatch(format!(
                "target {:?}, expected ({k}, {})",
                target.dim(),
                self.output_dim()
            )));
        }
        match weights {
            LossWeights::Global(w) if w.len() != self.output_dim() => {
                return Err(Error::DimensionMismatch(format!("{} weights for {} outputs", w.len(), self.output_dim())));
            }
            LossWeights::PerSample(w) if w.dim() != target.dim() => {
                return Err(Error::DimensionMismatch(format!("weights {:?} vs target {:?}", w.dim(), target.dim())));
            }
            _ => {}
        }
        if k == 0 {
            return Err(Error::EmptyDataset);
        }

        let acts = self.activations(x);
        let output = acts.last().expect("output layer");
        let loss = Self::data_loss(&output.view(), &target, weights) + lambda * self.weight_square_norm();

        // dL/d(output) = 2 w^2 (s_hat - s) / K
        let scale = T::from_f64_lossy(2.0) / T::from_usize(k).expect("batch size");
        let mut delta = output - &target;
        for (i, mut row) in delta.rows_mut().into_iter().enumerate() {
            for (f, e) in row.iter_mut().enumerate() {
                let w = weight_at(weights, i, f);
                *e = *e * (w * w) * scale;
            }
        }
        if self.output_activation == Activation::Sigmoid {
            delta.zip_mut_with(output, |d, &a| *d = *d * a * (T::one() - a));
        }

        let two_lambda = lambda + lambda;
        let mut grads: Vec<Layer<T>> = self.layers.iter().map(Layer::zeros_like).collect();
        for l in (0..self.layers.len()).rev() {
            let input = &acts[l];
            let g = &mut grads[l];
            g.weights = input.t().dot(&delta);
            g.weights.scaled_add(two_lambda, &self.layers[l].weights);
            g.bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weights.t());
                // Hidden layers: sigmoid'(z) = a (1 - a).
                back.zip_mut_with(input, |d, &a| *d = *d * a * (T::one() - a));
                delta = back;
            }
        }
        Ok((loss, Gradients { layers: grads }))
    }

    /// One plain gradient step: theta <- theta - lr * grad.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.scaled_add(-lr, &g.weights);
            layer.bias.scaled_add(-lr, &g.bias);
        }
    }

    /// All parameters flattened in layer order: each layer's weights
    /// (row-major) followed by its bias.
    pub fn flat_parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    /// Mutable access to the parameter with flat index `idx`.
    pub fn parameter_mut(&mut self, mut idx: usize) -> &mut T {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                let cols = l.weights.ncols();
                return &mut l.weights[[idx / cols, idx % cols]];
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return &mut l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }
}

impl<T: Real> Gradients<T> {
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }
}

#[inline]
fn weight_at<T: Real>(weights: LossWeights<T>, sample: usize, bin: usize) -> T {
    match weights {
        LossWeights::None => T::one(),
        LossWeights::Global(w) => w[bin],
        LossWeights::PerSample(w) => w[[sample, bin]],
    }
}
