//! The tuple predictor: a fully connected network with residual blocks.
//!
//! ```text
//! h0  = relu(x · W_in + b_in)
//! h'  = relu(relu(h · w1 + b1) · w2 + b2 + h)      (per block)
//! out = h · W_out + b_out                          (raw logits)
//! ```
//!
//! Parameters are generic over [`Real`] so gradients can be checked in
//! `f64`; deployed models are `f32`.

mod backprop;
mod io;
mod train;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use backprop::Gradients;
pub use io::{load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    generate_training_data, incremental_train, log_to_csv, train, Adam, Budget, LogRow,
    TrainOutcome, TrainingConfig, TrainingSet,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("label {label} outside {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait Real:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::fmt::Debug
    + std::iter::Sum
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).expect("finite")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Network shape: `S` inputs, `N` neurons per layer, `B` residual blocks,
/// `C` output classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub neurons: usize,
    pub blocks: usize,
    pub classes: usize,
}

impl ModelConfig {
    /// Two blocks of 64 neurons.
    pub fn desk(input_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            neurons: 64,
            blocks: 2,
            classes,
        }
    }

    /// Six blocks of 512 neurons, the large configuration.
    pub fn full_scale(input_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            neurons: 512,
            blocks: 6,
            classes,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.neurons == 0 || self.classes == 0 {
            return Err(ModelError::InvalidConfig(format!(
                "S, N and C must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Multiply-accumulates in one forward pass.
    pub fn macs(&self) -> u64 {
        let (s, n, b, c) = (
            self.input_dim as u64,
            self.neurons as u64,
            self.blocks as u64,
            self.classes as u64,
        );
        s * n + 2 * b * n * n + n * c
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.input_dim, self.neurons)];
        for _ in 0..self.blocks {
            shapes.push((self.neurons, self.neurons));
            shapes.push((self.neurons, self.neurons));
        }
        shapes.push((self.neurons, self.classes));
        shapes
    }
}

/// Fully connected layer, `x · w + b` with `w` stored `inputs × outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Real> Dense<F> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// `out = x · w + b`, accumulated in fixed input order so a row's
    /// result never depends on what else is in the batch.
    #[inline]
    fn apply_row(&self, x: &[F], out: &mut [F], macs: &mut u64) {
        out.copy_from_slice(self.b.as_slice().expect("contiguous"));
        let w = self.w.as_slice().expect("standard layout");
        let cols = self.outputs();
        for (k, &xk) in x.iter().enumerate() {
            let row = &w[k * cols..(k + 1) * cols];
            for (o, &wkj) in out.iter_mut().zip(row) {
                *o = *o + xk * wkj;
            }
        }
        *macs += (x.len() * cols) as u64;
    }
}

#[inline]
fn relu_in_place<F: Real>(v: &mut [F]) {
    for x in v {
        if *x < F::zero() {
            *x = F::zero();
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: PartialOrd + Copy>(values: &[F]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMlp<F = f32> {
    config: ModelConfig,
    /// `[input, block0.fc1, block0.fc2, ..., output]`
    layers: Vec<Dense<F>>,
}

impl<F: Real> ResidualMlp<F> {
    /// He-uniform weights scaled by fan-in, zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| {
                let limit = (6.0 / i as f64).sqrt();
                let w =
                    Array2::from_shape_fn((i, o), |_| F::from_f64(rng.random_range(-limit..limit)));
                Dense {
                    w,
                    b: Array1::zeros(o),
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Builds a model from explicit layers in canonical order.
    pub fn from_layers(config: ModelConfig, layers: Vec<Dense<F>>) -> Result<Self, ModelError> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if layers.len() != shapes.len() {
            return Err(ModelError::DimensionMismatch {
                expected: shapes.len(),
                got: layers.len(),
            });
        }
        for (l, (i, o)) in layers.iter().zip(shapes) {
            if l.w.dim() != (i, o) || l.b.len() != o {
                return Err(ModelError::InvalidConfig(format!(
                    "layer shape {:?}/{} does not match {i}x{o}",
                    l.w.dim(),
                    l.b.len()
                )));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.classes
    }

    pub fn layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<F>] {
        &mut self.layers
    }

    pub fn input_layer(&self) -> &Dense<F> {
        &self.layers[0]
    }

    /// `(fc1, fc2)` of block `i`.
    pub fn block(&self, i: usize) -> (&Dense<F>, &Dense<F>) {
        (&self.layers[1 + 2 * i], &self.layers[2 + 2 * i])
    }

    pub fn block_mut(&mut self, i: usize) -> (&mut Dense<F>, &mut Dense<F>) {
        let (a, b) = self.layers.split_at_mut(2 + 2 * i);
        (&mut a[1 + 2 * i], &mut b[0])
    }

    pub fn output_layer(&self) -> &Dense<F> {
        self.layers.last().expect("at least input and output")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// All parameters, layer by layer, weights (row-major) then biases.
    pub fn parameters(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[F]) -> Result<(), ModelError> {
        if params.len() != self.param_count() {
            return Err(ModelError::DimensionMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut()
                .for_each(|w| *w = it.next().expect("length checked"));
            l.b.iter_mut()
                .for_each(|b| *b = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// Logits for one input, counting multiply-accumulates into `macs`.
    pub fn forward_counted(&self, x: &[F], macs: &mut u64) -> Result<Vec<F>, ModelError> {
        if x.len() != self.config.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.config.input_dim,
                got: x.len(),
            });
        }
        let n = self.config.neurons;
        let mut h = vec![F::zero(); n];
        let mut a = vec![F::zero(); n];
        let mut v = vec![F::zero(); n];
        self.layers[0].apply_row(x, &mut h, macs);
        relu_in_place(&mut h);
        for i in 0..self.config.blocks {
            let (fc1, fc2) = self.block(i);
            fc1.apply_row(&h, &mut a, macs);
            relu_in_place(&mut a);
            fc2.apply_row(&a, &mut v, macs);
            for (vj, &hj) in v.iter_mut().zip(&h) {
                *vj = *vj + hj;
            }
            relu_in_place(&mut v);
            std::mem::swap(&mut h, &mut v);
        }
        let mut logits = vec![F::zero(); self.config.classes];
        self.output_layer().apply_row(&h, &mut logits, macs);
        Ok(logits)
    }

    pub fn forward(&self, x: &[F]) -> Result<Vec<F>, ModelError> {
        self.forward_counted(x, &mut 0)
    }

    pub fn predict(&self, x: &[F]) -> Result<usize, ModelError> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Row-wise predictions; each row equals [`Self::predict`] on it.
    pub fn predict_batch(&self, rows: &Array2<F>) -> Result<Vec<usize>, ModelError> {
        let mut macs = 0;
        rows.rows()
            .into_iter()
            .map(|r| {
                let x = r.to_slice().expect("standard layout rows");
                self.forward_counted(x, &mut macs).map(|l| argmax(&l))
            })
            .collect()
    }

    /// Fraction of rows predicted as their label; 1.0 for an empty set.
    pub fn accuracy(&self, rows: &Array2<F>, labels: &[usize]) -> Result<f64, ModelError> {
        if labels.is_empty() {
            return Ok(1.0);
        }
        let preds = self.predict_batch(rows)?;
        let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(correct as f64 / labels.len() as f64)
    }
}
