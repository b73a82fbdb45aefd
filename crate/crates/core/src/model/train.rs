//! Training data generation and the Adam training loop.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backprop::Gradients;
use super::{Dense, ModelError, Real, ResidualMlp};
use crate::ruleset::{segment_header, FeatureVector, Packet};
use crate::tss::{TssIndex, TupleIdx};

/// Training recipe. Desk defaults are small; [`TrainingConfig::full_scale`]
/// gives the large-scale values.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Class-balance floor: rarer classes are oversampled up to this count.
    pub alpha: usize,
    /// Accuracy at which training stops.
    pub beta: f64,
    pub batch_size: usize,
    pub epochs_per_round: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub max_rounds: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            alpha: 100,
            beta: 0.95,
            batch_size: 256,
            epochs_per_round: 200,
            learning_rate: 1e-3,
            lr_decay: 0.1,
            decay_every: 100,
            max_rounds: 3,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn full_scale() -> Self {
        Self {
            alpha: 1000,
            batch_size: 8192,
            epochs_per_round: 1000,
            decay_every: 200,
            max_rounds: 5,
            ..Self::default()
        }
    }

    /// Step schedule restarted at the beginning of every round.
    pub fn lr_at(&self, epoch_in_round: usize) -> f64 {
        let steps = epoch_in_round / self.decay_every.max(1);
        self.learning_rate * self.lr_decay.powi(steps as i32)
    }
}

/// Labeled feature vectors; labels are tuple indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<TupleIdx>,
}

impl TrainingSet {
    /// Labels each packet with the tuple hosting its highest-precedence
    /// matching rule. Packets that match nothing are dropped.
    pub fn label(tss: &TssIndex, packets: &[Packet]) -> Self {
        let mut set = Self::default();
        for p in packets {
            if let Some(hit) = tss.ordered_search(p, None).hit {
                set.features.push(segment_header(tss.schema(), p));
                set.labels.push(hit.tuple);
            }
        }
        set
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &l in &self.labels {
            if l >= counts.len() {
                counts.resize(l + 1, 0);
            }
            counts[l] += 1;
        }
        counts
    }

    /// Duplicates examples of every class with `0 < count < alpha`,
    /// round-robin over that class's examples, until it has exactly
    /// `alpha`. Absent classes stay absent.
    pub fn oversample(&self, alpha: usize) -> Self {
        let mut out = self.clone();
        let classes = self.labels.iter().max().map_or(0, |m| m + 1);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
        for (i, &l) in self.labels.iter().enumerate() {
            members[l].push(i);
        }
        for (class, idx) in members.iter().enumerate() {
            if idx.is_empty() || idx.len() >= alpha {
                continue;
            }
            for k in 0..alpha - idx.len() {
                let src = idx[k % idx.len()];
                out.features.push(self.features[src].clone());
                out.labels.push(class);
            }
        }
        out
    }

    pub fn to_matrix<F: Real>(&self, input_dim: usize) -> Array2<F> {
        let mut m = Array2::zeros((self.len(), input_dim));
        for (mut row, f) in m.rows_mut().into_iter().zip(&self.features) {
            for (dst, &src) in row.iter_mut().zip(f.as_slice()) {
                *dst = F::from_f64(f64::from(src));
            }
        }
        m
    }
}

/// Labels `packets` against `tss` and oversamples to `alpha`.
pub fn generate_training_data(tss: &TssIndex, packets: &[Packet], alpha: usize) -> TrainingSet {
    TrainingSet::label(tss, packets).oversample(alpha)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Dense<F>>,
    v: Vec<Dense<F>>,
    t: i32,
}

impl<F: Real> Adam<F> {
    pub fn new(model: &ResidualMlp<F>) -> Self {
        let zeros: Vec<Dense<F>> = model
            .layers()
            .iter()
            .map(|l| Dense::zeros(l.inputs(), l.outputs()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut ResidualMlp<F>, grads: &Gradients<F>, lr: f64) {
        self.t += 1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let c1 = F::from_f64(1.0 - self.beta1.powi(self.t));
        let c2 = F::from_f64(1.0 - self.beta2.powi(self.t));
        let lr = F::from_f64(lr);
        let eps = F::from_f64(self.eps);
        for (((layer, g), m), v) in model
            .layers_mut()
            .iter_mut()
            .zip(&grads.0)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let update = |p: &mut F, g: F, m: &mut F, v: &mut F| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            };
            ndarray::Zip::from(&mut layer.w)
                .and(&g.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.b)
                .and(&g.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub round: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// Only set on the last epoch of a round.
    pub eval_accuracy: Option<f64>,
    pub alpha: usize,
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("round,epoch,lr,loss,eval_accuracy,alpha\n");
    for r in rows {
        let acc = r.eval_accuracy.map_or(String::new(), |a| format!("{a:.6}"));
        let _ = writeln!(
            out,
            "{},{},{:e},{:.6},{},{}",
            r.round, r.epoch, r.lr, r.loss, acc, r.alpha
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F = f32> {
    /// Best model seen by evaluation accuracy.
    pub model: ResidualMlp<F>,
    pub accuracy: f64,
    /// Whether `accuracy >= beta` was reached.
    pub converged: bool,
    pub rounds: usize,
    pub final_alpha: usize,
    pub log: Vec<LogRow>,
}

struct EpochRunner<'a, F> {
    x: Array2<F>,
    labels: &'a [usize],
    order: Vec<usize>,
    batch_size: usize,
}

impl<'a, F: Real> EpochRunner<'a, F> {
    fn new(set: &'a TrainingSet, input_dim: usize, batch_size: usize) -> Self {
        Self {
            x: set.to_matrix(input_dim),
            labels: &set.labels,
            order: (0..set.len()).collect(),
            batch_size: batch_size.max(1),
        }
    }

    /// One shuffled pass; returns the example-weighted mean loss.
    fn epoch(
        &mut self,
        model: &mut ResidualMlp<F>,
        adam: &mut Adam<F>,
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, ModelError> {
        self.order.shuffle(rng);
        let mut total = 0.0;
        for chunk in self.order.chunks(self.batch_size) {
            let xb = self.x.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| self.labels[i]).collect();
            let (loss, grads) = model.loss_and_gradients(xb.view(), &yb)?;
            adam.step(model, &grads, lr);
            total += loss.to_f64().unwrap_or(f64::NAN) * chunk.len() as f64;
        }
        Ok(total / self.order.len().max(1) as f64)
    }
}

/// Trains in rounds. Each round oversamples `raw` to the current alpha and
/// runs `epochs_per_round` epochs; if accuracy on `eval` (or on `raw` when
/// `eval` is empty) stays below beta, alpha is multiplied by 10 for the
/// next round. Running out of rounds is not an error: the best model is
/// returned with `converged == false`.
pub fn train<F: Real>(
    mut model: ResidualMlp<F>,
    raw: &TrainingSet,
    eval: &TrainingSet,
    config: &TrainingConfig,
) -> Result<TrainOutcome<F>, ModelError> {
    if raw.is_empty() {
        return Err(ModelError::InvalidConfig("empty training set".into()));
    }
    let dim = model.config().input_dim;
    let eval = if eval.is_empty() { raw } else { eval };
    let eval_x: Array2<F> = eval.to_matrix(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&model);
    let mut alpha = config.alpha;
    let mut log = Vec::new();
    let mut best: Option<(f64, ResidualMlp<F>)> = None;
    let mut rounds = 0;

    for round in 0..config.max_rounds.max(1) {
        rounds = round + 1;
        let set = raw.oversample(alpha);
        let mut runner = EpochRunner::new(&set, dim, config.batch_size);
        let mut acc = None;
        for epoch in 0..config.epochs_per_round {
            let lr = config.lr_at(epoch);
            let loss = runner.epoch(&mut model, &mut adam, lr, &mut rng)?;
            let last = epoch + 1 == config.epochs_per_round;
            if last {
                acc = Some(model.accuracy(&eval_x, &eval.labels)?);
            }
            log.push(LogRow {
                round,
                epoch,
                lr,
                loss,
                eval_accuracy: acc,
                alpha,
            });
        }
        let acc = match acc {
            Some(a) => a,
            None => model.accuracy(&eval_x, &eval.labels)?,
        };
        if best.as_ref().is_none_or(|(b, _)| acc > *b) {
            best = Some((acc, model.clone()));
        }
        if acc >= config.beta {
            break;
        }
        if round + 1 < config.max_rounds {
            alpha = alpha.saturating_mul(10);
        }
    }

    let (accuracy, model) = best.expect("at least one round");
    Ok(TrainOutcome {
        converged: accuracy >= config.beta,
        model,
        accuracy,
        rounds,
        final_alpha: alpha,
        log,
    })
}

/// Limits for fine-tuning; whichever runs out first stops it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub epochs: usize,
    pub time: Option<Duration>,
}

impl Budget {
    pub fn epochs(epochs: usize) -> Self {
        Self { epochs, time: None }
    }
}

/// Warm-started fine-tuning with a fresh optimizer and the same schedule.
/// Never reinitialises weights.
pub fn incremental_train<F: Real>(
    mut model: ResidualMlp<F>,
    set: &TrainingSet,
    budget: Budget,
    config: &TrainingConfig,
) -> Result<ResidualMlp<F>, ModelError> {
    let classes = model.num_classes();
    if let Some(&label) = set.labels.iter().find(|&&l| l >= classes) {
        return Err(ModelError::LabelOutOfRange { label, classes });
    }
    if budget.epochs == 0 || set.is_empty() {
        return Ok(model);
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(&model);
    let mut runner = EpochRunner::new(set, model.config().input_dim, config.batch_size);
    for epoch in 0..budget.epochs {
        runner.epoch(&mut model, &mut adam, config.lr_at(epoch), &mut rng)?;
        if budget.time.is_some_and(|t| start.elapsed() >= t) {
            break;
        }
    }
    Ok(model)
}
