//! Batched forward pass with activation cache, softmax cross-entropy, and
//! the matching backward pass.

use ndarray::{Array2, ArrayView2, Axis, Zip};

use super::{Dense, ModelError, Real, ResidualMlp};

/// Per-layer gradients, same order and shapes as the model's layers.
#[derive(Debug, Clone)]
pub struct Gradients<F>(pub Vec<Dense<F>>);

impl<F: Real> Gradients<F> {
    /// Flattened in the order of [`ResidualMlp::parameters`].
    pub fn flatten(&self) -> Vec<F> {
        let mut out = Vec::new();
        for l in &self.0 {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
        out
    }
}

struct Cache<F> {
    z0: Array2<F>,
    /// Input to each block, then the final hidden state.
    hs: Vec<Array2<F>>,
    us: Vec<Array2<F>>,
    vs: Vec<Array2<F>>,
    logits: Array2<F>,
}

fn affine<F: Real>(x: &ArrayView2<F>, layer: &Dense<F>) -> Array2<F> {
    x.dot(&layer.w) + &layer.b
}

fn relu<F: Real>(a: &Array2<F>) -> Array2<F> {
    a.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

fn relu_mask<F: Real>(grad: &mut Array2<F>, pre: &Array2<F>) {
    Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= F::zero() {
            *g = F::zero();
        }
    });
}

/// Mean softmax cross-entropy and its gradient w.r.t. the logits.
fn softmax_xent<F: Real>(logits: &Array2<F>, labels: &[usize]) -> (F, Array2<F>) {
    let n = F::from_f64(labels.len() as f64);
    let mut grad = logits.clone();
    let mut loss = F::zero();
    for (mut row, &label) in grad.rows_mut().into_iter().zip(labels) {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum: F = row.sum();
        row.mapv_inplace(|v| v / sum);
        loss = loss - row[label].max(F::min_positive_value()).ln();
        row[label] = row[label] - F::one();
        row.mapv_inplace(|v| v / n);
    }
    (loss / n, grad)
}

impl<F: Real> ResidualMlp<F> {
    fn forward_cache(&self, x: ArrayView2<F>) -> Cache<F> {
        let z0 = affine(&x, &self.layers[0]);
        let mut h = relu(&z0);
        let mut hs = Vec::with_capacity(self.config.blocks + 1);
        let mut us = Vec::with_capacity(self.config.blocks);
        let mut vs = Vec::with_capacity(self.config.blocks);
        for i in 0..self.config.blocks {
            let (fc1, fc2) = self.block(i);
            let u = affine(&h.view(), fc1);
            let v = affine(&relu(&u).view(), fc2) + &h;
            let next = relu(&v);
            hs.push(h);
            us.push(u);
            vs.push(v);
            h = next;
        }
        let logits = affine(&h.view(), self.output_layer());
        hs.push(h);
        Cache {
            z0,
            hs,
            us,
            vs,
            logits,
        }
    }

    /// Logits for a batch through the matrix path used in training.
    pub fn batch_logits(&self, x: ArrayView2<F>) -> Array2<F> {
        self.forward_cache(x).logits
    }

    fn check_batch(&self, x: &ArrayView2<F>, labels: &[usize]) -> Result<(), ModelError> {
        if x.ncols() != self.config.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.config.input_dim,
                got: x.ncols(),
            });
        }
        if x.nrows() != labels.len() {
            return Err(ModelError::DimensionMismatch {
                expected: x.nrows(),
                got: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.config.classes) {
            return Err(ModelError::LabelOutOfRange {
                label,
                classes: self.config.classes,
            });
        }
        Ok(())
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, x: ArrayView2<F>, labels: &[usize]) -> Result<F, ModelError> {
        self.check_batch(&x, labels)?;
        Ok(softmax_xent(&self.batch_logits(x), labels).0)
    }

    /// Mean cross-entropy and its gradient w.r.t. every parameter.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<F>,
        labels: &[usize],
    ) -> Result<(F, Gradients<F>), ModelError> {
        self.check_batch(&x, labels)?;
        let cache = self.forward_cache(x.view());
        let (loss, dlogits) = softmax_xent(&cache.logits, labels);
        let blocks = self.config.blocks;
        let mut grads: Vec<Option<Dense<F>>> = vec![None; self.layers.len()];

        let h_last = &cache.hs[blocks];
        grads[1 + 2 * blocks] = Some(Dense {
            w: h_last.t().dot(&dlogits),
            b: dlogits.sum_axis(Axis(0)),
        });
        let mut dh = dlogits.dot(&self.output_layer().w.t());

        for i in (0..blocks).rev() {
            let (fc1, fc2) = self.block(i);
            let mut dv = dh;
            relu_mask(&mut dv, &cache.vs[i]);
            let a = relu(&cache.us[i]);
            grads[2 + 2 * i] = Some(Dense {
                w: a.t().dot(&dv),
                b: dv.sum_axis(Axis(0)),
            });
            let mut du = dv.dot(&fc2.w.t());
            relu_mask(&mut du, &cache.us[i]);
            grads[1 + 2 * i] = Some(Dense {
                w: cache.hs[i].t().dot(&du),
                b: du.sum_axis(Axis(0)),
            });
            dh = du.dot(&fc1.w.t()) + &dv;
        }

        let mut dz0 = dh;
        relu_mask(&mut dz0, &cache.z0);
        grads[0] = Some(Dense {
            w: x.t().dot(&dz0),
            b: dz0.sum_axis(Axis(0)),
        });
        Ok((
            loss,
            Gradients(
                grads
                    .into_iter()
                    .map(|g| g.expect("every layer visited"))
                    .collect(),
            ),
        ))
    }

    /// Smallest |pre-activation| seen by any ReLU for this batch; near zero
    /// means finite differences straddle a kink.
    pub fn min_relu_margin(&self, x: ArrayView2<F>) -> F {
        let cache = self.forward_cache(x);
        std::iter::once(&cache.z0)
            .chain(&cache.us)
            .chain(&cache.vs)
            .flat_map(|a| a.iter())
            .fold(F::infinity(), |m, v| m.min(v.abs()))
    }
}
