//! Multinomial logistic regression trained with minibatch SGD.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::workload::Dataset;

/// Weights are stored row-major as `classes × (dim + 1)`; the last column of
/// each row is the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub classes: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochOutcome {
    /// Loss of every trained sample, measured before the step that used it.
    pub sample_losses: Vec<f64>,
    /// ‖w_after − w_before‖² for each minibatch step.
    pub update_sq_norms: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            weights: vec![0.0; classes * (dim + 1)],
        }
    }

    fn row(&self, c: usize) -> &[f64] {
        let w = self.dim + 1;
        &self.weights[c * w..(c + 1) * w]
    }

    /// Class probabilities for one feature vector.
    pub fn probabilities(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let row = self.row(c);
            *o = row[self.dim] + row[..self.dim].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            z += *o;
        }
        out.iter_mut().for_each(|o| *o /= z);
    }

    pub fn sample_loss(&self, x: &[f64], y: usize) -> f64 {
        let mut p = vec![0.0; self.classes];
        self.probabilities(x, &mut p);
        -p[y].max(f64::MIN_POSITIVE).ln()
    }

    /// Mean cross-entropy over a dataset.
    pub fn loss(&self, features: &[f64], labels: &[usize]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(k, &y)| self.sample_loss(&features[k * self.dim..(k + 1) * self.dim], y))
            .sum();
        total / labels.len() as f64
    }

    /// Gradient of the mean loss over the samples at `idx`, written into
    /// `grad`. Per-sample losses are appended to `losses`.
    pub fn batch_gradient(
        &self,
        features: &[f64],
        labels: &[usize],
        idx: &[usize],
        grad: &mut [f64],
        losses: &mut Vec<f64>,
    ) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let d = self.dim;
        let mut p = vec![0.0; self.classes];
        let scale = 1.0 / idx.len().max(1) as f64;
        for &k in idx {
            let x = &features[k * d..(k + 1) * d];
            let y = labels[k];
            self.probabilities(x, &mut p);
            losses.push(-p[y].max(f64::MIN_POSITIVE).ln());
            for c in 0..self.classes {
                let err = (p[c] - if c == y { 1.0 } else { 0.0 }) * scale;
                let g = &mut grad[c * (d + 1)..(c + 1) * (d + 1)];
                for (gi, xi) in g[..d].iter_mut().zip(x) {
                    *gi += err * xi;
                }
                g[d] += err;
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut p = vec![0.0; self.classes];
        self.probabilities(x, &mut p);
        let mut best = 0;
        for c in 1..self.classes {
            if p[c] > p[best] {
                best = c;
            }
        }
        best
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.labels.is_empty() {
            return 0.0;
        }
        let d = self.dim;
        let hits = data
            .labels
            .iter()
            .enumerate()
            .filter(|&(k, &y)| self.predict(&data.features[k * d..(k + 1) * d]) == y)
            .count();
        hits as f64 / data.labels.len() as f64
    }

    /// One shuffled pass of minibatch gradient descent over a shard.
    pub fn local_epoch<R: Rng + ?Sized>(
        &mut self,
        features: &[f64],
        labels: &[usize],
        learning_rate: f64,
        batch_size: usize,
        rng: &mut R,
    ) -> EpochOutcome {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(rng);
        let mut grad = vec![0.0; self.weights.len()];
        let mut out = EpochOutcome {
            sample_losses: Vec::with_capacity(labels.len()),
            update_sq_norms: Vec::with_capacity(labels.len().div_ceil(batch_size.max(1))),
        };
        for batch in order.chunks(batch_size.max(1)) {
            self.batch_gradient(features, labels, batch, &mut grad, &mut out.sample_losses);
            let mut sq = 0.0;
            for (w, g) in self.weights.iter_mut().zip(&grad) {
                let step = learning_rate * g;
                *w -= step;
                sq += step * step;
            }
            out.update_sq_norms.push(sq);
        }
        out
    }
}
