//! Multinomial logistic regression with mean cross-entropy loss.

use super::{Dataset, Task};
use crate::types::ModelParams;

/// Parameter layout: `n_classes` weight rows of `n_features` entries,
/// followed by `n_classes` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SoftmaxRegression {
    pub n_classes: usize,
    pub n_features: usize,
}

impl SoftmaxRegression {
    pub fn new(n_classes: usize, n_features: usize) -> Self {
        Self {
            n_classes,
            n_features,
        }
    }

    fn bias_offset(&self) -> usize {
        self.n_classes * self.n_features
    }

    fn logits(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        let f = self.n_features;
        let b = self.bias_offset();
        for (k, o) in out.iter_mut().enumerate() {
            let w = &params[k * f..(k + 1) * f];
            *o = params[b + k] + w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    /// Converts logits into probabilities in place and returns the log of the
    /// normalizer.
    fn softmax_in_place(z: &mut [f64]) -> f64 {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in z.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in z.iter_mut() {
            *v /= sum;
        }
        max + sum.ln()
    }

    /// Nearest-center classifier expressed as softmax weights:
    /// `w_k = c_k`, `b_k = -|c_k|^2 / 2`, scaled by `sharpness`.
    pub fn nearest_center_params(&self, centers: &[Vec<f64>], sharpness: f64) -> ModelParams {
        let mut p = ModelParams::zeros(self.dim());
        let b = self.bias_offset();
        for (k, c) in centers.iter().enumerate() {
            for (j, &v) in c.iter().enumerate() {
                p[k * self.n_features + j] = sharpness * v;
            }
            p[b + k] = -0.5 * sharpness * c.iter().map(|v| v * v).sum::<f64>();
        }
        p
    }
}

impl Task for SoftmaxRegression {
    fn dim(&self) -> usize {
        self.n_classes * (self.n_features + 1)
    }

    fn loss(&self, params: &ModelParams, data: &Dataset, batch: &[usize]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        let mut z = vec![0.0; self.n_classes];
        let total: f64 = batch
            .iter()
            .map(|&i| {
                self.logits(params.as_slice(), data.row(i), &mut z);
                let label_logit = z[data.label(i)];
                let log_norm = Self::softmax_in_place(&mut z);
                log_norm - label_logit
            })
            .sum();
        total / batch.len() as f64
    }

    fn gradient(&self, params: &ModelParams, data: &Dataset, batch: &[usize]) -> ModelParams {
        let mut grad = ModelParams::zeros(self.dim());
        if batch.is_empty() {
            return grad;
        }
        let f = self.n_features;
        let b = self.bias_offset();
        let scale = 1.0 / batch.len() as f64;
        let mut z = vec![0.0; self.n_classes];
        let g = grad.as_mut_slice();
        for &i in batch {
            let x = data.row(i);
            self.logits(params.as_slice(), x, &mut z);
            Self::softmax_in_place(&mut z);
            z[data.label(i)] -= 1.0;
            for (k, &err) in z.iter().enumerate() {
                let e = err * scale;
                for (gw, &xj) in g[k * f..(k + 1) * f].iter_mut().zip(x) {
                    *gw += e * xj;
                }
                g[b + k] += e;
            }
        }
        grad
    }

    fn predict(&self, params: &ModelParams, features: &[f64]) -> usize {
        let mut z = vec![0.0; self.n_classes];
        self.logits(params.as_slice(), features, &mut z);
        // First maximal logit wins, so the all-zero model always predicts class 0.
        let mut best = 0;
        for k in 1..z.len() {
            if z[k] > z[best] {
                best = k;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use rand::Rng;

    fn toy() -> (SoftmaxRegression, Dataset) {
        let data = Dataset::new(
            vec![0.5, -1.0, 1.5, 0.2, -0.3, 0.8, 2.0, -2.0, 0.0],
            vec![0, 2, 1],
            3,
            3,
        )
        .unwrap();
        (SoftmaxRegression::new(3, 3), data)
    }

    #[test]
    fn zero_model_loss_is_log_k() {
        let (task, data) = toy();
        let l = task.loss(&ModelParams::zeros(task.dim()), &data, &[0, 1, 2]);
        assert!((l - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (task, data) = toy();
        let mut rng = stream(5, Purpose::Dataset, 0);
        for _ in 0..5 {
            let p = ModelParams::from_vec((0..task.dim()).map(|_| rng.random_range(-1.0..1.0)).collect());
            let batch = [0, 1, 2];
            let g = task.gradient(&p, &data, &batch);
            let h = 1e-6;
            for j in 0..task.dim() {
                let mut plus = p.clone();
                plus[j] += h;
                let mut minus = p.clone();
                minus[j] -= h;
                let fd = (task.loss(&plus, &data, &batch) - task.loss(&minus, &data, &batch)) / (2.0 * h);
                let rel = (fd - g[j]).abs() / fd.abs().max(g[j].abs()).max(1e-3);
                assert!(rel < 1e-4, "coord {j}: fd {fd} analytic {}", g[j]);
            }
        }
    }

    #[test]
    fn loss_is_non_negative_and_stable_for_large_logits() {
        let (task, data) = toy();
        let p = ModelParams::from_vec(vec![500.0; task.dim()]);
        let l = task.loss(&p, &data, &[0, 1, 2]);
        assert!(l.is_finite() && l >= 0.0);
    }
}
