use serde::{Deserialize, Serialize};

use crate::cohort::BinarySample;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 0.01,
            learning_rate: 0.5,
            epochs: 300,
        }
    }
}

impl LogRegConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            errs.push(format!("logreg l2 must be finite and >= 0, got {}", self.l2));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!("logreg learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl LogisticRegression {
    pub fn zeros(n_features: usize) -> Self {
        LogisticRegression {
            weights: vec![0.0; n_features],
            bias: 0.0,
        }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }

    /// Mean log-loss plus `l2 / 2 * |w|²` (bias unpenalized), and its
    /// gradient laid out as `[w..., bias]`.
    pub fn loss_and_gradient(&self, samples: &[BinarySample], l2: f64) -> (f64, Vec<f64>) {
        let n = samples.len().max(1) as f64;
        let p = self.weights.len();
        let mut grad = vec![0.0; p + 1];
        let mut loss = 0.0;
        for s in samples {
            let z = self.decision(&s.x);
            // -[y log σ(z) + (1-y) log(1-σ(z))] = softplus(z) - y z
            let y = if s.label { 1.0 } else { 0.0 };
            loss += softplus(z) - y * z;
            let r = sigmoid(z) - y;
            for (g, x) in grad[..p].iter_mut().zip(&s.x) {
                *g += r * x;
            }
            grad[p] += r;
        }
        loss /= n;
        grad.iter_mut().for_each(|g| *g /= n);
        loss += 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        for (g, w) in grad[..p].iter_mut().zip(&self.weights) {
            *g += l2 * w;
        }
        (loss, grad)
    }

    pub fn importance(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.abs()).collect()
    }
}

/// Full-batch gradient descent from zero weights. Deterministic, so no
/// seed is needed.
pub fn train_logreg(samples: &[BinarySample], cfg: &LogRegConfig) -> Result<LogisticRegression> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    let n_features = samples.first().map_or(0, |s| s.x.len());
    let mut model = LogisticRegression::zeros(n_features);
    if samples.is_empty() {
        return Ok(model);
    }
    for _ in 0..cfg.epochs {
        let (_, grad) = model.loss_and_gradient(samples, cfg.l2);
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= cfg.learning_rate * g;
        }
        model.bias -= cfg.learning_rate * grad[n_features];
    }
    if !model.bias.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Training("logistic regression diverged".into()));
    }
    Ok(model)
}
