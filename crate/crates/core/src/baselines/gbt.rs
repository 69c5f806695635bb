use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::derive_seed;
use super::logreg::{sigmoid, softplus};
use super::tree::{grow, Criterion, GrowParams, Tree};
use crate::cohort::BinarySample;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Features tried per split; all when `None`.
    pub features_per_split: Option<usize>,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_rounds: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_leaf: 5,
            lambda: 1.0,
            features_per_split: None,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!("gbt learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            errs.push(format!("gbt lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.min_leaf == 0 {
            errs.push("gbt min_leaf must be at least 1".into());
        }
        if self.features_per_split == Some(0) {
            errs.push("gbt features_per_split must be at least 1".into());
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gbt {
    /// Log-odds of the training base rate.
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Summed split gain per feature, normalized to sum to 1.
    pub importance: Vec<f64>,
}

impl Gbt {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.init + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }
}

/// Mean logistic loss of raw scores.
pub fn log_loss(scores: &[f64], samples: &[BinarySample]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(samples)
        .map(|(&z, s)| softplus(z) - if s.label { z } else { 0.0 })
        .sum();
    total / samples.len().max(1) as f64
}

/// Boosted regression trees on the logistic loss with Newton leaf values
/// `-G / (H + lambda)`.
pub fn train_gbt(samples: &[BinarySample], cfg: &GbtConfig, seed: u64) -> Result<Gbt> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    if samples.is_empty() {
        return Err(Error::Training("boosting needs at least one sample".into()));
    }
    let n = samples.len();
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.x.as_slice()).collect();
    let y: Vec<f64> = samples.iter().map(|s| if s.label { 1.0 } else { 0.0 }).collect();
    let rate = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let init = (rate / (1.0 - rate)).ln();
    let n_features = rows[0].len();
    let mut model = Gbt {
        init,
        learning_rate: cfg.learning_rate,
        trees: Vec::new(),
        importance: vec![0.0; n_features],
    };
    if cfg.learning_rate == 0.0 {
        return Ok(model);
    }
    let params = GrowParams {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        features_per_split: cfg.features_per_split,
        criterion: Criterion::Newton { lambda: cfg.lambda },
    };
    let mut scores = vec![init; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for round in 0..cfg.n_rounds {
        for i in 0..n {
            let p = sigmoid(scores[i]);
            g[i] = p - y[i];
            h[i] = p * (1.0 - p);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, round as u64));
        let grown = grow(&rows, &g, &h, (0..n).collect(), params, &mut rng);
        for (acc, v) in model.importance.iter_mut().zip(&grown.importance) {
            *acc += v;
        }
        for (s, r) in scores.iter_mut().zip(&rows) {
            *s += cfg.learning_rate * grown.tree.predict(r);
        }
        model.trees.push(grown.tree);
    }
    let total: f64 = model.importance.iter().sum();
    if total > 0.0 {
        model.importance.iter_mut().for_each(|v| *v /= total);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use rand::Rng;

    fn data(n: usize, seed: u64) -> Vec<BinarySample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                let label = rng.random::<f64>() < sigmoid(3.0 * x[0] - 1.0);
                BinarySample {
                    player_id: "p".into(),
                    anchor_date: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
                    x,
                    label,
                }
            })
            .collect()
    }

    fn train_loss(m: &Gbt, d: &[BinarySample]) -> f64 {
        let s: Vec<f64> = d.iter().map(|s| m.decision(&s.x)).collect();
        log_loss(&s, d)
    }

    #[test]
    fn zero_rounds_is_base_rate() {
        let d = data(50, 1);
        let m = train_gbt(&d, &GbtConfig { n_rounds: 0, ..Default::default() }, 0).unwrap();
        let rate = d.iter().filter(|s| s.label).count() as f64 / 50.0;
        assert!((m.predict_proba(&[0.3, 0.3]) - rate).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_zero_rounds() {
        let d = data(50, 2);
        let a = train_gbt(&d, &GbtConfig { learning_rate: 0.0, ..Default::default() }, 0).unwrap();
        let b = train_gbt(&d, &GbtConfig { n_rounds: 0, ..Default::default() }, 0).unwrap();
        assert_eq!(a.predict_proba(&[0.9, -0.1]), b.predict_proba(&[0.9, -0.1]));
    }

    #[test]
    fn one_stump_reduces_loss() {
        let d: Vec<BinarySample> = (0..40)
            .map(|i| BinarySample {
                player_id: "p".into(),
                anchor_date: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
                x: vec![i as f64],
                label: i >= 25,
            })
            .collect();
        let base = train_gbt(&d, &GbtConfig { n_rounds: 0, ..Default::default() }, 0).unwrap();
        let one = train_gbt(&d, &GbtConfig { n_rounds: 1, max_depth: 1, learning_rate: 1.0, ..Default::default() }, 0).unwrap();
        assert!(train_loss(&one, &d) < train_loss(&base, &d));
    }

    #[test]
    fn training_loss_never_increases() {
        let d = data(300, 3);
        let m = train_gbt(&d, &GbtConfig { n_rounds: 40, ..Default::default() }, 4).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=m.trees.len() {
            let partial = Gbt { trees: m.trees[..k].to_vec(), ..m.clone() };
            let l = train_loss(&partial, &d);
            assert!(l <= prev + 1e-12, "round {k}: {l} > {prev}");
            prev = l;
        }
        assert!(m.importance[0] > m.importance[1]);
    }
}
