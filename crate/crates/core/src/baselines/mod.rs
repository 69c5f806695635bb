//! Binary next-k-day classifiers used as reference points for the survival
//! model, plus the scorer and search procedures used to tune them.

mod forest;
mod gbt;
mod logreg;
mod select;
pub mod tree;

pub use forest::{train_random_forest, ForestConfig, RandomForest};
pub use gbt::{log_loss, train_gbt, Gbt, GbtConfig};
pub use logreg::{train_logreg, LogRegConfig, LogisticRegression};
pub use select::{
    greedy_forward_select, grid_search, rfe, window_sweep, GridResult, GridSpec, LeaderboardRow, Rfe, Selection,
    SweepOptions, WindowRow, DEFAULT_WINDOWS, write_window_csv,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{chronological_split, oversample_minority, BinarySample, ScalerStats};
use crate::metrics::{binary_metrics, BinaryMetrics};
use crate::{Error, Result};

/// Probability cut-off for the confusion counts.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logreg,
    RandomForest,
    Gbt,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Logreg, Family::RandomForest, Family::Gbt];

    pub fn name(self) -> &'static str {
        match self {
            Family::Logreg => "logreg",
            Family::RandomForest => "random_forest",
            Family::Gbt => "gbt",
        }
    }

    pub fn default_config(self) -> ModelConfig {
        match self {
            Family::Logreg => ModelConfig::Logreg(LogRegConfig::default()),
            Family::RandomForest => ModelConfig::RandomForest(ForestConfig::default()),
            Family::Gbt => ModelConfig::Gbt(GbtConfig::default()),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Family> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model family {s:?} (expected logreg, random_forest or gbt)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelConfig {
    Logreg(LogRegConfig),
    RandomForest(ForestConfig),
    Gbt(GbtConfig),
}

impl ModelConfig {
    pub fn family(&self) -> Family {
        match self {
            ModelConfig::Logreg(_) => Family::Logreg,
            ModelConfig::RandomForest(_) => Family::RandomForest,
            ModelConfig::Gbt(_) => Family::Gbt,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        match self {
            ModelConfig::Logreg(c) => c.validate(),
            ModelConfig::RandomForest(c) => c.validate(),
            ModelConfig::Gbt(c) => c.validate(),
        }
    }

    /// Hyperparameters as `(name, value)` pairs in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<usize>| v.map_or_else(|| "auto".to_string(), |v| v.to_string());
        match self {
            ModelConfig::Logreg(c) => vec![
                ("l2", c.l2.to_string()),
                ("learning_rate", c.learning_rate.to_string()),
                ("epochs", c.epochs.to_string()),
            ],
            ModelConfig::RandomForest(c) => vec![
                ("n_trees", c.n_trees.to_string()),
                ("max_depth", c.max_depth.to_string()),
                ("min_leaf", c.min_leaf.to_string()),
                ("features_per_split", opt(c.features_per_split)),
                ("bootstrap", c.bootstrap.to_string()),
            ],
            ModelConfig::Gbt(c) => vec![
                ("n_rounds", c.n_rounds.to_string()),
                ("learning_rate", c.learning_rate.to_string()),
                ("max_depth", c.max_depth.to_string()),
                ("min_leaf", c.min_leaf.to_string()),
                ("lambda", c.lambda.to_string()),
                ("features_per_split", opt(c.features_per_split)),
            ],
        }
    }

    /// Stable text form used as the last tie-break between configs.
    pub fn key(&self) -> String {
        let mut s = self.family().name().to_string();
        for (k, v) in self.params() {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Model {
    Logreg(LogisticRegression),
    RandomForest(RandomForest),
    Gbt(Gbt),
}

impl Model {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        match self {
            Model::Logreg(m) => m.predict_proba(x),
            Model::RandomForest(m) => m.predict_proba(x),
            Model::Gbt(m) => m.predict_proba(x),
        }
    }

    /// Impurity importance for trees, absolute weight for logistic
    /// regression.
    pub fn importance(&self) -> Vec<f64> {
        match self {
            Model::Logreg(m) => m.importance(),
            Model::RandomForest(m) => m.importance.clone(),
            Model::Gbt(m) => m.importance.clone(),
        }
    }
}

pub fn fit(cfg: &ModelConfig, samples: &[BinarySample], seed: u64) -> Result<Model> {
    Ok(match cfg {
        ModelConfig::Logreg(c) => Model::Logreg(train_logreg(samples, c)?),
        ModelConfig::RandomForest(c) => Model::RandomForest(train_random_forest(samples, c, seed)?),
        ModelConfig::Gbt(c) => Model::Gbt(train_gbt(samples, c, seed)?),
    })
}

/// Weights of the model-selection score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerWeights {
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub auc: f64,
}

impl Default for ScorerWeights {
    fn default() -> Self {
        ScorerWeights {
            f1: 0.4,
            recall: 0.3,
            precision: 0.15,
            auc: 0.15,
        }
    }
}

impl ScorerWeights {
    pub fn validate(&self) -> Vec<String> {
        let w = [self.f1, self.recall, self.precision, self.auc];
        let mut errs = Vec::new();
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            errs.push(format!("scorer weights must be finite and >= 0, got {w:?}"));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            errs.push(format!("scorer weights must sum to 1, got {sum}"));
        }
        errs
    }
}

/// Weighted sum of F1, recall, precision and AUC; undefined metrics count
/// as 0.
pub fn weighted_score(m: &BinaryMetrics, w: &ScorerWeights) -> f64 {
    let v = |x: Option<f64>| x.unwrap_or(0.0);
    w.f1 * v(m.f1) + w.recall * v(m.recall) + w.precision * v(m.precision) + w.auc * v(m.auc)
}

/// Training and validation rows for model selection: scaled with training
/// statistics, with the training positives oversampled.
#[derive(Clone, Debug)]
pub struct Holdout {
    pub train: Vec<BinarySample>,
    pub valid: Vec<BinarySample>,
}

impl Holdout {
    /// Chronological split; `train_fraction` of anchors go to training.
    pub fn new(samples: &[BinarySample], train_fraction: f64, seed: u64) -> Result<Holdout> {
        let (train, valid) = chronological_split(samples.to_vec(), train_fraction)?;
        let scaler = ScalerStats::fit(train.iter().map(|s| s.x.as_slice()))?;
        Ok(Holdout {
            train: oversample_minority(scaler.apply_binary(&train)?, seed),
            valid: scaler.apply_binary(&valid)?,
        })
    }

    pub fn n_features(&self) -> usize {
        self.train.first().map_or(0, |s| s.x.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metrics: BinaryMetrics,
    pub score: f64,
}

fn project(samples: &[BinarySample], features: &[usize]) -> Vec<BinarySample> {
    samples
        .iter()
        .map(|s| BinarySample {
            x: features.iter().map(|&f| s.x[f]).collect(),
            ..s.clone()
        })
        .collect()
}

/// Fits on `holdout.train` restricted to `features` and scores the
/// validation rows.
pub fn evaluate(
    cfg: &ModelConfig,
    holdout: &Holdout,
    features: &[usize],
    weights: &ScorerWeights,
    seed: u64,
) -> Result<Evaluation> {
    let train = project(&holdout.train, features);
    let valid = project(&holdout.valid, features);
    let model = fit(cfg, &train, seed)?;
    let probas: Vec<f64> = valid.iter().map(|s| model.predict_proba(&s.x)).collect();
    let labels: Vec<bool> = valid.iter().map(|s| s.label).collect();
    let metrics = binary_metrics(&probas, &labels, DECISION_THRESHOLD)?;
    Ok(Evaluation {
        score: weighted_score(&metrics, weights),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weighted_score() {
        let m = BinaryMetrics {
            f1: Some(0.5),
            recall: Some(0.4),
            precision: Some(1.0),
            auc: Some(0.8),
            ..Default::default()
        };
        assert!((weighted_score(&m, &ScorerWeights::default()) - 0.59).abs() < 1e-12);
        let ones = BinaryMetrics { f1: Some(1.0), recall: Some(1.0), precision: Some(1.0), auc: Some(1.0), ..m };
        assert!((weighted_score(&ones, &ScorerWeights::default()) - 1.0).abs() < 1e-12);
        let f1_only = ScorerWeights { f1: 1.0, recall: 0.0, precision: 0.0, auc: 0.0 };
        assert_eq!(weighted_score(&m, &f1_only), 0.5);
    }

    #[test]
    fn weights_must_sum_to_one() {
        assert!(ScorerWeights::default().validate().is_empty());
        let bad = ScorerWeights { f1: 0.5, recall: 0.5, precision: 0.5, auc: -0.5 };
        assert_eq!(bad.validate().len(), 1);
    }

    #[test]
    fn model_config_json_is_tagged() {
        let c = ModelConfig::RandomForest(ForestConfig { n_trees: 7, ..Default::default() });
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"family\":\"random_forest\""));
        assert_eq!(serde_json::from_str::<ModelConfig>(&s).unwrap(), c);
        assert_eq!("gbt".parse::<Family>().unwrap(), Family::Gbt);
        assert!("xgb".parse::<Family>().is_err());
    }
}
