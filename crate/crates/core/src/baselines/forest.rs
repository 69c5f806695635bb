use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow, Criterion, GrowParams, Tree};
use crate::cohort::BinarySample;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means the square root of the count.
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 5,
            features_per_split: None,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n_trees == 0 {
            errs.push("forest n_trees must be at least 1".into());
        }
        if self.min_leaf == 0 {
            errs.push("forest min_leaf must be at least 1".into());
        }
        if self.features_per_split == Some(0) {
            errs.push("forest features_per_split must be at least 1".into());
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    /// Impurity decrease per feature, normalized to sum to 1 (all zero if no
    /// tree split).
    pub importance: Vec<f64>,
}

impl RandomForest {
    /// Mean of the trees' leaf positive fractions.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

/// SplitMix64 finalizer, used to derive independent per-tree seeds.
pub(crate) fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Bagged Gini trees. Tree `i` draws all of its randomness from
/// `derive_seed(seed, i)`, so trees can be grown in any order.
pub fn train_random_forest(samples: &[BinarySample], cfg: &ForestConfig, seed: u64) -> Result<RandomForest> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    if samples.is_empty() {
        return Err(Error::Training("random forest needs at least one sample".into()));
    }
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.x.as_slice()).collect();
    let y: Vec<f64> = samples.iter().map(|s| if s.label { 1.0 } else { 0.0 }).collect();
    let ones = vec![1.0; samples.len()];
    let n_features = rows[0].len();
    let params = GrowParams {
        max_depth: cfg.max_depth,
        min_leaf: cfg.min_leaf,
        features_per_split: Some(
            cfg.features_per_split
                .unwrap_or_else(|| ((n_features as f64).sqrt().round() as usize).max(1)),
        ),
        criterion: Criterion::Gini,
    };
    let n = samples.len();
    let mut importance = vec![0.0; n_features];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
        let idx: Vec<usize> = if cfg.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        let grown = grow(&rows, &y, &ones, idx, params, &mut rng);
        for (acc, v) in importance.iter_mut().zip(&grown.importance) {
            *acc += v;
        }
        trees.push(grown.tree);
    }
    let total: f64 = importance.iter().sum();
    if total > 0.0 {
        importance.iter_mut().for_each(|v| *v /= total);
    }
    Ok(RandomForest { trees, importance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::tree::Node;
    use chrono::NaiveDate;

    fn data(n: usize, seed: u64) -> Vec<BinarySample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let label = rng.random::<f64>() < if x[0] > 0.0 { 0.8 } else { 0.2 };
                BinarySample {
                    player_id: "p".into(),
                    anchor_date: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
                    x,
                    label,
                }
            })
            .collect()
    }

    #[test]
    fn single_tree_without_bootstrap_is_plain_cart() {
        let d = data(80, 1);
        let cfg = ForestConfig { n_trees: 1, bootstrap: false, features_per_split: Some(3), max_depth: 4, min_leaf: 2 };
        let f = train_random_forest(&d, &cfg, 5).unwrap();
        let rows: Vec<&[f64]> = d.iter().map(|s| s.x.as_slice()).collect();
        let y: Vec<f64> = d.iter().map(|s| s.label as u8 as f64).collect();
        let params = GrowParams { max_depth: 4, min_leaf: 2, features_per_split: None, criterion: Criterion::Gini };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cart = grow(&rows, &y, &vec![1.0; 80], (0..80).collect(), params, &mut rng);
        assert_eq!(f.trees[0], cart.tree);
    }

    #[test]
    fn duplicated_training_set_gives_identical_model() {
        let d = data(60, 2);
        let cfg = ForestConfig { n_trees: 10, ..Default::default() };
        assert_eq!(train_random_forest(&d, &cfg, 3).unwrap(), train_random_forest(&d.clone(), &cfg, 3).unwrap());
    }

    #[test]
    fn informative_feature_dominates_importance() {
        let d = data(400, 4);
        let f = train_random_forest(&d, &ForestConfig { n_trees: 30, ..Default::default() }, 1).unwrap();
        assert!((f.importance.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(f.importance[0] > f.importance[1] && f.importance[0] > f.importance[2]);
        assert!(f.trees.iter().all(|t| !matches!(t.nodes[0], Node::Leaf { .. })));
    }

    #[test]
    fn variance_across_seeds_shrinks_with_more_trees() {
        let d = data(60, 7);
        let probe = [0.05, -0.3, 0.4];
        let spread = |n_trees: usize| {
            let p: Vec<f64> = (0..40)
                .map(|s| {
                    let cfg = ForestConfig { n_trees, max_depth: 6, min_leaf: 1, ..Default::default() };
                    train_random_forest(&d, &cfg, s).unwrap().predict_proba(&probe)
                })
                .collect();
            let m = p.iter().sum::<f64>() / p.len() as f64;
            p.iter().map(|v| (v - m).powi(2)).sum::<f64>() / p.len() as f64
        };
        let (v1, v10, v100) = (spread(1), spread(10), spread(100));
        assert!(v1 > v10 && v10 > v100, "{v1} {v10} {v100}");
    }
}
