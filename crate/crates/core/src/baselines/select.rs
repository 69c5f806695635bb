use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{evaluate, ForestConfig, GbtConfig, Holdout, LogRegConfig, ModelConfig, ScorerWeights};
use crate::cohort::{build_binary_samples, CohortConfig};
use crate::ingest::InjuryEvent;
use crate::metrics::BinaryMetrics;
use crate::panel::FeaturePanel;
use crate::{Error, Result};

/// Candidate values per hyperparameter; the grid is their product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    Logreg {
        l2: Vec<f64>,
        learning_rate: Vec<f64>,
        epochs: Vec<usize>,
    },
    RandomForest {
        n_trees: Vec<usize>,
        max_depth: Vec<usize>,
        min_leaf: Vec<usize>,
        features_per_split: Vec<Option<usize>>,
    },
    Gbt {
        n_rounds: Vec<usize>,
        learning_rate: Vec<f64>,
        max_depth: Vec<usize>,
        min_leaf: Vec<usize>,
        lambda: Vec<f64>,
    },
}

impl GridSpec {
    /// Small default grids. These are starting points, not tuned values.
    pub fn default_for(family: super::Family) -> GridSpec {
        match family {
            super::Family::Logreg => GridSpec::Logreg {
                l2: vec![0.001, 0.01, 0.1],
                learning_rate: vec![0.5],
                epochs: vec![300],
            },
            super::Family::RandomForest => GridSpec::RandomForest {
                n_trees: vec![100],
                max_depth: vec![4, 6, 8],
                min_leaf: vec![5, 20],
                features_per_split: vec![None],
            },
            super::Family::Gbt => GridSpec::Gbt {
                n_rounds: vec![50, 100],
                learning_rate: vec![0.05, 0.1],
                max_depth: vec![2, 3],
                min_leaf: vec![5],
                lambda: vec![1.0],
            },
        }
    }

    pub fn family(&self) -> super::Family {
        match self {
            GridSpec::Logreg { .. } => super::Family::Logreg,
            GridSpec::RandomForest { .. } => super::Family::RandomForest,
            GridSpec::Gbt { .. } => super::Family::Gbt,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let lens: Vec<(&str, usize)> = match self {
            GridSpec::Logreg { l2, learning_rate, epochs } => {
                vec![("l2", l2.len()), ("learning_rate", learning_rate.len()), ("epochs", epochs.len())]
            }
            GridSpec::RandomForest { n_trees, max_depth, min_leaf, features_per_split } => vec![
                ("n_trees", n_trees.len()),
                ("max_depth", max_depth.len()),
                ("min_leaf", min_leaf.len()),
                ("features_per_split", features_per_split.len()),
            ],
            GridSpec::Gbt { n_rounds, learning_rate, max_depth, min_leaf, lambda } => vec![
                ("n_rounds", n_rounds.len()),
                ("learning_rate", learning_rate.len()),
                ("max_depth", max_depth.len()),
                ("min_leaf", min_leaf.len()),
                ("lambda", lambda.len()),
            ],
        };
        let mut errs: Vec<String> = lens
            .into_iter()
            .filter(|(_, n)| *n == 0)
            .map(|(k, _)| format!("grid list {k} is empty"))
            .collect();
        if errs.is_empty() {
            for c in self.configs() {
                errs.extend(c.validate());
            }
            errs.dedup();
        }
        errs
    }

    /// Every combination, in nested-loop order.
    pub fn configs(&self) -> Vec<ModelConfig> {
        let mut out = Vec::new();
        match self {
            GridSpec::Logreg { l2, learning_rate, epochs } => {
                for &l2 in l2 {
                    for &learning_rate in learning_rate {
                        for &epochs in epochs {
                            out.push(ModelConfig::Logreg(LogRegConfig { l2, learning_rate, epochs }));
                        }
                    }
                }
            }
            GridSpec::RandomForest { n_trees, max_depth, min_leaf, features_per_split } => {
                for &n_trees in n_trees {
                    for &max_depth in max_depth {
                        for &min_leaf in min_leaf {
                            for &features_per_split in features_per_split {
                                out.push(ModelConfig::RandomForest(ForestConfig {
                                    n_trees,
                                    max_depth,
                                    min_leaf,
                                    features_per_split,
                                    bootstrap: true,
                                }));
                            }
                        }
                    }
                }
            }
            GridSpec::Gbt { n_rounds, learning_rate, max_depth, min_leaf, lambda } => {
                for &n_rounds in n_rounds {
                    for &learning_rate in learning_rate {
                        for &max_depth in max_depth {
                            for &min_leaf in min_leaf {
                                for &lambda in lambda {
                                    out.push(ModelConfig::Gbt(GbtConfig {
                                        n_rounds,
                                        learning_rate,
                                        max_depth,
                                        min_leaf,
                                        lambda,
                                        features_per_split: None,
                                    }));
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub config: ModelConfig,
    pub n_features: usize,
    pub metrics: BinaryMetrics,
    pub score: f64,
}

/// Higher score, then higher F1, then fewer features, then config key.
fn rank(a: &LeaderboardRow, b: &LeaderboardRow) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| b.metrics.f1.unwrap_or(0.0).total_cmp(&a.metrics.f1.unwrap_or(0.0)))
        .then_with(|| a.n_features.cmp(&b.n_features))
        .then_with(|| a.config.key().cmp(&b.config.key()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: ModelConfig,
    /// All cells, best first.
    pub leaderboard: Vec<LeaderboardRow>,
}

impl GridResult {
    /// Config columns, then the four metrics and the weighted score.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let param_names: Vec<&str> = self.best.params().into_iter().map(|(k, _)| k).collect();
        let mut header = vec!["rank", "family"];
        header.extend(&param_names);
        header.extend(["n_features", "f1", "precision", "recall", "auc", "weighted_score"]);
        wtr.write_record(&header)?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
        for (i, row) in self.leaderboard.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string(), row.config.family().name().to_string()];
            rec.extend(row.config.params().into_iter().map(|(_, v)| v));
            rec.extend([
                row.n_features.to_string(),
                opt(row.metrics.f1),
                opt(row.metrics.precision),
                opt(row.metrics.recall),
                opt(row.metrics.auc),
                format!("{:.6}", row.score),
            ]);
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Exhaustive search over `grid`, scored on the validation rows.
pub fn grid_search(grid: &GridSpec, holdout: &Holdout, weights: &ScorerWeights, seed: u64) -> Result<GridResult> {
    let mut errs = grid.validate();
    errs.extend(weights.validate());
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    let features: Vec<usize> = (0..holdout.n_features()).collect();
    let mut leaderboard = Vec::new();
    for config in grid.configs() {
        let e = evaluate(&config, holdout, &features, weights, seed)?;
        leaderboard.push(LeaderboardRow {
            config,
            n_features: features.len(),
            metrics: e.metrics,
            score: e.score,
        });
    }
    leaderboard.sort_by(rank);
    Ok(GridResult {
        best: leaderboard[0].config,
        leaderboard,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Feature indices in the order they were added.
    pub features: Vec<usize>,
    /// Validation score after each addition.
    pub scores: Vec<f64>,
}

/// Greedy forward selection. The empty set scores 0; each step adds the
/// feature with the best validation score (lowest index on ties) and the
/// search stops once no addition improves on the current score.
pub fn greedy_forward_select(
    cfg: &ModelConfig,
    holdout: &Holdout,
    weights: &ScorerWeights,
    seed: u64,
) -> Result<Selection> {
    let mut chosen: Vec<usize> = Vec::new();
    let mut scores = Vec::new();
    let mut current = 0.0;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for f in (0..holdout.n_features()).filter(|f| !chosen.contains(f)) {
            let mut trial = chosen.clone();
            trial.push(f);
            let s = evaluate(cfg, holdout, &trial, weights, seed)?.score;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((f, s));
            }
        }
        match best {
            Some((f, s)) if s > current => {
                chosen.push(f);
                scores.push(s);
                current = s;
            }
            _ => break,
        }
    }
    Ok(Selection { features: chosen, scores })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rfe {
    /// Feature indices in elimination order (`n_features - 1` entries).
    pub eliminated: Vec<usize>,
    /// Validation score with all features, then after each elimination.
    pub scores: Vec<f64>,
}

/// Recursive feature elimination, one feature per step: refit on the
/// surviving features and drop the one with the lowest importance (lowest
/// index on ties).
pub fn rfe(cfg: &ModelConfig, holdout: &Holdout, weights: &ScorerWeights, seed: u64) -> Result<Rfe> {
    let mut alive: Vec<usize> = (0..holdout.n_features()).collect();
    let mut eliminated = Vec::new();
    let mut scores = Vec::new();
    loop {
        let train: Vec<_> = holdout
            .train
            .iter()
            .map(|s| crate::cohort::BinarySample {
                x: alive.iter().map(|&f| s.x[f]).collect(),
                ..s.clone()
            })
            .collect();
        scores.push(evaluate(cfg, holdout, &alive, weights, seed)?.score);
        if alive.len() <= 1 {
            break;
        }
        let importance = super::fit(cfg, &train, seed)?.importance();
        let (pos, _) = importance
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
        eliminated.push(alive.remove(pos));
    }
    Ok(Rfe { eliminated, scores })
}

pub const DEFAULT_WINDOWS: [usize; 6] = [1, 3, 5, 7, 10, 14];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub exclusion_days: usize,
    pub train_fraction: f64,
    pub weights: ScorerWeights,
    pub seed: u64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            exclusion_days: 7,
            train_fraction: 0.8,
            weights: ScorerWeights::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub lookback: usize,
    pub horizon: usize,
    pub n_samples: usize,
    pub n_positive: usize,
    pub metrics: Option<BinaryMetrics>,
    pub score: Option<f64>,
    /// Why the metrics are missing, when they are.
    pub note: Option<String>,
}

/// Rebuilds binary samples for every (look-back, horizon) pair and scores a
/// chronological holdout for each. Degenerate combinations produce a row
/// with a note instead of metrics.
pub fn window_sweep(
    cfg: &ModelConfig,
    panel: &FeaturePanel,
    injuries: &[InjuryEvent],
    windows: &[usize],
    opts: &SweepOptions,
) -> Result<Vec<WindowRow>> {
    let mut rows = Vec::new();
    for &lookback in windows {
        for &horizon in windows {
            let cohort = CohortConfig {
                lookback,
                horizon,
                exclusion_days: opts.exclusion_days,
            };
            let samples = build_binary_samples(panel, injuries, &cohort)?;
            let n_positive = samples.iter().filter(|s| s.label).count();
            let mut row = WindowRow {
                lookback,
                horizon,
                n_samples: samples.len(),
                n_positive,
                metrics: None,
                score: None,
                note: None,
            };
            match Holdout::new(&samples, opts.train_fraction, opts.seed) {
                Ok(h) if !h.train.iter().any(|s| s.label) => row.note = Some("no positive training samples".into()),
                Ok(h) if !h.valid.iter().any(|s| s.label) => row.note = Some("no positive validation samples".into()),
                Ok(h) => {
                    let features: Vec<usize> = (0..h.n_features()).collect();
                    let e = evaluate(cfg, &h, &features, &opts.weights, opts.seed)?;
                    row.metrics = Some(e.metrics);
                    row.score = Some(e.score);
                }
                Err(e) => row.note = Some(e.to_string()),
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn write_window_csv<W: Write>(rows: &[WindowRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "lookback", "horizon", "n_samples", "n_positive", "f1", "precision", "recall", "auc", "weighted_score", "note",
    ])?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
    for r in rows {
        let m = r.metrics.unwrap_or_default();
        wtr.write_record([
            r.lookback.to_string(),
            r.horizon.to_string(),
            r.n_samples.to_string(),
            r.n_positive.to_string(),
            opt(r.metrics.and(m.f1)),
            opt(r.metrics.and(m.precision)),
            opt(r.metrics.and(m.recall)),
            opt(r.metrics.and(m.auc)),
            opt(r.score),
            r.note.clone().unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::Family;
    use crate::cohort::BinarySample;
    use chrono::{Days, NaiveDate};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Feature 0 drives the label; the rest are noise.
    fn samples(n: usize, n_features: usize, seed: u64) -> Vec<BinarySample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..n_features).map(|_| rng.random_range(-1.0..1.0)).collect();
                let p = 1.0 / (1.0 + (-(4.0 * x[0] - 2.5)).exp());
                BinarySample {
                    player_id: format!("p{}", i % 4),
                    anchor_date: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + Days::new(i as u64 / 4),
                    x,
                    label: rng.random::<f64>() < p,
                }
            })
            .collect()
    }

    fn logreg() -> ModelConfig {
        ModelConfig::Logreg(LogRegConfig { epochs: 100, ..Default::default() })
    }

    #[test]
    fn single_cell_grid_returns_that_config() {
        let h = Holdout::new(&samples(300, 3, 1), 0.7, 0).unwrap();
        let grid = GridSpec::Logreg { l2: vec![0.1], learning_rate: vec![0.3], epochs: vec![50] };
        let r = grid_search(&grid, &h, &ScorerWeights::default(), 0).unwrap();
        assert_eq!(r.best, grid.configs()[0]);
        assert_eq!(r.leaderboard.len(), 1);
    }

    #[test]
    fn leaderboard_covers_grid_and_ignores_enumeration_order() {
        let h = Holdout::new(&samples(300, 3, 2), 0.7, 0).unwrap();
        let w = ScorerWeights::default();
        let a = GridSpec::Gbt {
            n_rounds: vec![5, 10],
            learning_rate: vec![0.1, 0.3],
            max_depth: vec![1, 2],
            min_leaf: vec![5],
            lambda: vec![1.0],
        };
        let b = GridSpec::Gbt {
            n_rounds: vec![10, 5],
            learning_rate: vec![0.3, 0.1],
            max_depth: vec![2, 1],
            min_leaf: vec![5],
            lambda: vec![1.0],
        };
        let ra = grid_search(&a, &h, &w, 3).unwrap();
        let rb = grid_search(&b, &h, &w, 3).unwrap();
        assert_eq!(ra.leaderboard.len(), 8);
        assert_eq!(ra, rb);
    }

    #[test]
    fn duplicate_cells_score_alike() {
        let h = Holdout::new(&samples(200, 2, 3), 0.7, 0).unwrap();
        let grid = GridSpec::Logreg { l2: vec![0.01, 0.01], learning_rate: vec![0.5], epochs: vec![50] };
        let r = grid_search(&grid, &h, &ScorerWeights::default(), 0).unwrap();
        assert_eq!(r.leaderboard[0].score, r.leaderboard[1].score);
    }

    #[test]
    fn empty_grid_list_is_reported() {
        let grid = GridSpec::Logreg { l2: vec![], learning_rate: vec![0.5], epochs: vec![] };
        assert_eq!(grid.validate().len(), 2);
    }

    #[test]
    fn greedy_picks_informative_feature_first() {
        let h = Holdout::new(&samples(600, 5, 4), 0.7, 0).unwrap();
        let sel = greedy_forward_select(&logreg(), &h, &ScorerWeights::default(), 0).unwrap();
        assert_eq!(sel.features[0], 0);
        assert!(sel.scores.windows(2).all(|w| w[1] > w[0]));
        let again = greedy_forward_select(&logreg(), &h, &ScorerWeights::default(), 0).unwrap();
        assert_eq!(sel, again);
    }

    #[test]
    fn greedy_with_no_positive_validation_rows_selects_nothing() {
        let mut h = Holdout::new(&samples(300, 3, 5), 0.7, 0).unwrap();
        h.valid.iter_mut().for_each(|s| s.label = false);
        // only AUC is undefined, and with zero weight on everything that
        // needs a positive, no feature can beat the empty set
        let w = ScorerWeights { f1: 0.5, recall: 0.5, precision: 0.0, auc: 0.0 };
        let sel = greedy_forward_select(&logreg(), &h, &w, 0).unwrap();
        assert!(sel.features.is_empty());
    }

    #[test]
    fn rfe_drops_noise_before_signal() {
        let h = Holdout::new(&samples(600, 4, 6), 0.7, 0).unwrap();
        let forest = Family::RandomForest.default_config();
        for cfg in [logreg(), forest] {
            let r = rfe(&cfg, &h, &ScorerWeights::default(), 0).unwrap();
            assert_eq!(r.eliminated.len(), 3);
            assert_eq!(r.scores.len(), 4);
            assert!(!r.eliminated.contains(&0), "{cfg:?}: {:?}", r.eliminated);
        }
    }

    #[test]
    fn rfe_single_feature_eliminates_nothing() {
        let h = Holdout::new(&samples(200, 1, 7), 0.7, 0).unwrap();
        let r = rfe(&logreg(), &h, &ScorerWeights::default(), 0).unwrap();
        assert!(r.eliminated.is_empty());
        assert_eq!(r.scores.len(), 1);
    }
}
