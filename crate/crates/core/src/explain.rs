//! Kernel Shapley attributions of the horizon risk score.
//!
//! Features outside a coalition are marginalised by substituting background
//! rows and averaging. Up to [`EXACT_MAX_FEATURES`] features every coalition
//! is enumerated and the classic Shapley formula applied; beyond that,
//! coalitions are drawn from the Shapley kernel in complementary pairs and the
//! values solved by least squares under the efficiency constraint.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deephit::Checkpoint;
use crate::features::trailing_means;
use crate::panel::FeaturePanel;
use crate::{Error, Result};

/// Largest feature count explained by full enumeration.
pub const EXACT_MAX_FEATURES: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapConfig {
    /// Training rows drawn as the marginalisation background.
    pub background_size: usize,
    /// Sampled coalitions (rounded up to an even number) when enumeration is
    /// too large.
    pub n_coalitions: usize,
    pub seed: u64,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig {
            background_size: 100,
            n_coalitions: 1024,
            seed: 41,
        }
    }
}

impl ShapConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.background_size == 0 {
            errs.push("shap.background_size must be >= 1".to_string());
        }
        if self.n_coalitions < 2 {
            errs.push("shap.n_coalitions must be >= 2".to_string());
        }
        errs
    }
}

/// Shapley values of one prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapValues {
    /// Mean score over the background.
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub prediction: f64,
}

impl ShapValues {
    /// `prediction - (base_value + Σ phi)`.
    pub fn residual(&self) -> f64 {
        self.prediction - self.base_value - self.phi.iter().sum::<f64>()
    }
}

/// Mean of `f` with features in `mask` taken from `x` and the rest from
/// each background row.
fn coalition_value<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], background: &[Vec<f64>], mask: &[bool]) -> f64 {
    let mut z = vec![0.0; x.len()];
    let total: f64 = background
        .iter()
        .map(|b| {
            for j in 0..x.len() {
                z[j] = if mask[j] { x[j] } else { b[j] };
            }
            f(&z)
        })
        .sum();
    total / background.len() as f64
}

fn check_inputs(x: &[f64], background: &[Vec<f64>]) -> Result<()> {
    if background.is_empty() {
        return Err(Error::Data("SHAP background is empty".into()));
    }
    if let Some(b) = background.iter().find(|b| b.len() != x.len()) {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// Exact enumeration for small `x`, paired kernel sampling otherwise.
pub fn kernel_shap<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    background: &[Vec<f64>],
    n_coalitions: usize,
    seed: u64,
) -> Result<ShapValues> {
    if x.len() <= EXACT_MAX_FEATURES {
        exact_shap(f, x, background)
    } else {
        sampled_shap(f, x, background, n_coalitions, seed)
    }
}

/// Shapley values from all `2^M` coalitions.
pub fn exact_shap<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], background: &[Vec<f64>]) -> Result<ShapValues> {
    check_inputs(x, background)?;
    let m = x.len();
    if m > 20 {
        return Err(Error::Config(format!("exact enumeration over {m} features is too large")));
    }
    let n_masks = 1usize << m;
    let values: Vec<f64> = (0..n_masks)
        .map(|bits| {
            let mask: Vec<bool> = (0..m).map(|j| bits >> j & 1 == 1).collect();
            coalition_value(&f, x, background, &mask)
        })
        .collect();
    // |S|! (M - |S| - 1)! / M!
    let weight: Vec<f64> = (0..m)
        .map(|s| {
            let mut w = 1.0 / m as f64;
            for k in 1..=s {
                w *= k as f64 / (m - k) as f64;
            }
            w
        })
        .collect();
    let mut phi = vec![0.0; m];
    for (bits, v) in values.iter().enumerate() {
        let size = bits.count_ones() as usize;
        for (j, p) in phi.iter_mut().enumerate() {
            if bits >> j & 1 == 0 {
                *p += weight[size] * (values[bits | 1 << j] - v);
            }
        }
    }
    Ok(ShapValues {
        base_value: values[0],
        phi,
        prediction: values[n_masks - 1],
    })
}

/// Kernel SHAP with coalitions sampled in complementary pairs.
///
/// Sizes are drawn with probability proportional to the Shapley kernel mass
/// `(M - 1) / (s (M - s))`, so the regression itself is unweighted. The last
/// feature is eliminated through the efficiency constraint, which makes local
/// accuracy exact regardless of sampling noise.
pub fn sampled_shap<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    background: &[Vec<f64>],
    n_coalitions: usize,
    seed: u64,
) -> Result<ShapValues> {
    check_inputs(x, background)?;
    let m = x.len();
    let base_value = coalition_value(&f, x, background, &vec![false; m]);
    let prediction = coalition_value(&f, x, background, &vec![true; m]);
    let delta = prediction - base_value;
    if m == 1 {
        return Ok(ShapValues {
            base_value,
            phi: vec![delta],
            prediction,
        });
    }

    let size_mass: Vec<f64> = (1..m).map(|s| 1.0 / (s * (m - s)) as f64).collect();
    let total_mass: f64 = size_mass.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pairs = n_coalitions.div_ceil(2).max(1);
    let k = m - 1;
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for _ in 0..n_pairs {
        let mut u = rng.random::<f64>() * total_mass;
        let mut size = m - 1;
        for (i, w) in size_mass.iter().enumerate() {
            if u < *w {
                size = i + 1;
                break;
            }
            u -= w;
        }
        let chosen: BTreeSet<usize> = index::sample(&mut rng, m, size).into_iter().collect();
        let mask: Vec<bool> = (0..m).map(|j| chosen.contains(&j)).collect();
        let complement: Vec<bool> = mask.iter().map(|b| !b).collect();
        for mask in [mask, complement] {
            let y = coalition_value(&f, x, background, &mask) - base_value;
            let last = if mask[m - 1] { 1.0 } else { 0.0 };
            let d: Vec<f64> = (0..k).map(|j| if mask[j] { 1.0 } else { 0.0 } - last).collect();
            let target = y - last * delta;
            for a in 0..k {
                if d[a] == 0.0 {
                    continue;
                }
                rhs[a] += d[a] * target;
                for b in 0..k {
                    gram[(a, b)] += d[a] * d[b];
                }
            }
        }
    }
    let solution = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => gram
            .svd(true, true)
            .solve(&rhs, 1e-10)
            .map_err(|e| Error::Training(format!("SHAP regression failed: {e}")))?,
    };
    let mut phi: Vec<f64> = solution.iter().copied().collect();
    phi.push(delta - phi.iter().sum::<f64>());
    Ok(ShapValues {
        base_value,
        phi,
        prediction,
    })
}

/// Uniform draw without replacement of up to `size` rows.
pub fn background_rows(rows: &[Vec<f64>], size: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, rows.len(), size.min(rows.len())).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| rows[i].clone()).collect()
}

/// Attribution of one player-day's risk score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub player_id: String,
    pub date: NaiveDate,
    pub feature_names: Vec<String>,
    /// Unscaled look-back means the model saw (NaN serialises as null).
    pub values: Vec<Option<f64>>,
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub prediction: f64,
}

impl Attribution {
    /// The `k` features with the largest `|phi|`, ties broken by name.
    pub fn top_k(&self, k: usize) -> Vec<(String, f64)> {
        let mut pairs: Vec<(String, f64)> = self.feature_names.iter().cloned().zip(self.phi.iter().copied()).collect();
        pairs.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
        pairs.truncate(k);
        pairs
    }
}

/// Mean `|phi|` of one feature over a season.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_phi: f64,
}

/// Raw look-back means for one day, NaN where unobserved.
fn lookback_row(panel: &FeaturePanel, player: &str, day: usize, lookback: usize) -> Result<Vec<f64>> {
    let s = panel
        .player(player)
        .ok_or_else(|| Error::Data(format!("unknown player {player:?}")))?;
    Ok(trailing_means(s, panel.n_features(), day, lookback)
        .into_iter()
        .map(|v| v.unwrap_or(f64::NAN))
        .collect())
}

fn attribute(
    checkpoint: &Checkpoint,
    background: &[Vec<f64>],
    cfg: &ShapConfig,
    player: &str,
    date: NaiveDate,
    raw: Vec<f64>,
) -> Result<Attribution> {
    let x = checkpoint.scaler.transform(&raw)?;
    let model = &checkpoint.model;
    let score = |z: &[f64]| model.score(z).unwrap_or(f64::NAN);
    let v = kernel_shap(score, &x, background, cfg.n_coalitions, cfg.seed)?;
    Ok(Attribution {
        player_id: player.to_string(),
        date,
        feature_names: checkpoint.feature_names.clone(),
        values: raw.into_iter().map(|v| (!v.is_nan()).then_some(v)).collect(),
        base_value: v.base_value,
        phi: v.phi,
        prediction: v.prediction,
    })
}

/// Explains the risk score for `player` on `date`. `background` holds
/// standardized rows.
pub fn day_explanation(
    checkpoint: &Checkpoint,
    panel: &FeaturePanel,
    background: &[Vec<f64>],
    cfg: &ShapConfig,
    player: &str,
    date: NaiveDate,
    lookback: usize,
) -> Result<Attribution> {
    checkpoint.check_features(panel.feature_names())?;
    let s = panel
        .player(player)
        .ok_or_else(|| Error::Data(format!("unknown player {player:?}")))?;
    let day = s
        .day_index(date)
        .ok_or_else(|| Error::Data(format!("{player} has no day {date}")))?;
    if day + 1 < lookback {
        return Err(Error::Data(format!("{date} is inside {player}'s first {lookback}-day window")));
    }
    let raw = lookback_row(panel, player, day, lookback)?;
    attribute(checkpoint, background, cfg, player, date, raw)
}

/// Attributions for every `stride`-th day with a full look-back window.
pub fn season_attributions(
    checkpoint: &Checkpoint,
    panel: &FeaturePanel,
    background: &[Vec<f64>],
    cfg: &ShapConfig,
    player: &str,
    lookback: usize,
    stride: usize,
) -> Result<Vec<Attribution>> {
    checkpoint.check_features(panel.feature_names())?;
    let s = panel
        .player(player)
        .ok_or_else(|| Error::Data(format!("unknown player {player:?}")))?;
    (lookback.saturating_sub(1)..s.n_days())
        .step_by(stride.max(1))
        .map(|d| attribute(checkpoint, background, cfg, player, s.date(d), lookback_row(panel, player, d, lookback)?))
        .collect()
}

/// Mean `|phi|` per feature, descending, ties broken by feature name.
pub fn season_importance(attributions: &[Attribution]) -> Vec<FeatureImportance> {
    let Some(first) = attributions.first() else {
        return Vec::new();
    };
    let n = attributions.len() as f64;
    let mut out: Vec<FeatureImportance> = first
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| FeatureImportance {
            feature: name.clone(),
            mean_abs_phi: attributions.iter().map(|a| a.phi[j].abs()).sum::<f64>() / n,
        })
        .collect();
    out.sort_by(|a, b| b.mean_abs_phi.total_cmp(&a.mean_abs_phi).then_with(|| a.feature.cmp(&b.feature)));
    out
}
