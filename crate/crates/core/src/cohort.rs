//! Supervised samples from a feature panel, scaling and leakage-free splits.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::trailing_means;
use crate::ingest::{InjuryEvent, DATE_FORMAT};
use crate::metrics::Fold;
use crate::panel::FeaturePanel;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    /// Days of history averaged into each feature vector (anchor included).
    pub lookback: usize,
    /// Days ahead over which an injury counts as the event.
    pub horizon: usize,
    /// Anchors from an injury day through this many days after it are dropped.
    pub exclusion_days: usize,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            lookback: 21,
            horizon: 7,
            exclusion_days: 7,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookback < 1 || self.horizon < 1 {
            return Err(Error::Config(format!(
                "lookback ({}) and horizon ({}) must be at least 1",
                self.lookback, self.horizon
            )));
        }
        Ok(())
    }
}

/// Common view of samples for splitting.
pub trait Anchored {
    fn player_id(&self) -> &str;
    fn anchor_date(&self) -> NaiveDate;
}

/// A discrete time-to-event sample. Missing features are stored as NaN and
/// become zero after scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalSample {
    pub player_id: String,
    pub anchor_date: NaiveDate,
    pub x: Vec<f64>,
    /// Days from anchor to the injury, or to the end of follow-up when censored.
    pub time_to_event: u32,
    pub event: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinarySample {
    pub player_id: String,
    pub anchor_date: NaiveDate,
    pub x: Vec<f64>,
    pub label: bool,
}

macro_rules! anchored {
    ($t:ty) => {
        impl Anchored for $t {
            fn player_id(&self) -> &str {
                &self.player_id
            }
            fn anchor_date(&self) -> NaiveDate {
                self.anchor_date
            }
        }
    };
}
anchored!(SurvivalSample);
anchored!(BinarySample);

fn injuries_by_player(injuries: &[InjuryEvent]) -> BTreeMap<&str, Vec<NaiveDate>> {
    let mut map: BTreeMap<&str, Vec<NaiveDate>> = BTreeMap::new();
    for e in injuries {
        map.entry(e.player_id.as_str()).or_default().push(e.date);
    }
    for v in map.values_mut() {
        v.sort();
    }
    map
}

fn in_recovery(dates: &[NaiveDate], anchor: NaiveDate, exclusion_days: usize) -> bool {
    dates
        .iter()
        .any(|&inj| anchor >= inj && anchor <= inj + Days::new(exclusion_days as u64))
}

fn nan_filled(v: Vec<Option<f64>>) -> Vec<f64> {
    v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect()
}

/// Builds time-to-event samples.
///
/// For an anchor `t` whose next injury is `k` days later: `k <= horizon`
/// gives an event at `k`. Otherwise the sample is censored at `horizon`, or
/// at the number of remaining observed days if follow-up is shorter. Anchors
/// without `lookback` days of history, on the last observed day, or inside a
/// post-injury exclusion window are skipped.
pub fn build_survival_samples(
    panel: &FeaturePanel,
    injuries: &[InjuryEvent],
    cfg: &CohortConfig,
) -> Result<Vec<SurvivalSample>> {
    cfg.validate()?;
    let by_player = injuries_by_player(injuries);
    let mut out = Vec::new();
    for s in panel.players() {
        let dates = by_player.get(s.player_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        for d in cfg.lookback - 1..s.n_days() {
            let anchor = s.date(d);
            if in_recovery(dates, anchor, cfg.exclusion_days) {
                continue;
            }
            let next = dates.iter().find(|&&inj| inj > anchor).map(|&inj| (inj - anchor).num_days() as usize);
            let remaining = s.n_days() - 1 - d;
            let (time, event) = match next {
                Some(k) if k <= cfg.horizon => (k, true),
                _ if remaining >= cfg.horizon => (cfg.horizon, false),
                _ if remaining >= 1 => (remaining, false),
                _ => continue,
            };
            out.push(SurvivalSample {
                player_id: s.player_id.clone(),
                anchor_date: anchor,
                x: nan_filled(trailing_means(s, panel.n_features(), d, cfg.lookback)),
                time_to_event: time as u32,
                event,
            });
        }
    }
    Ok(out)
}

/// Builds binary samples: `label` is whether an injury falls in
/// `(t, t + horizon]`. Injury-free anchors whose horizon runs past the end
/// of observation are skipped since their label is unknown.
pub fn build_binary_samples(
    panel: &FeaturePanel,
    injuries: &[InjuryEvent],
    cfg: &CohortConfig,
) -> Result<Vec<BinarySample>> {
    cfg.validate()?;
    let by_player = injuries_by_player(injuries);
    let mut out = Vec::new();
    for s in panel.players() {
        let dates = by_player.get(s.player_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        for d in cfg.lookback - 1..s.n_days() {
            let anchor = s.date(d);
            if in_recovery(dates, anchor, cfg.exclusion_days) {
                continue;
            }
            let limit = anchor + Days::new(cfg.horizon as u64);
            let label = dates.iter().any(|&inj| inj > anchor && inj <= limit);
            if !label && s.n_days() - 1 - d < cfg.horizon {
                continue;
            }
            out.push(BinarySample {
                player_id: s.player_id.clone(),
                anchor_date: anchor,
                x: nan_filled(trailing_means(s, panel.n_features(), d, cfg.lookback)),
                label,
            });
        }
    }
    Ok(out)
}

/// Per-feature mean and population SD.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl ScalerStats {
    /// Fits on the given rows, skipping NaN cells.
    pub fn fit<'a, I>(rows: I) -> Result<ScalerStats>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n: Vec<usize> = Vec::new();
        let mut rows_seen = Vec::new();
        for row in rows {
            if sum.is_empty() {
                sum = vec![0.0; row.len()];
                n = vec![0; row.len()];
            }
            if row.len() != sum.len() {
                return Err(Error::DimensionMismatch {
                    expected: sum.len(),
                    actual: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_nan() {
                    sum[j] += v;
                    n[j] += 1;
                }
            }
            rows_seen.push(row);
        }
        let mean: Vec<f64> = sum
            .iter()
            .zip(&n)
            .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        sq.resize(mean.len(), 0.0);
        for row in &rows_seen {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_nan() {
                    sq[j] += (v - mean[j]).powi(2);
                }
            }
        }
        let sd = sq
            .iter()
            .zip(&n)
            .map(|(&s, &c)| if c > 0 { (s / c as f64).sqrt() } else { 0.0 })
            .collect();
        Ok(ScalerStats { mean, sd })
    }

    pub fn fit_samples(samples: &[SurvivalSample]) -> Result<ScalerStats> {
        ScalerStats::fit(samples.iter().map(|s| s.x.as_slice()))
    }

    /// Standardizes a row; NaN and zero-SD features map to 0.
    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                actual: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.sd))
            .map(|(&v, (&m, &sd))| if v.is_nan() || sd <= 0.0 { 0.0 } else { (v - m) / sd })
            .collect())
    }

    pub fn apply_survival(&self, samples: &[SurvivalSample]) -> Result<Vec<SurvivalSample>> {
        samples
            .iter()
            .map(|s| {
                Ok(SurvivalSample {
                    x: self.transform(&s.x)?,
                    ..s.clone()
                })
            })
            .collect()
    }

    pub fn apply_binary(&self, samples: &[BinarySample]) -> Result<Vec<BinarySample>> {
        samples
            .iter()
            .map(|s| {
                Ok(BinarySample {
                    x: self.transform(&s.x)?,
                    ..s.clone()
                })
            })
            .collect()
    }
}

/// Splits by anchor date: the first `ceil(fraction * n)` samples in date
/// order go to training, extended to cover every sample sharing the boundary
/// date. Errors when either side would be empty.
pub fn chronological_split<T: Anchored>(mut samples: Vec<T>, fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    if samples.is_empty() {
        return Err(Error::Config("cannot split an empty sample set".into()));
    }
    samples.sort_by_key(|s| s.anchor_date());
    let target = ((fraction * samples.len() as f64).ceil() as usize).clamp(1, samples.len());
    let boundary = samples[target - 1].anchor_date();
    let cut = samples.partition_point(|s| s.anchor_date() <= boundary);
    if cut == samples.len() {
        return Err(Error::Config(format!(
            "chronological split leaves no test samples after {boundary}"
        )));
    }
    let test = samples.split_off(cut);
    Ok((samples, test))
}

/// One fold per distinct player (sorted by id); each holds out that
/// player's samples.
pub fn lopo_folds<T: Anchored + Clone>(samples: &[T]) -> Vec<Fold<T>> {
    let players: BTreeSet<&str> = samples.iter().map(|s| s.player_id()).collect();
    players
        .into_iter()
        .map(|p| {
            let (test, train): (Vec<T>, Vec<T>) = samples.iter().cloned().partition(|s| s.player_id() == p);
            Fold {
                held_out: p.to_string(),
                train,
                test,
            }
        })
        .collect()
}

/// Resamples positive rows with replacement until both classes have equal
/// counts. Inputs with no positives, or with positives already at least as
/// frequent, come back unchanged.
pub fn oversample_minority(train: Vec<BinarySample>, seed: u64) -> Vec<BinarySample> {
    let positives: Vec<usize> = train.iter().enumerate().filter(|(_, s)| s.label).map(|(i, _)| i).collect();
    let negatives = train.len() - positives.len();
    if positives.is_empty() {
        log::warn!("no positive samples to oversample");
        return train;
    }
    if positives.len() >= negatives {
        return train;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra: Vec<BinarySample> = (0..negatives - positives.len())
        .map(|_| train[positives[rng.random_range(0..positives.len())]].clone())
        .collect();
    let mut out = train;
    out.extend(extra);
    out
}

fn write_rows<W: Write>(
    writer: W,
    feature_names: &[String],
    label_cols: &[&str],
    rows: impl Iterator<Item = (String, NaiveDate, Vec<String>, Vec<f64>)>,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["player_id".to_string(), "anchor_date".to_string()];
    header.extend(label_cols.iter().map(|s| s.to_string()));
    header.extend(feature_names.iter().cloned());
    wtr.write_record(&header)?;
    for (player, date, labels, x) in rows {
        let mut rec = vec![player, date.format(DATE_FORMAT).to_string()];
        rec.extend(labels);
        rec.extend(x.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_survival_csv<W: Write>(samples: &[SurvivalSample], feature_names: &[String], writer: W) -> Result<()> {
    write_rows(
        writer,
        feature_names,
        &["time_to_event", "event"],
        samples.iter().map(|s| {
            (
                s.player_id.clone(),
                s.anchor_date,
                vec![s.time_to_event.to_string(), u8::from(s.event).to_string()],
                s.x.clone(),
            )
        }),
    )
}

pub fn write_binary_csv<W: Write>(samples: &[BinarySample], feature_names: &[String], writer: W) -> Result<()> {
    write_rows(
        writer,
        feature_names,
        &["label"],
        samples
            .iter()
            .map(|s| (s.player_id.clone(), s.anchor_date, vec![u8::from(s.label).to_string()], s.x.clone())),
    )
}
