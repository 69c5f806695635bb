//! Synthetic cohorts with a known injury hazard.
//!
//! Each generated field follows a latent standard-normal path per player: a
//! fixed player offset plus a stationary AR(1) component. Raw values are
//! `mean + sd * z`, clipped to a physiological range. The daily injury
//! probability is `logistic(logit(base_rate) + Σ w_f z_f)` where `z_f` is
//! recomputed from the stored raw value, so the generator and
//! [`oracle_risk`] share one code path.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ingest::{InjuryEvent, InjuryType, PlayerDay, RawField};
use crate::panel::{FeaturePanel, PlayerSeries};
use crate::{Error, Result};

/// One generated monitoring column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub field: RawField,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    /// Log-odds added to the daily hazard per standard deviation.
    pub weight: f64,
}

impl FieldSpec {
    pub fn new(field: RawField, mean: f64, sd: f64, min: f64, max: f64, weight: f64) -> Self {
        FieldSpec { field, mean, sd, min, max, weight }
    }

    fn raw(&self, z: f64) -> f64 {
        (self.mean + self.sd * z).clamp(self.min, self.max)
    }

    fn z(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.sd
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HazardSpec {
    /// Daily injury probability when every latent value is at its mean.
    pub base_rate: f64,
    pub fields: Vec<FieldSpec>,
    /// Lag-one autocorrelation of the within-player component.
    pub ar_coefficient: f64,
    /// Stationary SD of the within-player (day-to-day) component.
    pub within_player_sd: f64,
    /// SD of the per-player offset.
    pub between_player_sd: f64,
    /// Probability that a day's questionnaire and session RPE are missing.
    pub subjective_missing: f64,
    /// Probability that a day's tracking data are missing.
    pub objective_missing: f64,
    /// No new injury is drawn for this many days after one.
    pub refractory_days: usize,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for HazardSpec {
    /// 3 hazard-driving fields with weight 1 and 10 noise fields.
    fn default() -> Self {
        use RawField::*;
        HazardSpec {
            base_rate: 0.0015,
            fields: vec![
                FieldSpec::new(Fatigue, 5.0, 1.5, 0.0, 10.0, 1.0),
                FieldSpec::new(Soreness, 4.0, 1.5, 0.0, 10.0, 1.0),
                FieldSpec::new(Srpe, 450.0, 120.0, 0.0, 1500.0, 1.0),
                FieldSpec::new(Mood, 6.0, 1.5, 0.0, 10.0, 0.0),
                FieldSpec::new(Readiness, 6.0, 1.5, 0.0, 10.0, 0.0),
                FieldSpec::new(SleepDuration, 7.5, 1.0, 3.0, 12.0, 0.0),
                FieldSpec::new(Stress, 4.0, 1.5, 0.0, 10.0, 0.0),
                FieldSpec::new(Rpe, 5.0, 1.5, 0.0, 10.0, 0.0),
                FieldSpec::new(DurationSubj, 75.0, 20.0, 0.0, 200.0, 0.0),
                FieldSpec::new(DurationObj, 80.0, 20.0, 0.0, 200.0, 0.0),
                FieldSpec::new(SpeedMean, 7.0, 1.0, 0.0, 20.0, 0.0),
                FieldSpec::new(SpeedMax, 26.0, 1.8, 10.0, 32.0, 0.0),
                FieldSpec::new(Distance, 6.0, 1.5, 0.0, 16.0, 0.0),
            ],
            ar_coefficient: 0.95,
            within_player_sd: 0.5f64.sqrt(),
            between_player_sd: 0.5f64.sqrt(),
            subjective_missing: 0.2,
            objective_missing: 0.1,
            refractory_days: 7,
            start_date: NaiveDate::from_ymd_opt(2021, 7, 1).unwrap(),
            seed: 7,
        }
    }
}

impl HazardSpec {
    /// Every problem with this hazard spec, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            errs.push(format!("base_rate must lie in (0, 1), got {}", self.base_rate));
        }
        if self.fields.is_empty() {
            errs.push("at least one field is required".into());
        }
        for (i, f) in self.fields.iter().enumerate() {
            if self.fields[..i].iter().any(|g| g.field == f.field) {
                errs.push(format!("field {} listed twice", f.field));
            }
            if !(f.sd > 0.0 && f.sd.is_finite() && f.mean.is_finite() && f.weight.is_finite()) {
                errs.push(format!("field {}: sd must be positive and all values finite", f.field));
            }
            if !(f.min <= f.mean && f.mean <= f.max) {
                errs.push(format!("field {}: mean {} outside [{}, {}]", f.field, f.mean, f.min, f.max));
            }
        }
        if !(self.ar_coefficient > -1.0 && self.ar_coefficient < 1.0) {
            errs.push(format!("ar_coefficient must lie in (-1, 1), got {}", self.ar_coefficient));
        }
        for (name, v) in [("within_player_sd", self.within_player_sd), ("between_player_sd", self.between_player_sd)] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [("subjective_missing", self.subjective_missing), ("objective_missing", self.objective_missing)] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        let all_missing = self.fields.iter().all(|f| {
            let rate = if f.field.is_subjective() { self.subjective_missing } else { self.objective_missing };
            rate >= 1.0
        });
        if !self.fields.is_empty() && all_missing {
            errs.push("every field would be missing on every day".into());
        }
        errs
    }

    pub fn field_names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.field.name().to_string()).collect()
    }

    /// Fields with nonzero hazard weight.
    pub fn hazard_fields(&self) -> Vec<RawField> {
        self.fields.iter().filter(|f| f.weight != 0.0).map(|f| f.field).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCohort {
    /// Complete generated values, one column per spec field.
    pub truth: FeaturePanel,
    /// Daily monitoring rows with missingness applied.
    pub records: Vec<PlayerDay>,
    pub injuries: Vec<InjuryEvent>,
}

impl SyntheticCohort {
    /// Columns present in `records`, in canonical order.
    pub fn columns(&self) -> Vec<RawField> {
        let mut cols: Vec<RawField> = self
            .truth
            .feature_names()
            .iter()
            .filter_map(|n| RawField::from_name(n))
            .collect();
        cols.sort();
        cols
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Daily hazard of one player-day of the truth panel.
fn day_hazard(spec: &HazardSpec, series: &PlayerSeries, day: usize) -> f64 {
    let mut eta = logit(spec.base_rate);
    for (j, f) in spec.fields.iter().enumerate() {
        if f.weight != 0.0 {
            let raw = series.get(day, j).expect("truth panel is complete");
            eta += f.weight * f.z(raw);
        }
    }
    logistic(eta)
}

fn player_id(i: usize) -> String {
    format!("P{:03}", i + 1)
}

fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag << 32 | index);
    rng
}

/// Generates `n_players` players observed daily for `n_days` days.
pub fn generate(n_players: usize, n_days: usize, spec: &HazardSpec) -> Result<SyntheticCohort> {
    let mut errs = spec.validate();
    if n_players < 2 {
        errs.push(format!("at least 2 players are required, got {n_players}"));
    }
    if n_days == 0 {
        errs.push("n_days must be at least 1".into());
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }

    let n_fields = spec.fields.len();
    let mut truth = FeaturePanel::new(spec.field_names())?;
    let phi = spec.ar_coefficient;
    let innovation_sd = spec.within_player_sd * (1.0 - phi * phi).sqrt();
    for p in 0..n_players {
        let idx = truth.add_player(player_id(p), spec.start_date, n_days)?;
        let mut rng = stream(spec.seed, 1, p as u64);
        let series = &mut truth.players_mut()[idx];
        for (j, f) in spec.fields.iter().enumerate() {
            let offset = spec.between_player_sd * rng.sample::<f64, _>(StandardNormal);
            let mut e = spec.within_player_sd * rng.sample::<f64, _>(StandardNormal);
            for d in 0..n_days {
                if d > 0 {
                    e = phi * e + innovation_sd * rng.sample::<f64, _>(StandardNormal);
                }
                series.set(d, j, Some(f.raw(offset + e)));
            }
        }
    }

    let mut records = Vec::with_capacity(n_players * n_days);
    let mut injuries = Vec::new();
    for (p, series) in truth.players().iter().enumerate() {
        let mut rng = stream(spec.seed, 2, p as u64);
        let mut last_injury: Option<usize> = None;
        for d in 0..n_days {
            let date = series.date(d);
            let subjective_missing = rng.random::<f64>() < spec.subjective_missing;
            let objective_missing = rng.random::<f64>() < spec.objective_missing;
            let mut rec = PlayerDay::new(series.player_id.clone(), date);
            for (j, f) in spec.fields.iter().enumerate() {
                let missing = if f.field.is_subjective() { subjective_missing } else { objective_missing };
                if !missing {
                    rec.set(f.field, series.get(d, j));
                }
            }
            records.push(rec);

            let u: f64 = rng.random();
            let acute: bool = rng.random();
            let refractory = last_injury.is_some_and(|l| d - l <= spec.refractory_days);
            if !refractory && u < day_hazard(spec, series, d) {
                last_injury = Some(d);
                injuries.push(InjuryEvent {
                    player_id: series.player_id.clone(),
                    date,
                    injury_type: if acute { InjuryType::Acute } else { InjuryType::Overuse },
                    body_part: "lower_limb".into(),
                });
            }
        }
    }
    debug_assert_eq!(truth.n_features(), n_fields);
    Ok(SyntheticCohort { truth, records, injuries })
}

/// The generating daily injury probability for `player` on `date`; `None`
/// outside the player's timeline.
pub fn oracle_risk(spec: &HazardSpec, truth: &FeaturePanel, player: &str, date: NaiveDate) -> Option<f64> {
    let s = truth.player(player)?;
    let d = s.day_index(date)?;
    Some(day_hazard(spec, s, d))
}

/// Probability of at least one injury in `(anchor, anchor + horizon]`,
/// ignoring refractory periods. Days past the end of the timeline are
/// skipped.
pub fn oracle_window_risk(spec: &HazardSpec, truth: &FeaturePanel, player: &str, anchor: NaiveDate, horizon: usize) -> f64 {
    let survive: f64 = (1..=horizon as u64)
        .filter_map(|k| oracle_risk(spec, truth, player, anchor + Days::new(k)))
        .map(|h| 1.0 - h)
        .product();
    1.0 - survive
}
