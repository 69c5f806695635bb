//! Daily training-load metrics and the per-player feature panel.
//!
//! Load windows are calendar windows. A day without a recorded session load
//! counts as a rest day with zero load, including days of a window that fall
//! before the player's first record. A metric is missing until the player's
//! first recorded load.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::ingest::{DailyAggregate, InjuryEvent, PlayerDay, RawField};
use crate::panel::FeaturePanel;
use crate::{Error, Result};

pub const DAILY_LOAD: &str = "daily_load";
pub const ATL: &str = "atl";
pub const WEEKLY_LOAD: &str = "weekly_load";
pub const MONOTONY: &str = "monotony";
pub const STRAIN: &str = "strain";
pub const ACWR: &str = "acwr";
pub const CTL28: &str = "ctl28";
pub const CTL42: &str = "ctl42";
pub const SUBJECTIVE_MISSINGNESS_7D: &str = "subjective_missingness_7d";
pub const PAST_INJURY_COUNT: &str = "past_injury_count";

const ACUTE_DAYS: usize = 7;
const CHRONIC_DAYS: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChronicWindow {
    Days28,
    Days42,
}

impl ChronicWindow {
    pub fn days(self) -> usize {
        match self {
            ChronicWindow::Days28 => 28,
            ChronicWindow::Days42 => 42,
        }
    }
}

/// Sum of the session RPE loads recorded on one day; `None` when no session
/// has an sRPE value.
pub fn daily_load(sessions_on_day: &[PlayerDay]) -> Option<f64> {
    sessions_on_day
        .iter()
        .filter_map(|s| s.get(RawField::Srpe))
        .fold(None, |acc, v| Some(acc.unwrap_or(0.0) + v))
}

fn started(loads: &[Option<f64>], day: usize) -> bool {
    loads[..=day].iter().any(Option::is_some)
}

/// Loads of the trailing `len` days ending at `day`, rest days as zero.
fn window(loads: &[Option<f64>], day: usize, len: usize) -> Option<Vec<f64>> {
    if !started(loads, day) {
        return None;
    }
    let mut out = vec![0.0; len.saturating_sub(day + 1)];
    let from = (day + 1).saturating_sub(len);
    out.extend(loads[from..=day].iter().map(|v| v.unwrap_or(0.0)));
    Some(out)
}

fn window_sum(loads: &[Option<f64>], day: usize, len: usize) -> Option<f64> {
    window(loads, day, len).map(|w| w.iter().sum())
}

/// Acute training load: mean daily load over the trailing 7 days.
pub fn atl(loads: &[Option<f64>], day: usize) -> Option<f64> {
    window_sum(loads, day, ACUTE_DAYS).map(|s| s / ACUTE_DAYS as f64)
}

pub fn weekly_load(loads: &[Option<f64>], day: usize) -> Option<f64> {
    window_sum(loads, day, ACUTE_DAYS)
}

/// Foster monotony: mean over sample SD of the trailing 7 daily loads.
/// Needs a full week inside the player's timeline; missing when the loads are
/// constant.
pub fn monotony(loads: &[Option<f64>], day: usize) -> Option<f64> {
    if day + 1 < ACUTE_DAYS {
        return None;
    }
    let w = window(loads, day, ACUTE_DAYS)?;
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if sd <= 1e-10 * scale || sd == 0.0 {
        return None;
    }
    Some(mean / sd)
}

/// Weekly load times monotony.
pub fn strain(loads: &[Option<f64>], day: usize) -> Option<f64> {
    Some(weekly_load(loads, day)? * monotony(loads, day)?)
}

/// Chronic training load: sum over the trailing 28 or 42 days.
pub fn ctl(loads: &[Option<f64>], day: usize, window: ChronicWindow) -> Option<f64> {
    window_sum(loads, day, window.days())
}

/// Coupled acute:chronic workload ratio (7-day mean over 28-day mean).
pub fn acwr(loads: &[Option<f64>], day: usize) -> Option<f64> {
    let acute = atl(loads, day)?;
    let chronic = window_sum(loads, day, CHRONIC_DAYS)? / CHRONIC_DAYS as f64;
    (chronic > 0.0).then(|| acute / chronic)
}

/// Number of the player's injuries strictly before `date`.
pub fn past_injury_count(injuries: &[InjuryEvent], player: &str, date: NaiveDate) -> usize {
    injuries
        .iter()
        .filter(|e| e.player_id == player && e.date < date)
        .count()
}

/// Fraction of the trailing 7 days (inside the player's timeline) on which
/// every wellness item present in the panel is missing. A partially answered
/// questionnaire counts as answered.
pub fn subjective_missingness_7d(panel: &FeaturePanel, player: &str, date: NaiveDate) -> Option<f64> {
    let series = panel.player(player)?;
    let day = series.day_index(date)?;
    let items: Vec<usize> = RawField::WELLNESS
        .iter()
        .filter_map(|f| panel.feature_index(f.name()))
        .collect();
    if items.is_empty() {
        return None;
    }
    let from = (day + 1).saturating_sub(ACUTE_DAYS);
    let missed = (from..=day)
        .filter(|&d| items.iter().all(|&f| series.get(d, f).is_none()))
        .count();
    Some(missed as f64 / (day + 1 - from) as f64)
}

/// Trailing mean of each feature over the last `window` days, using observed
/// cells only. A cell is missing when its window holds no observation.
pub fn rolling_means(panel: &FeaturePanel, window: usize) -> Result<FeaturePanel> {
    if window == 0 {
        return Err(Error::Config("rolling window must be at least 1 day".into()));
    }
    let mut out = panel.clone();
    for (src, dst) in panel.players().iter().zip(out.players_mut()) {
        for d in 0..src.n_days() {
            for (f, v) in trailing_means(src, panel.n_features(), d, window).into_iter().enumerate() {
                dst.set(d, f, v);
            }
        }
    }
    Ok(out)
}

/// Trailing mean of every feature for one player at one day, `None` entries
/// where the window has no observation.
pub fn trailing_means(series: &crate::panel::PlayerSeries, n_features: usize, day: usize, window: usize) -> Vec<Option<f64>> {
    let from = (day + 1).saturating_sub(window);
    (0..n_features)
        .map(|f| {
            let (sum, n) = (from..=day)
                .filter_map(|d| series.get(d, f))
                .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            (n > 0).then(|| sum / n as f64)
        })
        .collect()
}

fn aggregate(field: RawField, sessions: &[&PlayerDay]) -> Option<f64> {
    if field == RawField::DistancePerMin {
        let dist = aggregate(RawField::Distance, sessions);
        let dur = aggregate(RawField::DurationObj, sessions);
        if let (Some(dist), Some(dur)) = (dist, dur) {
            if dur > 0.0 && sessions.iter().all(|s| s.get(RawField::Distance).is_some() == s.get(RawField::DurationObj).is_some()) {
                return Some(dist / dur);
            }
        }
    }
    let vals: Vec<f64> = sessions.iter().filter_map(|s| s.get(field)).collect();
    if vals.is_empty() {
        return None;
    }
    Some(match field.daily_aggregate() {
        DailyAggregate::Sum => vals.iter().sum(),
        DailyAggregate::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
        DailyAggregate::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Builds the daily panel: session rows are combined per day, derived load
/// metrics, questionnaire missingness and the prior-injury count are appended.
///
/// Each player's timeline spans their first to last record. Raw fields never
/// observed in `records` are left out.
pub fn build_panel(records: &[PlayerDay], injuries: &[InjuryEvent]) -> Result<FeaturePanel> {
    let mut by_player: BTreeMap<&str, BTreeMap<NaiveDate, Vec<&PlayerDay>>> = BTreeMap::new();
    for r in records {
        by_player
            .entry(r.player_id.as_str())
            .or_default()
            .entry(r.date)
            .or_default()
            .push(r);
    }
    let raw: Vec<RawField> = RawField::ALL
        .iter()
        .copied()
        .filter(|&f| records.iter().any(|r| r.get(f).is_some()))
        .collect();
    let has_load = raw.contains(&RawField::Srpe);

    let mut names: Vec<String> = Vec::new();
    if has_load {
        names.extend([DAILY_LOAD, ATL, WEEKLY_LOAD, MONOTONY, STRAIN, ACWR, CTL28, CTL42].map(String::from));
    }
    let raw_offset = names.len();
    names.extend(raw.iter().map(|f| f.name().to_string()));
    let wellness_present = RawField::WELLNESS.iter().any(|f| raw.contains(f));
    if wellness_present {
        names.push(SUBJECTIVE_MISSINGNESS_7D.into());
    }
    names.push(PAST_INJURY_COUNT.into());

    let mut panel = FeaturePanel::new(names)?;
    for (player, days) in &by_player {
        let start = *days.keys().next().unwrap();
        let end = *days.keys().next_back().unwrap();
        let n_days = (end - start).num_days() as usize + 1;
        let p = panel.add_player(*player, start, n_days)?;
        let series = &mut panel.players_mut()[p];

        let mut loads = vec![None; n_days];
        for (date, sessions) in days {
            let d = series.day_index(*date).unwrap();
            for (j, &f) in raw.iter().enumerate() {
                series.set(d, raw_offset + j, aggregate(f, sessions));
            }
            if has_load {
                let owned: Vec<PlayerDay> = sessions.iter().map(|s| (*s).clone()).collect();
                loads[d] = daily_load(&owned);
            }
        }
        if has_load {
            for d in 0..n_days {
                let row = [
                    loads[d],
                    atl(&loads, d),
                    weekly_load(&loads, d),
                    monotony(&loads, d),
                    strain(&loads, d),
                    acwr(&loads, d),
                    ctl(&loads, d, ChronicWindow::Days28),
                    ctl(&loads, d, ChronicWindow::Days42),
                ];
                for (f, v) in row.into_iter().enumerate() {
                    series.set(d, f, v);
                }
            }
        }
    }

    let n = panel.n_features();
    if wellness_present {
        let col = n - 2;
        let values: Vec<Vec<Option<f64>>> = panel
            .players()
            .iter()
            .map(|s| {
                (0..s.n_days())
                    .map(|d| subjective_missingness_7d(&panel, &s.player_id, s.date(d)))
                    .collect()
            })
            .collect();
        for (s, column) in panel.players_mut().iter_mut().zip(values) {
            s.set_column(col, &column);
        }
    }
    for s in panel.players_mut() {
        for d in 0..s.n_days() {
            let count = past_injury_count(injuries, &s.player_id.clone(), s.date(d));
            s.set(d, n - 1, Some(count as f64));
        }
    }
    Ok(panel)
}
