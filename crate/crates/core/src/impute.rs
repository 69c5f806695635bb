//! Gap filling for feature panels and before/after diagnostics.
//!
//! All imputers only write cells that are missing in their input; observed
//! cells pass through untouched.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::ingest::InjuryEvent;
use crate::metrics::pearson_r;
use crate::panel::FeaturePanel;
use crate::Result;

/// Days of history used to measure a player's standing within the team.
pub const STANDING_WINDOW_DAYS: usize = 14;
/// Minimum number of observed teammates needed on a day.
pub const MIN_TEAMMATES: usize = 2;
/// Default post-imputation missingness above which a feature is dropped.
pub const DEFAULT_DROP_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Imputation {
    None,
    Median,
    /// Team-relative standing over the preceding two weeks.
    #[default]
    Bespoke,
    Linear,
}

impl Imputation {
    pub fn apply(self, panel: &FeaturePanel) -> FeaturePanel {
        match self {
            Imputation::None => panel.clone(),
            Imputation::Median => impute_median(panel),
            Imputation::Bespoke => impute_relative_standing(panel, STANDING_WINDOW_DAYS),
            Imputation::Linear => impute_linear(panel),
        }
    }
}

impl FromStr for Imputation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Imputation::None),
            "median" => Ok(Imputation::Median),
            "bespoke" => Ok(Imputation::Bespoke),
            "linear" => Ok(Imputation::Linear),
            other => Err(format!("unknown imputation {other:?} (expected median|bespoke|linear|none)")),
        }
    }
}

impl fmt::Display for Imputation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Imputation::None => "none",
            Imputation::Median => "median",
            Imputation::Bespoke => "bespoke",
            Imputation::Linear => "linear",
        })
    }
}

/// Median with the even-count convention of averaging the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Fills each gap with the player's own median for that feature. Players
/// with no observation of a feature keep it missing.
pub fn impute_median(panel: &FeaturePanel) -> FeaturePanel {
    let mut out = panel.clone();
    for s in out.players_mut() {
        for f in 0..panel.n_features() {
            let column = s.column(f);
            let observed: Vec<f64> = column.iter().flatten().copied().collect();
            if let Some(m) = median(&observed) {
                for (d, v) in column.iter().enumerate() {
                    if v.is_none() {
                        s.set(d, f, Some(m));
                    }
                }
            }
        }
    }
    out
}

/// Linear interpolation in calendar time between the nearest observed days.
/// Leading and trailing gaps stay missing.
pub fn impute_linear(panel: &FeaturePanel) -> FeaturePanel {
    let mut out = panel.clone();
    for s in out.players_mut() {
        for f in 0..panel.n_features() {
            let column = s.column(f);
            let observed: Vec<(usize, f64)> = column
                .iter()
                .enumerate()
                .filter_map(|(d, v)| v.map(|v| (d, v)))
                .collect();
            for pair in observed.windows(2) {
                let ((d0, v0), (d1, v1)) = (pair[0], pair[1]);
                for d in d0 + 1..d1 {
                    let t = (d - d0) as f64 / (d1 - d0) as f64;
                    s.set(d, f, Some(v0 + t * (v1 - v0)));
                }
            }
        }
    }
    out
}

/// Mean and population SD.
fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Team-relative imputation.
///
/// On each of the `window` days before a gap where the player and at least
/// two teammates were observed, the player's value is expressed as a z-score
/// against the teammates' mean and population SD that day (days with zero
/// teammate SD are skipped). The average z-score `s` is the player's
/// standing; the gap is filled with `team_mean + s * team_sd` from the
/// teammates observed on the missing day. The cell stays missing when fewer
/// than two teammates are observed that day or no usable history exists.
pub fn impute_relative_standing(panel: &FeaturePanel, window: usize) -> FeaturePanel {
    let mut out = panel.clone();
    for f in 0..panel.n_features() {
        let mut by_date: BTreeMap<NaiveDate, Vec<(usize, f64)>> = BTreeMap::new();
        for (p, s) in panel.players().iter().enumerate() {
            for d in 0..s.n_days() {
                if let Some(v) = s.get(d, f) {
                    by_date.entry(s.date(d)).or_default().push((p, v));
                }
            }
        }
        let teammates = |date: NaiveDate, player: usize| -> Vec<f64> {
            by_date
                .get(&date)
                .map(|vals| vals.iter().filter(|(q, _)| *q != player).map(|(_, v)| *v).collect())
                .unwrap_or_default()
        };

        for (p, s) in panel.players().iter().enumerate() {
            for d in 0..s.n_days() {
                if s.get(d, f).is_some() {
                    continue;
                }
                let date = s.date(d);
                let today = teammates(date, p);
                if today.len() < MIN_TEAMMATES {
                    continue;
                }
                let mut z_sum = 0.0;
                let mut z_n = 0usize;
                for back in 1..=window {
                    let Some(past) = date.checked_sub_days(Days::new(back as u64)) else { break };
                    let Some(own) = s.day_index(past).and_then(|pd| s.get(pd, f)) else { continue };
                    let team = teammates(past, p);
                    if team.len() < MIN_TEAMMATES {
                        continue;
                    }
                    let (mean, sd) = moments(&team);
                    if sd > 0.0 {
                        z_sum += (own - mean) / sd;
                        z_n += 1;
                    }
                }
                if z_n == 0 {
                    continue;
                }
                let standing = z_sum / z_n as f64;
                let (mean, sd) = moments(&today);
                out.players_mut()[p].set(d, f, Some(mean + standing * sd));
            }
        }
    }
    out
}

/// Two-sample Kolmogorov–Smirnov distance between empirical CDFs.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Some(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDiagnostics {
    pub feature: String,
    pub fraction_missing_before: f64,
    pub fraction_missing_after: f64,
    /// KS distance between observed values and all post-imputation values.
    pub ks_distance: Option<f64>,
    /// Point-biserial correlation with an injury on the following day.
    pub injury_corr_before: Option<f64>,
    pub injury_corr_after: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputationDiagnostics {
    pub features: Vec<FeatureDiagnostics>,
}

impl ImputationDiagnostics {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "feature",
            "fraction_missing_before",
            "fraction_missing_after",
            "ks_distance",
            "injury_corr_before",
            "injury_corr_after",
        ])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for d in &self.features {
            wtr.write_record([
                d.feature.clone(),
                d.fraction_missing_before.to_string(),
                d.fraction_missing_after.to_string(),
                opt(d.ks_distance),
                opt(d.injury_corr_before),
                opt(d.injury_corr_after),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn next_day_injury_corr(panel: &FeaturePanel, f: usize, injuries: &[InjuryEvent]) -> Option<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in panel.players() {
        for d in 0..s.n_days() {
            if let Some(v) = s.get(d, f) {
                let next = s.date(d) + Days::new(1);
                let hit = injuries.iter().any(|e| e.player_id == s.player_id && e.date == next);
                xs.push(v);
                ys.push(if hit { 1.0 } else { 0.0 });
            }
        }
    }
    pearson_r(&xs, &ys)
}

/// Compares a panel before and after imputation, feature by feature.
/// Both panels must share feature order.
pub fn diagnostics(before: &FeaturePanel, after: &FeaturePanel, injuries: &[InjuryEvent]) -> ImputationDiagnostics {
    let features = before
        .feature_names()
        .iter()
        .enumerate()
        .map(|(f, name)| FeatureDiagnostics {
            feature: name.clone(),
            fraction_missing_before: before.missing_fraction(f),
            fraction_missing_after: after.missing_fraction(f),
            ks_distance: ks_distance(&before.observed_values(f), &after.observed_values(f)),
            injury_corr_before: next_day_injury_corr(before, f, injuries),
            injury_corr_after: next_day_injury_corr(after, f, injuries),
        })
        .collect();
    ImputationDiagnostics { features }
}

/// Removes features whose missing fraction exceeds `threshold`.
pub fn drop_high_missingness(panel: &FeaturePanel, threshold: f64) -> Result<(FeaturePanel, Vec<String>)> {
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    for (f, name) in panel.feature_names().iter().enumerate() {
        if panel.missing_fraction(f) > threshold {
            dropped.push(name.clone());
        } else {
            keep.push(name.clone());
        }
    }
    Ok((panel.select(&keep)?, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 3, 1).unwrap()
    }

    fn one_player(values: &[Option<f64>]) -> FeaturePanel {
        let mut p = FeaturePanel::new(vec!["x".into()]).unwrap();
        p.add_player("a", start(), values.len()).unwrap();
        p.players_mut()[0].set_column(0, values);
        p
    }

    #[test]
    fn median_examples() {
        let out = impute_median(&one_player(&[Some(10.0), None, Some(30.0), Some(20.0)]));
        assert_eq!(out.players()[0].get(1, 0), Some(20.0));
        let out = impute_median(&one_player(&[None, None]));
        assert_eq!(out.players()[0].column(0), vec![None, None]);
        let out = impute_median(&one_player(&[Some(10.0), None, Some(20.0)]));
        assert_eq!(out.players()[0].get(1, 0), Some(15.0));
    }

    #[test]
    fn linear_examples() {
        let out = impute_linear(&one_player(&[Some(10.0), None, Some(20.0)]));
        assert_eq!(out.players()[0].get(1, 0), Some(15.0));
        let out = impute_linear(&one_player(&[None, Some(1.0), None, None, Some(4.0), None]));
        assert_eq!(
            out.players()[0].column(0),
            vec![None, Some(1.0), Some(2.0), Some(3.0), Some(4.0), None]
        );
    }

    /// Team of `n` players over `days` days on one feature.
    fn team(n: usize, days: usize, value: impl Fn(usize, usize) -> Option<f64>) -> FeaturePanel {
        let mut p = FeaturePanel::new(vec!["x".into()]).unwrap();
        for i in 0..n {
            p.add_player(format!("p{i}"), start(), days).unwrap();
            for d in 0..days {
                p.players_mut()[i].set(d, 0, value(i, d));
            }
        }
        p
    }

    #[test]
    fn standing_plus_one_sd() {
        // Teammates p1..p2 sit at 40 and 60 (mean 50, population SD 10);
        // p0 sits at 60 (z = +1) for two weeks and is missing on day 14.
        let p = team(3, 15, |i, d| match (i, d) {
            (0, 14) => None,
            (0, _) => Some(60.0),
            (1, _) => Some(40.0),
            _ => Some(60.0),
        });
        let out = impute_relative_standing(&p, 14);
        assert!((out.players()[0].get(14, 0).unwrap() - 60.0).abs() < 1e-12);
    }

    #[test]
    fn standing_zero_gives_team_mean() {
        let p = team(3, 10, |i, d| match (i, d) {
            (0, 9) => None,
            (0, _) => Some(5.0 + d as f64),
            (1, _) => Some(3.0 + d as f64),
            _ => Some(7.0 + d as f64 + if d == 9 { 10.0 } else { 0.0 }),
        });
        let out = impute_relative_standing(&p, 14);
        // Team mean on day 9: (12 + 26) / 2.
        assert!((out.players()[0].get(9, 0).unwrap() - 19.0).abs() < 1e-12);
    }

    #[test]
    fn standing_needs_two_teammates() {
        let p = team(3, 5, |i, d| match (i, d) {
            (0, 4) | (2, 4) => None,
            _ => Some((i * 10 + d) as f64),
        });
        let out = impute_relative_standing(&p, 14);
        assert_eq!(out.players()[0].get(4, 0), None);
    }

    #[test]
    fn ks_matches_brute_force_ecdf() {
        let a = [1.0, 2.0, 2.0, 5.0];
        let b = [2.0, 3.0, 4.0, 6.0];
        // Brute force: largest ECDF gap over all sample points.
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        let brute = a
            .iter()
            .chain(&b)
            .map(|&x| (ecdf(&a, x) - ecdf(&b, x)).abs())
            .fold(0.0, f64::max);
        assert_eq!(brute, 0.5);
        assert!((ks_distance(&a, &b).unwrap() - brute).abs() < 1e-12);
        assert_eq!(ks_distance(&a, &a), Some(0.0));
    }

    #[test]
    fn diagnostics_identity_and_untouched_features() {
        let p = team(3, 6, |i, d| (d % 2 == 0 || i == 0).then_some((i + d) as f64));
        let injuries = vec![InjuryEvent {
            player_id: "p1".into(),
            date: start() + Days::new(3),
            injury_type: crate::ingest::InjuryType::Acute,
            body_part: "knee".into(),
        }];
        let same = diagnostics(&p, &p, &injuries);
        let d = &same.features[0];
        assert_eq!(d.ks_distance, Some(0.0));
        assert_eq!(d.injury_corr_before, d.injury_corr_after);
        assert_eq!(d.fraction_missing_before, d.fraction_missing_after);

        let empty = team(2, 3, |_, _| None);
        let diag = diagnostics(&empty, &impute_median(&empty), &[]);
        assert_eq!(diag.features[0].fraction_missing_before, 1.0);
        assert_eq!(diag.features[0].fraction_missing_after, 1.0);
    }

    #[test]
    fn dropping_by_missingness() {
        let mut p = FeaturePanel::new(vec!["sparse".into(), "full".into()]).unwrap();
        p.add_player("a", start(), 10).unwrap();
        for d in 0..10 {
            p.players_mut()[0].set(d, 0, (d < 4).then_some(1.0));
            p.players_mut()[0].set(d, 1, Some(2.0));
        }
        let (kept, dropped) = drop_high_missingness(&p, 0.5).unwrap();
        assert_eq!(dropped, vec!["sparse".to_string()]);
        assert_eq!(kept.feature_names(), ["full".to_string()]);
        let (kept, dropped) = drop_high_missingness(&p, 1.0).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(kept.n_features(), 2);
    }

    fn arb_team() -> impl Strategy<Value = Vec<Vec<Option<f64>>>> {
        (2usize..5, 3usize..25).prop_flat_map(|(n, days)| {
            prop::collection::vec(
                prop::collection::vec(prop::option::weighted(0.6, -50.0f64..50.0), days),
                n,
            )
        })
    }

    fn panel_of(cols: &[Vec<Option<f64>>]) -> FeaturePanel {
        let mut p = FeaturePanel::new(vec!["x".into()]).unwrap();
        for (i, c) in cols.iter().enumerate() {
            p.add_player(format!("p{i}"), start(), c.len()).unwrap();
            p.players_mut()[i].set_column(0, c);
        }
        p
    }

    proptest! {
        #[test]
        fn observed_cells_never_written(cols in arb_team()) {
            let p = panel_of(&cols);
            for method in [Imputation::Median, Imputation::Bespoke, Imputation::Linear] {
                let out = method.apply(&p);
                for (s, o) in p.players().iter().zip(out.players()) {
                    for d in 0..s.n_days() {
                        if let Some(v) = s.get(d, 0) {
                            prop_assert_eq!(o.get(d, 0), Some(v));
                        }
                    }
                }
            }
        }

        #[test]
        fn affine_series_recovered_exactly(
            a in -10.0f64..10.0, b in -100.0f64..100.0,
            mask in prop::collection::vec(prop::bool::weighted(0.5), 3..60),
        ) {
            let truth: Vec<f64> = (0..mask.len()).map(|d| a * d as f64 + b).collect();
            let vals: Vec<Option<f64>> = truth.iter().zip(&mask).map(|(&v, &m)| m.then_some(v)).collect();
            let out = impute_linear(&one_player(&vals));
            let col = out.players()[0].column(0);
            let first = mask.iter().position(|&m| m);
            let last = mask.iter().rposition(|&m| m);
            for d in 0..mask.len() {
                let interior = matches!((first, last), (Some(f), Some(l)) if d >= f && d <= l);
                if interior {
                    prop_assert!((col[d].unwrap() - truth[d]).abs() < 1e-9);
                } else {
                    prop_assert_eq!(col[d], None);
                }
            }
        }

        #[test]
        fn median_preserved(cols in arb_team()) {
            let p = panel_of(&cols);
            let out = impute_median(&p);
            for (s, o) in p.players().iter().zip(out.players()) {
                let before: Vec<f64> = s.column(0).into_iter().flatten().collect();
                let after: Vec<f64> = o.column(0).into_iter().flatten().collect();
                prop_assert_eq!(median(&before), median(&after));
            }
        }

        #[test]
        fn standing_affine_equivariance(
            cols in arb_team(),
            coeffs in prop::collection::vec((0.1f64..5.0, -20.0f64..20.0), 25),
        ) {
            let p = panel_of(&cols);
            let transformed: Vec<Vec<Option<f64>>> = cols.iter()
                .map(|c| c.iter().enumerate().map(|(d, v)| v.map(|v| coeffs[d].0 * v + coeffs[d].1)).collect())
                .collect();
            let q = panel_of(&transformed);
            let out_p = impute_relative_standing(&p, 14);
            let out_q = impute_relative_standing(&q, 14);
            for (sp, sq) in out_p.players().iter().zip(out_q.players()) {
                for d in 0..sp.n_days() {
                    match (sp.get(d, 0), sq.get(d, 0)) {
                        (None, None) => {}
                        (Some(x), Some(y)) => {
                            let expect = coeffs[d].0 * x + coeffs[d].1;
                            prop_assert!((expect - y).abs() < 1e-6 * (1.0 + y.abs()), "{} vs {}", expect, y);
                        }
                        other => prop_assert!(false, "mask differs: {:?}", other),
                    }
                }
            }
        }

        #[test]
        fn diagnostic_fractions_in_range(cols in arb_team()) {
            let p = panel_of(&cols);
            for method in [Imputation::Median, Imputation::Bespoke, Imputation::Linear] {
                let diag = diagnostics(&p, &method.apply(&p), &[]);
                for f in &diag.features {
                    prop_assert!((0.0..=1.0).contains(&f.fraction_missing_before));
                    prop_assert!(f.fraction_missing_after <= f.fraction_missing_before);
                }
            }
        }
    }
}
