//! Player × day × feature storage with an explicit missingness mask.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use chrono::{Days, NaiveDate};

use crate::ingest::{parse_date, DATE_FORMAT};
use crate::{Error, Result};

/// One player's contiguous daily timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayerSeries {
    pub player_id: String,
    pub start: NaiveDate,
    n_days: usize,
    n_features: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl PlayerSeries {
    fn new(player_id: String, start: NaiveDate, n_days: usize, n_features: usize) -> Self {
        PlayerSeries {
            player_id,
            start,
            n_days,
            n_features,
            values: vec![0.0; n_days * n_features],
            mask: vec![false; n_days * n_features],
        }
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn date(&self, day: usize) -> NaiveDate {
        self.start + Days::new(day as u64)
    }

    pub fn end(&self) -> NaiveDate {
        self.date(self.n_days.saturating_sub(1))
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start).num_days();
        (offset >= 0 && (offset as usize) < self.n_days).then_some(offset as usize)
    }

    pub fn get(&self, day: usize, feature: usize) -> Option<f64> {
        let i = day * self.n_features + feature;
        self.mask[i].then(|| self.values[i])
    }

    /// Stores a value; non-finite inputs are stored as missing.
    pub fn set(&mut self, day: usize, feature: usize, value: Option<f64>) {
        let i = day * self.n_features + feature;
        match value.filter(|v| v.is_finite()) {
            Some(v) => {
                self.values[i] = v;
                self.mask[i] = true;
            }
            None => {
                self.values[i] = 0.0;
                self.mask[i] = false;
            }
        }
    }

    pub fn column(&self, feature: usize) -> Vec<Option<f64>> {
        (0..self.n_days).map(|d| self.get(d, feature)).collect()
    }

    pub fn set_column(&mut self, feature: usize, column: &[Option<f64>]) {
        assert_eq!(column.len(), self.n_days);
        for (d, v) in column.iter().enumerate() {
            self.set(d, feature, *v);
        }
    }

    pub fn observed_count(&self, feature: usize) -> usize {
        (0..self.n_days).filter(|&d| self.mask[d * self.n_features + feature]).count()
    }
}

/// Panel of daily feature values for a set of players.
///
/// Every player has a contiguous date axis with one row per calendar day;
/// days without data are rows with all cells missing.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePanel {
    feature_names: Vec<String>,
    series: Vec<PlayerSeries>,
}

impl FeaturePanel {
    pub fn new(feature_names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!("duplicate feature name {name:?}")));
            }
        }
        Ok(FeaturePanel {
            feature_names,
            series: Vec::new(),
        })
    }

    /// Adds an all-missing timeline for a player and returns its index.
    pub fn add_player(&mut self, player_id: impl Into<String>, start: NaiveDate, n_days: usize) -> Result<usize> {
        let player_id = player_id.into();
        if self.player_index(&player_id).is_some() {
            return Err(Error::Data(format!("player {player_id:?} already in panel")));
        }
        self.series
            .push(PlayerSeries::new(player_id, start, n_days, self.feature_names.len()));
        Ok(self.series.len() - 1)
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn players(&self) -> &[PlayerSeries] {
        &self.series
    }

    pub fn players_mut(&mut self) -> &mut [PlayerSeries] {
        &mut self.series
    }

    pub fn player(&self, player_id: &str) -> Option<&PlayerSeries> {
        self.player_index(player_id).map(|i| &self.series[i])
    }

    pub fn player_index(&self, player_id: &str) -> Option<usize> {
        self.series.iter().position(|s| s.player_id == player_id)
    }

    pub fn player_ids(&self) -> Vec<String> {
        self.series.iter().map(|s| s.player_id.clone()).collect()
    }

    pub fn total_days(&self) -> usize {
        self.series.iter().map(|s| s.n_days).sum()
    }

    /// Earliest and latest date over all players.
    pub fn date_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        let first = self.series.iter().filter(|s| s.n_days > 0).map(|s| s.start).min()?;
        let last = self.series.iter().filter(|s| s.n_days > 0).map(|s| s.end()).max()?;
        Some((first, last))
    }

    /// Fraction of all player-day cells of a feature that are missing.
    pub fn missing_fraction(&self, feature: usize) -> f64 {
        let total = self.total_days();
        if total == 0 {
            return 0.0;
        }
        let observed: usize = self.series.iter().map(|s| s.observed_count(feature)).sum();
        1.0 - observed as f64 / total as f64
    }

    /// Pooled observed values of one feature across players and days.
    pub fn observed_values(&self, feature: usize) -> Vec<f64> {
        self.series
            .iter()
            .flat_map(|s| (0..s.n_days).filter_map(move |d| s.get(d, feature)))
            .collect()
    }

    /// Keeps only the listed features, in the listed order.
    pub fn select(&self, names: &[String]) -> Result<FeaturePanel> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.feature_index(n).ok_or_else(|| Error::Data(format!("unknown feature {n:?}"))))
            .collect::<Result<_>>()?;
        let mut out = FeaturePanel::new(names.to_vec())?;
        for s in &self.series {
            let p = out.add_player(s.player_id.clone(), s.start, s.n_days)?;
            let dst = &mut out.series[p];
            for d in 0..s.n_days {
                for (j, &i) in idx.iter().enumerate() {
                    dst.set(d, j, s.get(d, i));
                }
            }
        }
        Ok(out)
    }

    /// Appends a feature column filled by `f(series, day)`.
    pub fn push_feature<F>(&mut self, name: impl Into<String>, mut f: F) -> Result<()>
    where
        F: FnMut(&PlayerSeries, usize) -> Option<f64>,
    {
        let name = name.into();
        if self.feature_index(&name).is_some() {
            return Err(Error::Config(format!("duplicate feature name {name:?}")));
        }
        let old = self.n_features();
        self.feature_names.push(name);
        for s in &mut self.series {
            let column: Vec<Option<f64>> = (0..s.n_days).map(|d| f(s, d)).collect();
            let mut grown = PlayerSeries::new(s.player_id.clone(), s.start, s.n_days, old + 1);
            for d in 0..s.n_days {
                for j in 0..old {
                    grown.set(d, j, s.get(d, j));
                }
                grown.set(d, old, column[d]);
            }
            *s = grown;
        }
        Ok(())
    }

    /// Wide CSV: one row per player-day, empty cell for missing.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["player_id".to_string(), "date".to_string()];
        header.extend(self.feature_names.iter().cloned());
        wtr.write_record(&header)?;
        for s in &self.series {
            for d in 0..s.n_days {
                let mut row = vec![s.player_id.clone(), s.date(d).format(DATE_FORMAT).to_string()];
                row.extend((0..self.n_features()).map(|f| s.get(d, f).map(|v| v.to_string()).unwrap_or_default()));
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads the layout produced by [`FeaturePanel::write_csv`]. Gaps in a
    /// player's dates become all-missing rows.
    pub fn read_csv<R: Read>(reader: R) -> Result<FeaturePanel> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("player_id") || headers.get(1) != Some("date") {
            return Err(Error::Schema("panel CSV must start with player_id,date".into()));
        }
        let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut rows: BTreeMap<String, Vec<(NaiveDate, Vec<Option<f64>>)>> = BTreeMap::new();
        let mut order = Vec::new();
        for (index, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let player = rec.get(0).unwrap_or("").to_string();
            let date = parse_date(rec.get(1).unwrap_or("")).map_err(|m| Error::row(index, m))?;
            let vals = rec
                .iter()
                .skip(2)
                .map(|c| {
                    if c.trim().is_empty() {
                        Ok(None)
                    } else {
                        c.trim().parse::<f64>().map(Some).map_err(|_| Error::row(index, format!("not a number: {c:?}")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            if !rows.contains_key(&player) {
                order.push(player.clone());
            }
            rows.entry(player).or_default().push((date, vals));
        }
        let mut panel = FeaturePanel::new(names)?;
        for player in order {
            let days = &rows[&player];
            let start = days.iter().map(|(d, _)| *d).min().unwrap();
            let end = days.iter().map(|(d, _)| *d).max().unwrap();
            let p = panel.add_player(player.clone(), start, (end - start).num_days() as usize + 1)?;
            for (date, vals) in days {
                let day = panel.series[p].day_index(*date).unwrap();
                for (f, v) in vals.iter().enumerate() {
                    panel.series[p].set(day, f, *v);
                }
            }
        }
        Ok(panel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicate_names() {
        assert!(FeaturePanel::new(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn non_finite_is_missing() {
        let mut p = FeaturePanel::new(vec!["a".into()]).unwrap();
        let i = p.add_player("x", NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), 2).unwrap();
        p.players_mut()[i].set(0, 0, Some(f64::NAN));
        p.players_mut()[i].set(1, 0, Some(2.0));
        assert_eq!(p.players()[i].get(0, 0), None);
        assert_eq!(p.players()[i].get(1, 0), Some(2.0));
        assert!((p.missing_fraction(0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let mut p = FeaturePanel::new(vec!["a".into(), "b".into()]).unwrap();
        let start = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        let i = p.add_player("x", start, 3).unwrap();
        p.players_mut()[i].set(0, 0, Some(1.5));
        p.players_mut()[i].set(2, 1, Some(-3.0));
        let j = p.add_player("y", start + Days::new(5), 1).unwrap();
        p.players_mut()[j].set(0, 0, Some(0.25));
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(FeaturePanel::read_csv(buf.as_slice()).unwrap(), p);
    }
}
