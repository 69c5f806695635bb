//! Monitoring and injury CSV ingestion plus plausibility cleaning.
//!
//! Monitoring files carry one row per player session with a `player_id`, an
//! ISO-8601 `date` and any subset of the [`RawField`] columns. Empty cells are
//! missing values. Several rows for the same player and date are distinct
//! sessions; they are combined later when the daily panel is built.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Maximum plausible sprint speed in km/h.
pub const MAX_SPEED_KM_H: f64 = 32.0;
/// Longest session in minutes before it is treated as a tracking error.
pub const MAX_DURATION_MIN: f64 = 200.0;
/// Longest plausible daily distance in km.
pub const MAX_DISTANCE_KM: f64 = 16.0;

const PROPORTION_TOL: f64 = 1e-6;

/// How multiple sessions on one calendar day combine into one daily value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DailyAggregate {
    Sum,
    Mean,
    Max,
}

macro_rules! raw_fields {
    ($( $variant:ident => $name:literal, $agg:ident ;)*) => {
        /// Columns of a monitoring export, in the canonical feature order.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum RawField {
            $( $variant, )*
        }

        impl RawField {
            pub const ALL: &'static [RawField] = &[ $( RawField::$variant, )* ];

            pub fn name(self) -> &'static str {
                match self {
                    $( RawField::$variant => $name, )*
                }
            }

            pub fn daily_aggregate(self) -> DailyAggregate {
                match self {
                    $( RawField::$variant => DailyAggregate::$agg, )*
                }
            }

            pub fn from_name(name: &str) -> Option<RawField> {
                match name {
                    $( $name => Some(RawField::$variant), )*
                    _ => None,
                }
            }
        }
    };
}

raw_fields! {
    Fatigue => "fatigue", Mean;
    Mood => "mood", Mean;
    Readiness => "readiness", Mean;
    SleepDuration => "sleep_duration", Mean;
    Soreness => "soreness", Mean;
    Stress => "stress", Mean;
    Rpe => "rpe", Mean;
    Srpe => "srpe", Sum;
    DurationSubj => "duration_subj", Sum;
    DurationObj => "duration_obj", Sum;
    SpeedMean => "speed_km_h_mean", Mean;
    SpeedMax => "speed_km_h_max", Max;
    SpeedStd => "speed_km_h_std", Mean;
    LirP => "sp_lir_p", Mean;
    LirT => "sp_lir_t", Sum;
    LirD => "sp_lir_d", Sum;
    MirP => "sp_mir_p", Mean;
    MirT => "sp_mir_t", Sum;
    MirD => "sp_mir_d", Sum;
    HirP => "sp_hir_p", Mean;
    HirT => "sp_hir_t", Sum;
    HirD => "sp_hir_d", Sum;
    SprP => "sp_spr_p", Mean;
    SprT => "sp_spr_t", Sum;
    SprD => "sp_spr_d", Sum;
    Distance => "distance", Sum;
    DistancePerMin => "distance_per_min", Mean;
}

impl RawField {
    /// The six daily wellness questionnaire items.
    pub const WELLNESS: [RawField; 6] = [
        RawField::Fatigue,
        RawField::Mood,
        RawField::Readiness,
        RawField::SleepDuration,
        RawField::Soreness,
        RawField::Stress,
    ];

    /// Speed-zone proportion columns.
    pub const ZONE_PROPORTIONS: [RawField; 4] =
        [RawField::LirP, RawField::MirP, RawField::HirP, RawField::SprP];

    /// Self-reported fields (wellness plus session RPE answers).
    pub fn is_subjective(self) -> bool {
        Self::WELLNESS.contains(&self)
            || matches!(self, RawField::Rpe | RawField::Srpe | RawField::DurationSubj)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RawField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One player's monitoring record for one session or calendar day.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayerDay {
    pub player_id: String,
    pub date: NaiveDate,
    values: [Option<f64>; RawField::ALL.len()],
}

impl PlayerDay {
    pub fn new(player_id: impl Into<String>, date: NaiveDate) -> Self {
        PlayerDay {
            player_id: player_id.into(),
            date,
            values: [None; RawField::ALL.len()],
        }
    }

    pub fn get(&self, field: RawField) -> Option<f64> {
        self.values[field.index()]
    }

    pub fn set(&mut self, field: RawField, value: Option<f64>) {
        self.values[field.index()] = value;
    }

    pub fn with(mut self, field: RawField, value: f64) -> Self {
        self.set(field, Some(value));
        self
    }

    /// Checks the per-record invariants: zone proportions in `[0, 1]` summing
    /// to at most one, non-negative duration and distance, and a
    /// `distance_per_min` consistent with `distance / duration_obj`.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut zone_sum = 0.0;
        for field in RawField::ZONE_PROPORTIONS {
            if let Some(p) = self.get(field) {
                if !(-PROPORTION_TOL..=1.0 + PROPORTION_TOL).contains(&p) {
                    return Err(format!("{field} = {p} outside [0, 1]"));
                }
                zone_sum += p;
            }
        }
        if zone_sum > 1.0 + PROPORTION_TOL {
            return Err(format!("speed-zone proportions sum to {zone_sum} > 1"));
        }
        for field in [RawField::DurationObj, RawField::Distance] {
            if let Some(v) = self.get(field) {
                if v < 0.0 {
                    return Err(format!("{field} = {v} is negative"));
                }
            }
        }
        if let (Some(dist), Some(dur), Some(rate)) = (
            self.get(RawField::Distance),
            self.get(RawField::DurationObj),
            self.get(RawField::DistancePerMin),
        ) {
            if dur > 0.0 && (dist / dur - rate).abs() > PROPORTION_TOL {
                return Err(format!(
                    "distance_per_min = {rate} but distance / duration_obj = {}",
                    dist / dur
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InjuryType {
    Acute,
    Overuse,
}

impl FromStr for InjuryType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "acute" => Ok(InjuryType::Acute),
            "overuse" => Ok(InjuryType::Overuse),
            other => Err(format!("unknown injury_type {other:?}")),
        }
    }
}

impl fmt::Display for InjuryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InjuryType::Acute => "acute",
            InjuryType::Overuse => "overuse",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjuryEvent {
    pub player_id: String,
    pub date: NaiveDate,
    pub injury_type: InjuryType,
    pub body_part: String,
}

/// Result of parsing a monitoring export.
#[derive(Clone, Debug, Default)]
pub struct MonitoringData {
    pub records: Vec<PlayerDay>,
    /// Raw columns present in the header, in canonical order.
    pub columns: Vec<RawField>,
    /// Header names that are neither mandatory nor known raw fields.
    pub ignored_columns: Vec<String>,
}

pub fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).map_err(|e| format!("invalid date {s:?}: {e}"))
}

fn parse_cell(cell: &str) -> std::result::Result<Option<f64>, String> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let v: f64 = cell.parse().map_err(|_| format!("not a number: {cell:?}"))?;
    if !v.is_finite() {
        return Err(format!("non-finite value {cell:?}"));
    }
    Ok(Some(v))
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

/// Parses a monitoring CSV file. Row indices in errors are zero-based and
/// count data rows only.
pub fn parse_monitoring_csv(path: impl AsRef<Path>) -> Result<MonitoringData> {
    read_monitoring(File::open(path)?)
}

pub fn read_monitoring<R: Read>(reader: R) -> Result<MonitoringData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut missing = Vec::new();
    let player_col = header_index(&headers, "player_id");
    let date_col = header_index(&headers, "date");
    if player_col.is_none() {
        missing.push("player_id");
    }
    if date_col.is_none() {
        missing.push("date");
    }
    let (Some(player_col), Some(date_col)) = (player_col, date_col) else {
        return Err(Error::Schema(format!("missing mandatory columns: {}", missing.join(", "))));
    };

    let mut field_cols = Vec::new();
    let mut ignored_columns = Vec::new();
    for (i, name) in headers.iter().enumerate() {
        let name = name.trim();
        if i == player_col || i == date_col {
            continue;
        }
        match RawField::from_name(name) {
            Some(field) => field_cols.push((i, field)),
            None => ignored_columns.push(name.to_string()),
        }
    }
    if !ignored_columns.is_empty() {
        log::warn!("ignoring {} unknown column(s): {}", ignored_columns.len(), ignored_columns.join(", "));
    }

    let mut records = Vec::new();
    for (index, row) in rdr.records().enumerate() {
        let row = row?;
        let player = row.get(player_col).unwrap_or("").trim();
        if player.is_empty() {
            return Err(Error::row(index, "empty player_id"));
        }
        let date = parse_date(row.get(date_col).unwrap_or("")).map_err(|m| Error::row(index, m))?;
        let mut rec = PlayerDay::new(player, date);
        for &(col, field) in &field_cols {
            let value = parse_cell(row.get(col).unwrap_or(""))
                .map_err(|m| Error::row(index, format!("{field}: {m}")))?;
            rec.set(field, value);
        }
        rec.validate().map_err(|m| Error::row(index, m))?;
        records.push(rec);
    }

    let mut columns: Vec<RawField> = field_cols.into_iter().map(|(_, f)| f).collect();
    columns.sort();
    columns.dedup();
    Ok(MonitoringData {
        records,
        columns,
        ignored_columns,
    })
}

/// Writes records in the same layout [`read_monitoring`] accepts.
pub fn write_monitoring<W: Write>(records: &[PlayerDay], columns: &[RawField], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["player_id".to_string(), "date".to_string()];
    header.extend(columns.iter().map(|f| f.name().to_string()));
    wtr.write_record(&header)?;
    for rec in records {
        let mut row = vec![rec.player_id.clone(), rec.date.format(DATE_FORMAT).to_string()];
        row.extend(columns.iter().map(|&f| rec.get(f).map(|v| v.to_string()).unwrap_or_default()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleaningRule {
    /// `speed_km_h_max` above [`MAX_SPEED_KM_H`].
    MaxSpeed,
    /// `duration_obj` above [`MAX_DURATION_MIN`].
    Duration,
    /// `distance` above [`MAX_DISTANCE_KM`].
    Distance,
}

impl CleaningRule {
    pub const ALL: [CleaningRule; 3] = [CleaningRule::MaxSpeed, CleaningRule::Duration, CleaningRule::Distance];

    pub fn name(self) -> &'static str {
        match self {
            CleaningRule::MaxSpeed => "max_speed",
            CleaningRule::Duration => "duration",
            CleaningRule::Distance => "distance",
        }
    }

    fn check(self, rec: &PlayerDay) -> Option<f64> {
        let (field, limit) = match self {
            CleaningRule::MaxSpeed => (RawField::SpeedMax, MAX_SPEED_KM_H),
            CleaningRule::Duration => (RawField::DurationObj, MAX_DURATION_MIN),
            CleaningRule::Distance => (RawField::Distance, MAX_DISTANCE_KM),
        };
        rec.get(field).filter(|&v| v > limit)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub row_index: usize,
    pub rule: CleaningRule,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CleaningReport {
    pub input_rows: usize,
    pub retained: usize,
    pub counts: BTreeMap<CleaningRule, usize>,
    pub rejections: Vec<Rejection>,
}

impl CleaningReport {
    pub fn rejected(&self) -> usize {
        self.rejections.len()
    }

    /// Writes `row_index,rule,value` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["row_index", "rule", "value"])?;
        for r in &self.rejections {
            wtr.write_record([r.row_index.to_string(), r.rule.name().to_string(), r.value.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Drops rows that fail a plausibility rule. Thresholds are strict, so values
/// exactly at a limit are kept. A row failing several rules is reported under
/// the first one in [`CleaningRule::ALL`] order.
pub fn clean(records: Vec<PlayerDay>) -> (Vec<PlayerDay>, CleaningReport) {
    let mut report = CleaningReport {
        input_rows: records.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(records.len());
    for (row_index, rec) in records.into_iter().enumerate() {
        let hit = CleaningRule::ALL
            .iter()
            .find_map(|&rule| rule.check(&rec).map(|value| (rule, value)));
        match hit {
            Some((rule, value)) => {
                *report.counts.entry(rule).or_default() += 1;
                report.rejections.push(Rejection { row_index, rule, value });
            }
            None => kept.push(rec),
        }
    }
    report.retained = kept.len();
    (kept, report)
}

/// Parses an injury report CSV (`player_id,date,injury_type,body_part`).
/// The result is sorted by player and date; equal keys keep file order.
pub fn parse_injury_reports(path: impl AsRef<Path>) -> Result<Vec<InjuryEvent>> {
    read_injuries(File::open(path)?)
}

pub fn read_injuries<R: Read>(reader: R) -> Result<Vec<InjuryEvent>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names = ["player_id", "date", "injury_type", "body_part"];
    let cols: Vec<Option<usize>> = names.iter().map(|n| header_index(&headers, n)).collect();
    let missing: Vec<&str> = names
        .iter()
        .zip(&cols)
        .filter(|(_, c)| c.is_none())
        .map(|(n, _)| *n)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!("missing mandatory columns: {}", missing.join(", "))));
    }
    let cols: Vec<usize> = cols.into_iter().flatten().collect();

    let mut events = Vec::new();
    for (index, row) in rdr.records().enumerate() {
        let row = row?;
        let cell = |i: usize| row.get(cols[i]).unwrap_or("").trim();
        if cell(0).is_empty() {
            return Err(Error::row(index, "empty player_id"));
        }
        let date = parse_date(cell(1)).map_err(|m| Error::row(index, m))?;
        let injury_type = cell(2).parse().map_err(|m: String| Error::row(index, m))?;
        events.push(InjuryEvent {
            player_id: cell(0).to_string(),
            date,
            injury_type,
            body_part: cell(3).to_string(),
        });
    }
    events.sort_by(|a, b| (&a.player_id, a.date).cmp(&(&b.player_id, b.date)));
    Ok(events)
}

pub fn write_injuries<W: Write>(events: &[InjuryEvent], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["player_id", "date", "injury_type", "body_part"])?;
    for e in events {
        wtr.write_record([
            e.player_id.clone(),
            e.date.format(DATE_FORMAT).to_string(),
            e.injury_type.to_string(),
            e.body_part.clone(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    #[test]
    fn parses_srpe_row() {
        let csv = "player_id,date,rpe,duration_subj,srpe\np1,2020-05-01,7,60,420\n";
        let data = read_monitoring(csv.as_bytes()).unwrap();
        assert_eq!(data.records.len(), 1);
        let r = &data.records[0];
        assert_eq!(r.get(RawField::Rpe), Some(7.0));
        assert_eq!(r.get(RawField::DurationSubj), Some(60.0));
        assert_eq!(r.get(RawField::Srpe), Some(420.0));
        assert_eq!(r.get(RawField::Fatigue), None);
        assert_eq!(data.columns, vec![RawField::Rpe, RawField::Srpe, RawField::DurationSubj]);
    }

    #[test]
    fn empty_file_with_header_is_empty() {
        let data = read_monitoring("player_id,date,rpe\n".as_bytes()).unwrap();
        assert!(data.records.is_empty());
    }

    #[test]
    fn invalid_calendar_date_is_row_error() {
        let csv = "player_id,date,rpe\np1,2020-05-01,3\np1,2020-13-40,4\n";
        match read_monitoring(csv.as_bytes()) {
            Err(Error::Row { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn missing_mandatory_column_is_schema_error() {
        let err = read_monitoring("player_id,rpe\np1,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("date")), "{err}");
    }

    #[test]
    fn unknown_columns_are_counted() {
        let csv = "player_id,date,heart_rate,rpe,foo\np1,2020-05-01,150,3,x\n";
        let data = read_monitoring(csv.as_bytes()).unwrap();
        assert_eq!(data.ignored_columns, vec!["heart_rate", "foo"]);
        assert_eq!(data.records[0].get(RawField::Rpe), Some(3.0));
    }

    #[test]
    fn empty_cells_are_missing() {
        let csv = "player_id,date,rpe,fatigue\np1,2020-05-01,,2\n";
        let r = &read_monitoring(csv.as_bytes()).unwrap().records[0];
        assert_eq!(r.get(RawField::Rpe), None);
        assert_eq!(r.get(RawField::Fatigue), Some(2.0));
    }

    #[test]
    fn inconsistent_distance_rate_rejected() {
        let csv = "player_id,date,distance,duration_obj,distance_per_min\np1,2020-05-01,6,60,0.2\n";
        assert!(matches!(read_monitoring(csv.as_bytes()), Err(Error::Row { index: 0, .. })));
        let ok = "player_id,date,distance,duration_obj,distance_per_min\np1,2020-05-01,6,60,0.1\n";
        assert!(read_monitoring(ok.as_bytes()).is_ok());
    }

    #[test]
    fn zone_proportions_must_sum_to_at_most_one() {
        let csv = "player_id,date,sp_lir_p,sp_mir_p\np1,2020-05-01,0.7,0.5\n";
        assert!(read_monitoring(csv.as_bytes()).is_err());
    }

    fn rec(speed: Option<f64>, dur: Option<f64>, dist: Option<f64>) -> PlayerDay {
        let mut r = PlayerDay::new("p", d("2020-01-01"));
        r.set(RawField::SpeedMax, speed);
        r.set(RawField::DurationObj, dur);
        r.set(RawField::Distance, dist);
        r
    }

    #[test]
    fn cleaning_rules() {
        let (kept, report) = clean(vec![
            rec(Some(33.0), None, None),
            rec(Some(32.0), Some(200.0), Some(16.0)),
            rec(None, Some(250.0), None),
            rec(None, None, Some(16.5)),
        ]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0], rec(Some(32.0), Some(200.0), Some(16.0)));
        assert_eq!(report.rejections.len(), 3);
        assert_eq!(report.rejections[0], Rejection { row_index: 0, rule: CleaningRule::MaxSpeed, value: 33.0 });
        assert_eq!(report.rejections[1].rule, CleaningRule::Duration);
        assert_eq!(report.rejections[2].rule, CleaningRule::Distance);
        assert_eq!(report.counts[&CleaningRule::MaxSpeed], 1);

        let mut out = Vec::new();
        report.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("row_index,rule,value\n0,max_speed,33\n"));
    }

    #[test]
    fn injury_reports_sorted_and_validated() {
        let csv = "player_id,date,injury_type,body_part\n\
                   p2,2020-05-03,overuse,knee\n\
                   p1,2020-05-01,acute,thigh\n\
                   p1,2020-05-01,overuse,ankle\n";
        let events = read_injuries(csv.as_bytes()).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[0].player_id, "p1");
        assert_eq!(events[0].body_part, "thigh");
        assert_eq!(events[1].body_part, "ankle");
        assert_eq!(events[2].player_id, "p2");

        let bad = "player_id,date,injury_type,body_part\np1,2020-05-01,chronic,knee\n";
        assert!(matches!(read_injuries(bad.as_bytes()), Err(Error::Row { index: 0, .. })));
    }

    fn arb_record() -> impl Strategy<Value = PlayerDay> {
        (
            prop::option::of(20.0f64..40.0),
            prop::option::of(0.0f64..300.0),
            prop::option::of(0.0f64..20.0),
            0u32..5,
        )
            .prop_map(|(s, t, x, day)| {
                let mut r = rec(s, t, x);
                r.date = d("2020-01-01") + chrono::Days::new(day as u64);
                r
            })
    }

    proptest! {
        #[test]
        fn cleaning_counts_add_up(records in prop::collection::vec(arb_record(), 0..60)) {
            let n = records.len();
            let (kept, report) = clean(records);
            prop_assert_eq!(report.rejected() + report.retained, n);
            prop_assert_eq!(kept.len(), report.retained);
            prop_assert_eq!(report.counts.values().sum::<usize>(), report.rejected());
        }

        #[test]
        fn cleaning_is_idempotent(records in prop::collection::vec(arb_record(), 0..60)) {
            let (kept, _) = clean(records);
            let (again, report) = clean(kept.clone());
            prop_assert_eq!(report.rejected(), 0);
            prop_assert_eq!(again, kept);
        }

        #[test]
        fn cleaning_commutes_with_permutation(
            records in prop::collection::vec(arb_record(), 1..40),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut perm: Vec<usize> = (0..records.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<PlayerDay> = perm.iter().map(|&i| records[i].clone()).collect();
            let keep = |r: &PlayerDay| clean(vec![r.clone()]).0.len() == 1;
            let (kept_perm, _) = clean(permuted);
            let expected: Vec<PlayerDay> = perm.iter().map(|&i| &records[i]).filter(|r| keep(r)).cloned().collect();
            prop_assert_eq!(kept_perm, expected);
        }
    }
}
