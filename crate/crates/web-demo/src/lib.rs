//! Browser bindings for a handful of pipeline operations.
//!
//! Each operation has a plain Rust function returning a JSON string (tested on
//! the host) and a `wasm_bindgen` wrapper that the page in `www/` calls.

use injury_forecast::cohort::chronological_split;
use injury_forecast::explain::{background_rows, day_explanation, ShapConfig};
use injury_forecast::features::{acwr, atl, ctl, monotony, strain, ChronicWindow};
use injury_forecast::ingest::clean;
use injury_forecast::metrics::{c_index, c_index_samples};
use injury_forecast::pipeline::{prepare, risk_records, run_holdout, PipelineConfig};
use injury_forecast::synth::{generate, oracle_window_risk, HazardSpec};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Largest cohort the page will simulate; keeps a browser tab responsive.
pub const MAX_PLAYER_DAYS: usize = 12_000;

fn tokens(text: &str) -> Vec<&str> {
    let mut out: Vec<&str> = text.split([',', ';', '\n']).map(str::trim).collect();
    if out.last() == Some(&"") {
        out.pop();
    }
    out
}

/// Parses daily loads; blank entries and `-` are rest days.
pub fn parse_loads(text: &str) -> Result<Vec<Option<f64>>, String> {
    tokens(text)
        .into_iter()
        .enumerate()
        .map(|(i, t)| match t {
            "" | "-" => Ok(None),
            _ => match t.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Ok(Some(v)),
                _ => Err(format!("day {}: {t:?} is not a non-negative load", i + 1)),
            },
        })
        .collect()
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, String> {
    tokens(text)
        .into_iter()
        .map(|t| t.parse().map_err(|_| format!("{what}: cannot parse {t:?}")))
        .collect()
}

fn num(v: Option<f64>) -> Value {
    v.map_or(Value::Null, Value::from)
}

/// Per-day load metrics for one athlete's daily sRPE loads.
pub fn load_metrics_json(text: &str) -> Result<String, String> {
    let loads = parse_loads(text)?;
    if loads.is_empty() {
        return Err("no loads given".into());
    }
    let days: Vec<Value> = (0..loads.len())
        .map(|d| {
            json!({
                "day": d + 1,
                "load": num(loads[d]),
                "atl": num(atl(&loads, d)),
                "monotony": num(monotony(&loads, d)),
                "strain": num(strain(&loads, d)),
                "ctl28": num(ctl(&loads, d, ChronicWindow::Days28)),
                "acwr": num(acwr(&loads, d)),
            })
        })
        .collect();
    Ok(json!({ "days": days }).to_string())
}

/// Harrell's C from comma-separated scores, times and event flags (1/0).
pub fn concordance_json(scores: &str, times: &str, events: &str) -> Result<String, String> {
    let scores: Vec<f64> = parse_list(scores, "scores")?;
    let times: Vec<u32> = parse_list(times, "times")?;
    let flags: Vec<u8> = parse_list(events, "events")?;
    if let Some(bad) = flags.iter().find(|&&f| f > 1) {
        return Err(format!("events: {bad} is not 0 or 1"));
    }
    let events: Vec<bool> = flags.into_iter().map(|f| f == 1).collect();
    let c = c_index(&scores, &times, &events).map_err(|e| e.to_string())?;
    Ok(json!({
        "c_index": num(c.value()),
        "concordant": c.concordant,
        "tied": c.tied,
        "comparable": c.comparable,
    })
    .to_string())
}

/// Simulates a cohort, trains the survival model on its early weeks, scores
/// the rest and explains the riskiest held-out day.
pub fn forecast_json(n_players: usize, n_days: usize, seed: u64, epochs: usize) -> Result<String, String> {
    if n_players * n_days > MAX_PLAYER_DAYS {
        return Err(format!("at most {MAX_PLAYER_DAYS} player-days in the browser"));
    }
    let spec = HazardSpec { seed, ..Default::default() };
    let mut cfg = PipelineConfig::small_cohort();
    cfg.deephit.epochs = epochs;
    if let Some(e) = cfg.validate().into_iter().next() {
        return Err(e);
    }
    let err = |e: injury_forecast::Error| e.to_string();

    let cohort = generate(n_players, n_days, &spec).map_err(err)?;
    let (records, report) = clean(cohort.records.clone());
    let prepared = prepare(&records, &cohort.injuries, &cfg).map_err(err)?;
    let run = run_holdout(&prepared, &cfg).map_err(err)?;
    let horizon = cfg.cohort.horizon;
    let oracle: Vec<f64> = run
        .test
        .iter()
        .map(|s| oracle_window_risk(&spec, &cohort.truth, &s.player_id, s.anchor_date, horizon))
        .collect();
    let oracle_c = c_index_samples(&oracle, &run.test).map_err(err)?;

    let checkpoint = &run.fitted.checkpoint;
    let (train, _) = chronological_split(prepared.samples.clone(), cfg.train_fraction).map_err(err)?;
    let scaled = train
        .iter()
        .map(|s| checkpoint.scaler.transform(&s.x))
        .collect::<injury_forecast::Result<Vec<_>>>()
        .map_err(err)?;
    let shap = ShapConfig { background_size: 50, n_coalitions: 256, seed };
    let background = background_rows(&scaled, shap.background_size, shap.seed);

    let riskiest = run
        .test_scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| &run.test[i])
        .ok_or("no held-out samples")?;
    let lookback = cfg.cohort.lookback;
    let attribution =
        day_explanation(checkpoint, &prepared.panel, &background, &shap, &riskiest.player_id, riskiest.anchor_date, lookback)
            .map_err(err)?;
    let curve = risk_records(checkpoint, std::slice::from_ref(riskiest)).map_err(err)?.remove(0);
    let top: Vec<Value> = attribution
        .top_k(8)
        .into_iter()
        .map(|(feature, phi)| {
            let i = attribution.feature_names.iter().position(|n| *n == feature);
            json!({ "feature": feature, "phi": phi, "value": num(i.and_then(|i| attribution.values[i])) })
        })
        .collect();

    Ok(json!({
        "injuries": cohort.injuries.len(),
        "rejected_rows": report.rejected(),
        "features": prepared.feature_names().len(),
        "train_samples": run.n_train,
        "test_samples": run.test.len(),
        "test_events": run.test.iter().filter(|s| s.event).count(),
        "epochs_run": run.fitted.history.len(),
        "c_index": num(run.concordance.value()),
        "oracle_c_index": num(oracle_c.value()),
        "explained": {
            "player_id": riskiest.player_id,
            "date": riskiest.anchor_date.to_string(),
            "injured_within_horizon": riskiest.event && riskiest.time_to_event as usize <= horizon,
            "prediction": attribution.prediction,
            "base_value": attribution.base_value,
            "cif": curve.cif,
            "top": top,
        },
    })
    .to_string())
}

#[wasm_bindgen]
pub fn load_metrics(text: &str) -> Result<String, JsValue> {
    load_metrics_json(text).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn concordance(scores: &str, times: &str, events: &str) -> Result<String, JsValue> {
    concordance_json(scores, times, events).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn forecast(n_players: usize, n_days: usize, seed: u32, epochs: usize) -> Result<String, JsValue> {
    forecast_json(n_players, n_days, u64::from(seed), epochs).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blanks_are_rest_days() {
        assert_eq!(parse_loads("300, ,-,450,").unwrap(), vec![Some(300.0), None, None, Some(450.0)]);
        assert!(parse_loads("300,abc").unwrap_err().contains("day 2"));
        assert!(parse_loads("-5").is_err());
    }

    #[test]
    fn event_flags_must_be_binary() {
        assert!(concordance_json("1,2", "3,4", "1,2").unwrap_err().contains("events"));
    }
}
