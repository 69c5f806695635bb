//! Run configuration: TOML file, preset defaults and command-line overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use injury_forecast::baselines::{Family, GridSpec, ScorerWeights};
use injury_forecast::explain::ShapConfig;
use injury_forecast::pipeline::PipelineConfig;
use injury_forecast::synth::HazardSpec;

use crate::error::CliError;

/// Environment variable naming the default output root.
pub const RUNS_ENV: &str = "INJURY_FORECAST_RUNS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Default,
    /// Compact survival network, see `PipelineConfig::small_cohort`.
    SmallCohort,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Chronological,
    Lopo,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Defaults to `monitoring.csv` in the run directory (written by `simulate`).
    pub monitoring: Option<PathBuf>,
    pub injuries: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_players: usize,
    pub n_days: usize,
    pub spec: HazardSpec,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            n_players: 30,
            n_days: 300,
            spec: HazardSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub families: Vec<Family>,
    pub lookback: usize,
    pub horizon: usize,
    pub train_fraction: f64,
    /// Search each family's grid; otherwise fit the family defaults.
    pub grid_search: bool,
    /// Grids by family; families without one use the built-in grid.
    pub grids: Vec<GridSpec>,
    pub weights: ScorerWeights,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            families: Family::ALL.to_vec(),
            lookback: 7,
            horizon: 7,
            train_fraction: 0.8,
            grid_search: true,
            grids: Vec::new(),
            weights: ScorerWeights::default(),
            seed: 3,
        }
    }
}

impl BaselineConfig {
    pub fn grid_for(&self, family: Family) -> GridSpec {
        self.grids
            .iter()
            .find(|g| g.family() == family)
            .cloned()
            .unwrap_or_else(|| GridSpec::default_for(family))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub shap: ShapConfig,
    /// Players to explain; empty picks the player with the riskiest test day.
    pub players: Vec<String>,
    /// Day step for season importance.
    pub stride: usize,
    pub top_k: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            shap: ShapConfig::default(),
            players: Vec::new(),
            stride: 7,
            top_k: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub run_id: Option<String>,
    pub output_root: Option<PathBuf>,
    pub split: SplitMode,
    pub data: DataConfig,
    pub simulate: SimulateConfig,
    pub pipeline: PipelineConfig,
    pub baseline: BaselineConfig,
    pub explain: ExplainConfig,
}

impl RunConfig {
    pub fn for_preset(preset: Preset) -> RunConfig {
        RunConfig {
            preset,
            pipeline: match preset {
                Preset::Default => PipelineConfig::default(),
                Preset::SmallCohort => PipelineConfig::small_cohort(),
            },
            ..Default::default()
        }
    }

    /// Reads `path` (if any), lays it over the preset defaults and applies
    /// `overrides` (dotted key, value) last.
    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<RunConfig, CliError> {
        let mut user = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let mut errs = Vec::new();
        for (key, value) in overrides {
            if let Err(e) = set_path(&mut user, key, value.clone()) {
                errs.push(e);
            }
        }
        if !errs.is_empty() {
            return Err(CliError::Config(errs));
        }
        let preset: Preset = match user.get("preset") {
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| CliError::config(format!("preset: {e}")))?,
            None => Preset::Default,
        };
        let mut merged = toml::Table::try_from(RunConfig::for_preset(preset))
            .map_err(|e| CliError::config(format!("cannot encode defaults: {e}")))?;
        merge(&mut merged, user);
        toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(e.message().to_string()))
    }

    /// Problems that make the configuration unusable, all of them.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.pipeline.validate();
        errs.extend(self.explain.shap.validate());
        if self.explain.stride == 0 {
            errs.push("explain.stride must be >= 1".into());
        }
        let b = &self.baseline;
        errs.extend(b.weights.validate());
        if b.families.is_empty() {
            errs.push("baseline.families is empty".into());
        }
        if b.lookback == 0 || b.horizon == 0 {
            errs.push("baseline.lookback and baseline.horizon must be >= 1".into());
        }
        if !(b.train_fraction > 0.0 && b.train_fraction < 1.0) {
            errs.push(format!("baseline.train_fraction must lie in (0, 1), got {}", b.train_fraction));
        }
        for g in &b.grids {
            errs.extend(g.validate());
        }
        errs.extend(self.simulate.spec.validate());
        if self.simulate.n_players < 2 {
            errs.push("simulate.n_players must be >= 2".into());
        }
        if self.simulate.n_days == 0 {
            errs.push("simulate.n_days must be >= 1".into());
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || id.starts_with('.') {
                errs.push(format!("run_id {id:?} may only use letters, digits, '-', '_' and '.'"));
            }
        }
        errs
    }

    /// Short hash of everything except where the run is stored.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run_id = None;
        c.output_root = None;
        let json = serde_json::to_string(&c).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        let mut out = String::new();
        for b in &digest[..6] {
            write!(out, "{b:02x}").unwrap();
        }
        out
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| self.hash())
    }

    pub fn output_root(&self) -> PathBuf {
        self.output_root
            .clone()
            .or_else(|| std::env::var_os(RUNS_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_root().join(self.run_id())
    }

    pub fn monitoring_path(&self) -> PathBuf {
        self.data.monitoring.clone().unwrap_or_else(|| self.run_dir().join("monitoring.csv"))
    }

    pub fn injuries_path(&self) -> PathBuf {
        self.data.injuries.clone().unwrap_or_else(|| self.run_dir().join("injuries.csv"))
    }

    /// The effective configuration as TOML.
    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::config(format!("cannot encode config: {e}")))
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("invalid key {key:?}"));
    }
    let mut t = table;
    for part in &parts[..parts.len() - 1] {
        let entry = t
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| format!("{key}: {part} is not a table"))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses `key=value` where value is TOML (bare words become strings).
pub fn parse_assignment(s: &str) -> Result<(String, toml::Value), String> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load_str(text: &str, overrides: &[(String, toml::Value)]) -> Result<RunConfig, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, text).unwrap();
        RunConfig::load(Some(&p), overrides)
    }

    #[test]
    fn empty_config_is_default() {
        assert_eq!(RunConfig::load(None, &[]).unwrap(), RunConfig::default());
        assert!(RunConfig::default().validate().is_empty());
    }

    #[test]
    fn file_then_overrides() {
        let c = load_str(
            "[pipeline.deephit]\nepochs = 3\nlearning_rate = 0.2\n",
            &[parse_assignment("pipeline.deephit.learning_rate=0.5").unwrap()],
        )
        .unwrap();
        assert_eq!(c.pipeline.deephit.epochs, 3);
        assert_eq!(c.pipeline.deephit.learning_rate, 0.5);
        assert_eq!(c.pipeline.deephit.batch_size, 64);
    }

    #[test]
    fn preset_supplies_base_values() {
        let c = load_str("preset = \"small_cohort\"\n[pipeline.mlp]\ndropout = 0.0\n", &[]).unwrap();
        assert_eq!(c.pipeline.mlp.hidden, vec![16]);
        assert_eq!(c.pipeline.mlp.dropout, 0.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = load_str("[pipeline]\nlerning_rate = 1\n", &[]).unwrap_err();
        assert!(e.to_string().contains("lerning_rate"), "{e}");
    }

    #[test]
    fn every_validation_problem_is_listed() {
        let mut c = RunConfig::default();
        c.pipeline.drop_threshold = 3.0;
        c.explain.stride = 0;
        c.baseline.families.clear();
        c.simulate.n_players = 1;
        assert_eq!(c.validate().len(), 4, "{:?}", c.validate());
    }

    #[test]
    fn hash_ignores_location_only() {
        let a = RunConfig::default();
        let b = RunConfig {
            run_id: Some("x".into()),
            output_root: Some("/tmp/elsewhere".into()),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.pipeline.deephit.epochs = 5;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 12);
    }

    #[test]
    fn assignments_parse_toml_or_fall_back_to_strings() {
        assert_eq!(parse_assignment("a.b=3").unwrap().1, toml::Value::Integer(3));
        assert_eq!(parse_assignment("a=[1, 2]").unwrap().1.as_array().unwrap().len(), 2);
        assert_eq!(parse_assignment("a=data/x.csv").unwrap().1, toml::Value::String("data/x.csv".into()));
        assert!(parse_assignment("novalue").is_err());
    }

    #[test]
    fn effective_config_round_trips_through_toml() {
        let mut c = RunConfig::for_preset(Preset::SmallCohort);
        c.data.monitoring = Some("m.csv".into());
        let text = c.to_toml().unwrap();
        assert_eq!(load_str(&text, &[]).unwrap(), c);
    }
}
