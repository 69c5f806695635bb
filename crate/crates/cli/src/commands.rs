//! One function per subcommand. Each recomputes the stages it depends on
//! from the inputs, so any subcommand can run on its own.

use std::collections::BTreeMap;
use std::fs::File;

use serde::Serialize;

use injury_forecast::baselines::{self, grid_search, Family, GridResult, Holdout, ModelConfig};
use injury_forecast::cohort::{build_binary_samples, chronological_split, write_survival_csv, CohortConfig, SurvivalSample};
use injury_forecast::deephit::{Checkpoint, EpochStats};
use injury_forecast::explain::{
    background_rows, day_explanation, season_attributions, season_importance, Attribution, FeatureImportance,
};
use injury_forecast::features::build_panel;
use injury_forecast::impute::{diagnostics, drop_high_missingness};
use injury_forecast::ingest::{clean, parse_injury_reports, parse_monitoring_csv, write_injuries, write_monitoring};
use injury_forecast::ingest::{CleaningReport, InjuryEvent, PlayerDay};
use injury_forecast::metrics::{c_index_samples, BinaryMetrics, Concordance, LopoReport};
use injury_forecast::pipeline::{fit_survival, prepare, risk_records, run_lopo, Prepared, RiskRecord};
use injury_forecast::synth::{generate, oracle_window_risk};
use injury_forecast::FeaturePanel;

use crate::artifacts::RunDir;
use crate::config::{RunConfig, SplitMode};
use crate::error::CliError;

pub struct Context {
    pub cfg: RunConfig,
    pub run: RunDir,
}

struct Inputs {
    records: Vec<PlayerDay>,
    report: CleaningReport,
    ignored_columns: Vec<String>,
    injuries: Vec<InjuryEvent>,
}

impl Context {
    fn inputs(&self) -> Result<Inputs, CliError> {
        let data = parse_monitoring_csv(self.cfg.monitoring_path())?;
        let injuries = parse_injury_reports(self.cfg.injuries_path())?;
        let (records, report) = clean(data.records);
        if records.is_empty() {
            return Err(injury_forecast::Error::Data("no monitoring rows survive cleaning".into()).into());
        }
        Ok(Inputs {
            records,
            report,
            ignored_columns: data.ignored_columns,
            injuries,
        })
    }

    fn prepared(&self, inputs: &Inputs) -> Result<Prepared, CliError> {
        Ok(prepare(&inputs.records, &inputs.injuries, &self.cfg.pipeline)?)
    }
}

pub fn simulate(ctx: &mut Context) -> Result<(), CliError> {
    let s = &ctx.cfg.simulate;
    let cohort = generate(s.n_players, s.n_days, &s.spec)?;
    let columns = cohort.columns();
    ctx.run
        .write_with("monitoring.csv", |w| Ok(write_monitoring(&cohort.records, &columns, w)?))?;
    ctx.run.write_with("injuries.csv", |w| Ok(write_injuries(&cohort.injuries, w)?))?;
    ctx.run.write_with("truth.csv", |w| Ok(cohort.truth.write_csv(w)?))?;
    #[derive(Serialize)]
    struct Summary {
        n_players: usize,
        n_days: usize,
        n_records: usize,
        n_injuries: usize,
        seed: u64,
    }
    ctx.run.write_json(
        "simulate.json",
        &Summary {
            n_players: s.n_players,
            n_days: s.n_days,
            n_records: cohort.records.len(),
            n_injuries: cohort.injuries.len(),
            seed: s.spec.seed,
        },
    )
}

pub fn ingest(ctx: &mut Context) -> Result<(), CliError> {
    let inputs = ctx.inputs()?;
    ctx.run.write_with("rejections.csv", |w| Ok(inputs.report.write_csv(w)?))?;
    #[derive(Serialize)]
    struct Summary {
        input_rows: usize,
        retained: usize,
        rejected: usize,
        rejected_by_rule: BTreeMap<String, usize>,
        ignored_columns: Vec<String>,
        n_players: usize,
        n_injuries: usize,
    }
    let players: std::collections::BTreeSet<&str> = inputs.records.iter().map(|r| r.player_id.as_str()).collect();
    ctx.run.write_json(
        "ingest.json",
        &Summary {
            input_rows: inputs.report.input_rows,
            retained: inputs.report.retained,
            rejected: inputs.report.rejected(),
            rejected_by_rule: inputs
                .report
                .counts
                .iter()
                .map(|(k, v)| (k.name().to_string(), *v))
                .collect(),
            ignored_columns: inputs.ignored_columns.clone(),
            n_players: players.len(),
            n_injuries: inputs.injuries.len(),
        },
    )
}

#[derive(Serialize)]
struct PanelSummary {
    n_players: usize,
    total_days: usize,
    features: Vec<FeatureMissing>,
}

#[derive(Serialize)]
struct FeatureMissing {
    feature: String,
    missing_fraction: f64,
}

fn panel_summary(panel: &FeaturePanel) -> PanelSummary {
    PanelSummary {
        n_players: panel.players().len(),
        total_days: panel.total_days(),
        features: panel
            .feature_names()
            .iter()
            .enumerate()
            .map(|(j, name)| FeatureMissing {
                feature: name.clone(),
                missing_fraction: panel.missing_fraction(j),
            })
            .collect(),
    }
}

pub fn features(ctx: &mut Context) -> Result<(), CliError> {
    let inputs = ctx.inputs()?;
    let panel = build_panel(&inputs.records, &inputs.injuries)?;
    ctx.run.write_with("features.csv", |w| Ok(panel.write_csv(w)?))?;
    ctx.run.write_json("features.json", &panel_summary(&panel))
}

pub fn impute(ctx: &mut Context) -> Result<(), CliError> {
    let inputs = ctx.inputs()?;
    let raw = build_panel(&inputs.records, &inputs.injuries)?;
    let method = ctx.cfg.pipeline.imputation;
    let imputed = method.apply(&raw);
    let diag = diagnostics(&raw, &imputed, &inputs.injuries);
    let (kept, dropped) = drop_high_missingness(&imputed, ctx.cfg.pipeline.drop_threshold)?;
    ctx.run.write_with("imputed.csv", |w| Ok(kept.write_csv(w)?))?;
    ctx.run.write_with("imputation_diagnostics.csv", |w| Ok(diag.write_csv(w)?))?;
    #[derive(Serialize)]
    struct Summary {
        method: injury_forecast::impute::Imputation,
        drop_threshold: f64,
        dropped: Vec<String>,
        panel: PanelSummary,
    }
    ctx.run.write_json(
        "impute.json",
        &Summary {
            method,
            drop_threshold: ctx.cfg.pipeline.drop_threshold,
            dropped,
            panel: panel_summary(&kept),
        },
    )
}

pub fn build(ctx: &mut Context) -> Result<(), CliError> {
    let inputs = ctx.inputs()?;
    let prepared = ctx.prepared(&inputs)?;
    let names = prepared.feature_names();
    ctx.run
        .write_with("samples.csv", |w| Ok(write_survival_csv(&prepared.samples, &names, w)?))?;
    #[derive(Serialize)]
    struct Summary {
        cohort: CohortConfig,
        n_samples: usize,
        n_events: usize,
        feature_names: Vec<String>,
        dropped_features: Vec<String>,
    }
    ctx.run.write_json(
        "build.json",
        &Summary {
            cohort: ctx.cfg.pipeline.cohort,
            n_samples: prepared.samples.len(),
            n_events: prepared.samples.iter().filter(|s| s.event).count(),
            feature_names: names,
            dropped_features: prepared.dropped.clone(),
        },
    )
}

struct SurvivalHoldout {
    checkpoint: Checkpoint,
    train: Vec<SurvivalSample>,
    test: Vec<SurvivalSample>,
}

/// Chronological split plus a checkpoint: reused from the run directory when
/// present, trained and saved otherwise.
fn survival_holdout(ctx: &mut Context, prepared: &Prepared) -> Result<SurvivalHoldout, CliError> {
    let (train, test) = chronological_split(prepared.samples.clone(), ctx.cfg.pipeline.train_fraction)?;
    let names = prepared.feature_names();
    let path = ctx.run.file("checkpoint.json");
    let checkpoint = if path.exists() {
        log::info!("reusing {}", path.display());
        Checkpoint::load(&path, Some(&names))?
    } else {
        train_and_save(ctx, &train, &names)?
    };
    Ok(SurvivalHoldout { checkpoint, train, test })
}

fn train_and_save(ctx: &mut Context, train: &[SurvivalSample], names: &[String]) -> Result<Checkpoint, CliError> {
    let fitted = fit_survival(train, names, &ctx.cfg.pipeline)?;
    let json = fitted.checkpoint.to_json()?;
    ctx.run.write_text("checkpoint.json", &json)?;
    #[derive(Serialize)]
    struct Training<'a> {
        n_train: usize,
        n_train_events: usize,
        best_epoch: Option<usize>,
        history: &'a [EpochStats],
    }
    ctx.run.write_json(
        "training.json",
        &Training {
            n_train: train.len(),
            n_train_events: train.iter().filter(|s| s.event).count(),
            best_epoch: fitted.best_epoch,
            history: &fitted.history,
        },
    )?;
    Ok(fitted.checkpoint)
}

pub fn train(ctx: &mut Context) -> Result<(), CliError> {
    let inputs = ctx.inputs()?;
    let prepared = ctx.prepared(&inputs)?;
    let (train, _) = chronological_split(prepared.samples.clone(), ctx.cfg.pipeline.train_fraction)?;
    train_and_save(ctx, &train, &prepared.feature_names())?;
    Ok(())
}

#[derive(Serialize)]
struct SurvivalMetrics {
    c_index: Option<f64>,
    concordance: Concordance,
    /// Concordance of the generating hazard, for simulated runs.
    oracle_c_index: Option<f64>,
    n_train: usize,
    n_test: usize,
    n_test_events: usize,
    lopo: Option<LopoSummary>,
}

#[derive(Serialize)]
struct LopoSummary {
    median: Option<f64>,
    iqr: Option<f64>,
    min: Option<f64>,
    max: Option<f64>,
    r_sessions: Option<f64>,
    r_injuries: Option<f64>,
    n_players: usize,
    n_computable: usize,
}

impl From<&LopoReport> for LopoSummary {
    fn from(r: &LopoReport) -> Self {
        LopoSummary {
            median: r.median,
            iqr: r.iqr,
            min: r.min,
            max: r.max,
            r_sessions: r.r_sessions,
            r_injuries: r.r_injuries,
            n_players: r.players.len(),
            n_computable: r.players.iter().filter(|p| p.c_index.is_some()).count(),
        }
    }
}

#[derive(Serialize)]
struct BaselineMetrics {
    family: Family,
    config: ModelConfig,
    metrics: BinaryMetrics,
    weighted_score: f64,
}

#[derive(Serialize)]
struct Metrics {
    split: SplitMode,
    survival: SurvivalMetrics,
    baseline_window: CohortConfig,
    baselines: Vec<BaselineMetrics>,
}

/// Concordance of the generating hazard when the inputs are this run's own
/// simulation output.
fn oracle_c_index(ctx: &Context, test: &[SurvivalSample]) -> Result<Option<f64>, CliError> {
    let truth_path = ctx.run.file("truth.csv");
    if ctx.cfg.data.monitoring.is_some() || ctx.cfg.data.injuries.is_some() || !truth_path.exists() {
        return Ok(None);
    }
    let truth = FeaturePanel::read_csv(File::open(truth_path)?)?;
    let horizon = ctx.cfg.pipeline.cohort.horizon;
    let spec = &ctx.cfg.simulate.spec;
    let scores: Vec<f64> = test
        .iter()
        .map(|s| oracle_window_risk(spec, &truth, &s.player_id, s.anchor_date, horizon))
        .collect();
    Ok(c_index_samples(&scores, test)?.value())
}

fn run_baselines(ctx: &mut Context, panel: &FeaturePanel, injuries: &[InjuryEvent]) -> Result<Vec<BaselineMetrics>, CliError> {
    let b = ctx.cfg.baseline.clone();
    let window = CohortConfig {
        lookback: b.lookback,
        horizon: b.horizon,
        exclusion_days: ctx.cfg.pipeline.cohort.exclusion_days,
    };
    let samples = build_binary_samples(panel, injuries, &window)?;
    let holdout = Holdout::new(&samples, b.train_fraction, b.seed)?;
    let all: Vec<usize> = (0..holdout.n_features()).collect();
    let mut out = Vec::new();
    for &family in &b.families {
        let (config, eval) = if b.grid_search {
            let result: GridResult = grid_search(&b.grid_for(family), &holdout, &b.weights, b.seed)?;
            ctx.run
                .write_with(&format!("leaderboard_{}.csv", family.name()), |w| Ok(result.write_csv(w)?))?;
            let top = &result.leaderboard[0];
            (result.best, baselines::Evaluation { metrics: top.metrics, score: top.score })
        } else {
            let config = family.default_config();
            let e = baselines::evaluate(&config, &holdout, &all, &b.weights, b.seed)?;
            (config, e)
        };
        out.push(BaselineMetrics {
            family,
            config,
            metrics: eval.metrics,
            weighted_score: eval.score,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct RiskCurves<'a> {
    horizon: usize,
    feature_names: &'a [String],
    records: &'a [RiskRecord],
}

pub fn evaluate(ctx: &mut Context) -> Result<(), CliError> {
    let inputs = ctx.inputs()?;
    let prepared = ctx.prepared(&inputs)?;
    let h = survival_holdout(ctx, &prepared)?;
    let scores: Vec<f64> = h
        .test
        .iter()
        .map(|s| h.checkpoint.score_raw(&s.x))
        .collect::<injury_forecast::Result<_>>()?;
    let concordance = c_index_samples(&scores, &h.test)?;
    let records = risk_records(&h.checkpoint, &h.test)?;
    ctx.run.write_json(
        "risk_curves.json",
        &RiskCurves {
            horizon: ctx.cfg.pipeline.cohort.horizon,
            feature_names: &h.checkpoint.feature_names,
            records: &records,
        },
    )?;
    let lopo = match ctx.cfg.split {
        SplitMode::Lopo => Some(lopo_report(ctx, &prepared, &inputs)?),
        SplitMode::Chronological => None,
    };
    let survival = SurvivalMetrics {
        c_index: concordance.value(),
        concordance,
        oracle_c_index: oracle_c_index(ctx, &h.test)?,
        n_train: h.train.len(),
        n_test: h.test.len(),
        n_test_events: h.test.iter().filter(|s| s.event).count(),
        lopo: lopo.as_ref().map(LopoSummary::from),
    };
    let baselines = run_baselines(ctx, &prepared.panel, &inputs.injuries)?;
    let b = &ctx.cfg.baseline;
    let metrics = Metrics {
        split: ctx.cfg.split,
        survival,
        baseline_window: CohortConfig {
            lookback: b.lookback,
            horizon: b.horizon,
            exclusion_days: ctx.cfg.pipeline.cohort.exclusion_days,
        },
        baselines,
    };
    ctx.run.write_json("metrics.json", &metrics)
}

fn lopo_report(ctx: &mut Context, prepared: &Prepared, inputs: &Inputs) -> Result<LopoReport, CliError> {
    let report = run_lopo(prepared, &inputs.records, &inputs.injuries, &ctx.cfg.pipeline)?;
    ctx.run.write_with("lopo_report.csv", |w| Ok(report.write_csv(w)?))?;
    Ok(report)
}

pub fn lopo(ctx: &mut Context) -> Result<(), CliError> {
    let inputs = ctx.inputs()?;
    let prepared = ctx.prepared(&inputs)?;
    let report = lopo_report(ctx, &prepared, &inputs)?;
    ctx.run.write_json("lopo.json", &LopoSummary::from(&report))
}

#[derive(Serialize)]
struct PlayerSeason {
    player_id: String,
    n_days: usize,
    importance: Vec<FeatureImportance>,
}

#[derive(Serialize)]
struct DayTop {
    player_id: String,
    date: chrono::NaiveDate,
    top: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct Shap {
    background_size: usize,
    n_coalitions: usize,
    stride: usize,
    attributions: Vec<Attribution>,
    top_features: Vec<DayTop>,
    season: Vec<PlayerSeason>,
}

pub fn explain(ctx: &mut Context) -> Result<(), CliError> {
    let inputs = ctx.inputs()?;
    let prepared = ctx.prepared(&inputs)?;
    let h = survival_holdout(ctx, &prepared)?;
    let e = ctx.cfg.explain.clone();
    let lookback = ctx.cfg.pipeline.cohort.lookback;

    let scaled: Vec<Vec<f64>> = h
        .train
        .iter()
        .map(|s| h.checkpoint.scaler.transform(&s.x))
        .collect::<injury_forecast::Result<_>>()?;
    let background = background_rows(&scaled, e.shap.background_size, e.shap.seed);

    // Riskiest test day per player.
    let mut riskiest: BTreeMap<String, (f64, chrono::NaiveDate)> = BTreeMap::new();
    for s in &h.test {
        let r = h.checkpoint.score_raw(&s.x)?;
        let slot = riskiest.entry(s.player_id.clone()).or_insert((f64::NEG_INFINITY, s.anchor_date));
        if r > slot.0 {
            *slot = (r, s.anchor_date);
        }
    }
    let players = if e.players.is_empty() {
        let top = riskiest
            .iter()
            .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then_with(|| b.0.cmp(a.0)))
            .map(|(p, _)| p.clone());
        top.into_iter().collect()
    } else {
        e.players.clone()
    };

    let mut attributions = Vec::new();
    let mut season = Vec::new();
    for player in &players {
        let days = season_attributions(&h.checkpoint, &prepared.panel, &background, &e.shap, player, lookback, e.stride)?;
        let date = match riskiest.get(player) {
            Some((_, d)) => *d,
            None => days
                .iter()
                .max_by(|a, b| a.prediction.total_cmp(&b.prediction))
                .map(|a| a.date)
                .ok_or_else(|| injury_forecast::Error::Data(format!("{player} has no day with a full look-back window")))?,
        };
        attributions.push(day_explanation(&h.checkpoint, &prepared.panel, &background, &e.shap, player, date, lookback)?);
        season.push(PlayerSeason {
            player_id: player.clone(),
            n_days: days.len(),
            importance: season_importance(&days),
        });
    }
    let top_features = attributions
        .iter()
        .map(|a| DayTop {
            player_id: a.player_id.clone(),
            date: a.date,
            top: a.top_k(e.top_k),
        })
        .collect();
    ctx.run.write_json(
        "shap.json",
        &Shap {
            background_size: background.len(),
            n_coalitions: e.shap.n_coalitions,
            stride: e.stride,
            attributions,
            top_features,
            season,
        },
    )
}

/// Evaluation, leave-one-player-out and explanations in one go.
pub fn report(ctx: &mut Context) -> Result<(), CliError> {
    evaluate(ctx)?;
    if !ctx.run.written().iter().any(|w| w == "lopo_report.csv") {
        lopo(ctx)?;
    }
    explain(ctx)?;
    #[derive(Serialize)]
    struct Report {
        run_id: String,
        artifacts: Vec<String>,
    }
    let mut artifacts: Vec<String> = ctx.run.written().to_vec();
    artifacts.push("report.json".into());
    artifacts.sort();
    let body = Report {
        run_id: ctx.cfg.run_id(),
        artifacts,
    };
    ctx.run.write_json("report.json", &body)
}
