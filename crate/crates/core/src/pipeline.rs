//! End-to-end stages: monitoring rows to samples, survival model fitting,
//! holdout and leave-one-player-out evaluation.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::cohort::{build_survival_samples, chronological_split, lopo_folds, CohortConfig, ScalerStats, SurvivalSample};
use crate::deephit::{train, Checkpoint, DeepHitConfig, EpochStats, MlpConfig, RiskCurve};
use crate::features::{build_panel, trailing_means};
use crate::impute::{drop_high_missingness, Imputation, DEFAULT_DROP_THRESHOLD};
use crate::ingest::{InjuryEvent, PlayerDay};
use crate::metrics::{c_index_samples, lopo_evaluate, Concordance, LopoReport};
use crate::panel::FeaturePanel;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub imputation: Imputation,
    /// Features still missing above this fraction after imputation are dropped.
    pub drop_threshold: f64,
    pub cohort: CohortConfig,
    /// Share of anchors (by date) used for training in the holdout split.
    pub train_fraction: f64,
    pub mlp: MlpConfig,
    pub deephit: DeepHitConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            imputation: Imputation::Bespoke,
            drop_threshold: DEFAULT_DROP_THRESHOLD,
            cohort: CohortConfig::default(),
            train_fraction: 0.8,
            mlp: MlpConfig::default(),
            deephit: DeepHitConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// A compact, regularised network for cohorts of a few dozen players.
    /// The default 64-32 ReLU network overfits such cohorts within a few
    /// epochs.
    pub fn small_cohort() -> Self {
        PipelineConfig {
            mlp: MlpConfig {
                hidden: vec![16],
                activation: crate::deephit::Activation::Tanh,
                dropout: 0.1,
                ..Default::default()
            },
            deephit: DeepHitConfig {
                beta: 0.5,
                sigma: 0.5,
                learning_rate: 0.01,
                weight_decay: 0.01,
                patience: 20,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(0.0..=1.0).contains(&self.drop_threshold) {
            errs.push(format!("drop_threshold must lie in [0, 1], got {}", self.drop_threshold));
        }
        if let Err(e) = self.cohort.validate() {
            errs.push(e.to_string());
        }
        if self.cohort.horizon != self.deephit.bins {
            errs.push(format!(
                "cohort.horizon ({}) must equal deephit.bins ({})",
                self.cohort.horizon, self.deephit.bins
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            errs.push(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        errs.extend(self.mlp.validate());
        errs.extend(self.deephit.validate());
        errs
    }
}

/// Panels and samples produced from cleaned monitoring rows.
#[derive(Clone, Debug)]
pub struct Prepared {
    /// Daily panel before imputation.
    pub raw: FeaturePanel,
    /// Imputed panel with high-missingness features removed.
    pub panel: FeaturePanel,
    pub dropped: Vec<String>,
    pub samples: Vec<SurvivalSample>,
}

impl Prepared {
    pub fn feature_names(&self) -> Vec<String> {
        self.panel.feature_names().to_vec()
    }
}

/// Builds the panel, imputes, drops sparse features and forms samples.
pub fn prepare(records: &[PlayerDay], injuries: &[InjuryEvent], cfg: &PipelineConfig) -> Result<Prepared> {
    let raw = build_panel(records, injuries)?;
    let imputed = cfg.imputation.apply(&raw);
    let (panel, dropped) = drop_high_missingness(&imputed, cfg.drop_threshold)?;
    if !dropped.is_empty() {
        log::info!("dropped {} sparse features: {}", dropped.len(), dropped.join(", "));
    }
    let samples = build_survival_samples(&panel, injuries, &cfg.cohort)?;
    Ok(Prepared {
        raw,
        panel,
        dropped,
        samples,
    })
}

/// A trained model and its training curve.
#[derive(Clone, Debug)]
pub struct Fitted {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
}

impl Fitted {
    /// Risk scores for unscaled samples.
    pub fn scores(&self, samples: &[SurvivalSample]) -> Result<Vec<f64>> {
        samples.iter().map(|s| self.checkpoint.score_raw(&s.x)).collect()
    }
}

/// Fits the scaler on `train` only, then the network.
pub fn fit_survival(train_rows: &[SurvivalSample], feature_names: &[String], cfg: &PipelineConfig) -> Result<Fitted> {
    if train_rows.is_empty() {
        return Err(Error::Training("no training samples".into()));
    }
    let scaler = ScalerStats::fit_samples(train_rows)?;
    let scaled = scaler.apply_survival(train_rows)?;
    let trained = train(&scaled, &cfg.mlp, &cfg.deephit)?;
    Ok(Fitted {
        checkpoint: Checkpoint::new(
            feature_names.to_vec(),
            scaler,
            cfg.mlp.clone(),
            cfg.deephit.clone(),
            trained.model,
        ),
        history: trained.history,
        best_epoch: trained.best_epoch,
    })
}

/// Result of training on early anchors and scoring later ones.
#[derive(Clone, Debug)]
pub struct HoldoutRun {
    pub fitted: Fitted,
    pub n_train: usize,
    pub test: Vec<SurvivalSample>,
    pub test_scores: Vec<f64>,
    pub concordance: Concordance,
}

pub fn run_holdout(prepared: &Prepared, cfg: &PipelineConfig) -> Result<HoldoutRun> {
    let (train_rows, test) = chronological_split(prepared.samples.clone(), cfg.train_fraction)?;
    let fitted = fit_survival(&train_rows, &prepared.feature_names(), cfg)?;
    let test_scores = fitted.scores(&test)?;
    let concordance = c_index_samples(&test_scores, &test)?;
    Ok(HoldoutRun {
        fitted,
        n_train: train_rows.len(),
        test,
        test_scores,
        concordance,
    })
}

/// Recorded days per player in the monitoring rows.
pub fn sessions_per_player(records: &[PlayerDay]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for r in records {
        *out.entry(r.player_id.clone()).or_insert(0) += 1;
    }
    out
}

pub fn injuries_per_player(injuries: &[InjuryEvent]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for e in injuries {
        *out.entry(e.player_id.clone()).or_insert(0) += 1;
    }
    out
}

/// Trains one model per held-out player.
pub fn run_lopo(
    prepared: &Prepared,
    records: &[PlayerDay],
    injuries: &[InjuryEvent],
    cfg: &PipelineConfig,
) -> Result<LopoReport> {
    let folds = lopo_folds(&prepared.samples);
    let names = prepared.feature_names();
    lopo_evaluate(
        &folds,
        &sessions_per_player(records),
        &injuries_per_player(injuries),
        |fold| fit_survival(&fold.train, &names, cfg)?.scores(&fold.test),
    )
}

/// One row of `risk_curves.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskRecord {
    pub player_id: String,
    pub date: NaiveDate,
    pub pmf: Vec<f64>,
    pub cif: Vec<f64>,
    pub risk_score: f64,
}

fn record(player_id: &str, date: NaiveDate, curve: RiskCurve) -> RiskRecord {
    RiskRecord {
        player_id: player_id.to_string(),
        date,
        risk_score: curve.risk_score(),
        pmf: curve.pmf,
        cif: curve.cif,
    }
}

/// Predicted curves for unscaled samples.
pub fn risk_records(checkpoint: &Checkpoint, samples: &[SurvivalSample]) -> Result<Vec<RiskRecord>> {
    samples
        .iter()
        .map(|s| {
            let x = checkpoint.scaler.transform(&s.x)?;
            Ok(record(&s.player_id, s.anchor_date, checkpoint.model.forward(&x)?))
        })
        .collect()
}

/// A player's predicted curve for every day with a full look-back window,
/// whether or not the day would be a training anchor.
pub fn daily_risk_series(
    checkpoint: &Checkpoint,
    panel: &FeaturePanel,
    player: &str,
    lookback: usize,
) -> Result<Vec<RiskRecord>> {
    checkpoint.check_features(panel.feature_names())?;
    let s = panel
        .player(player)
        .ok_or_else(|| Error::Data(format!("unknown player {player:?}")))?;
    let mut out = Vec::new();
    for d in lookback.saturating_sub(1)..s.n_days() {
        let raw: Vec<f64> = trailing_means(s, panel.n_features(), d, lookback)
            .into_iter()
            .map(|v| v.unwrap_or(f64::NAN))
            .collect();
        let x = checkpoint.scaler.transform(&raw)?;
        out.push(record(player, s.date(d), checkpoint.model.forward(&x)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::clean;
    use crate::synth::{generate, HazardSpec};

    fn quick_cfg() -> PipelineConfig {
        PipelineConfig {
            mlp: MlpConfig { hidden: vec![8], ..Default::default() },
            deephit: DeepHitConfig { epochs: 5, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn config_errors_are_collected() {
        let cfg = PipelineConfig {
            drop_threshold: 2.0,
            train_fraction: 1.0,
            cohort: CohortConfig { horizon: 5, ..Default::default() },
            ..Default::default()
        };
        assert_eq!(cfg.validate().len(), 3);
        assert!(PipelineConfig::default().validate().is_empty());
        assert!(PipelineConfig::small_cohort().validate().is_empty());
    }

    #[test]
    fn holdout_run_on_small_cohort() {
        let c = generate(6, 120, &HazardSpec { base_rate: 0.01, ..Default::default() }).unwrap();
        let (records, _) = clean(c.records.clone());
        let cfg = quick_cfg();
        let prepared = prepare(&records, &c.injuries, &cfg).unwrap();
        assert!(prepared.dropped.is_empty());
        let run = run_holdout(&prepared, &cfg).unwrap();
        assert_eq!(run.test_scores.len(), run.test.len());
        assert!(run.n_train > run.test.len());
        let first_test = run.test.iter().map(|s| s.anchor_date).min().unwrap();
        let before = prepared.samples.iter().filter(|s| s.anchor_date < first_test).count();
        assert_eq!(before, run.n_train);

        let records_out = risk_records(&run.fitted.checkpoint, &run.test).unwrap();
        for (r, s) in records_out.iter().zip(&run.test_scores) {
            assert_eq!(r.risk_score, *s);
            assert_eq!(r.pmf.len(), 8);
        }

        let series = daily_risk_series(&run.fitted.checkpoint, &prepared.panel, "P001", 21).unwrap();
        assert_eq!(series.len(), 100);
        // anchors that are samples get the same score either way
        let sample = prepared.samples.iter().find(|s| s.player_id == "P001").unwrap();
        let day = series.iter().find(|r| r.date == sample.anchor_date).unwrap();
        assert_eq!(day.risk_score, run.fitted.checkpoint.score_raw(&sample.x).unwrap());
    }
}
