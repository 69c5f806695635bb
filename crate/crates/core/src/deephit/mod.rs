//! Discrete-time survival network over a fixed horizon of `K` days.
//!
//! An MLP maps a standardized feature vector to `K + 1` logits; their
//! softmax is the probability of injury on each day of the horizon plus the
//! probability of no injury within it. Training minimises a weighted sum of
//! the censored likelihood and a pairwise ranking loss, see [`loss`].

mod checkpoint;
pub mod loss;
mod mlp;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::SurvivalSample;
use crate::{Error, Result};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use mlp::{Activation, Dense, Mlp};
pub use train::{train, EpochStats, TrainedModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub weight_init_scale: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![64, 32],
            activation: Activation::Relu,
            dropout: 0.1,
            weight_init_scale: 1.0,
            seed: 17,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.hidden.is_empty() {
            errs.push("mlp.hidden needs at least one layer".to_string());
        }
        if self.hidden.contains(&0) {
            errs.push("mlp.hidden widths must be >= 1".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            errs.push(format!("mlp.dropout {} must lie in [0, 1)", self.dropout));
        }
        if !(self.weight_init_scale >= 0.0 && self.weight_init_scale.is_finite()) {
            errs.push("mlp.weight_init_scale must be finite and >= 0".to_string());
        }
        errs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepHitConfig {
    /// Number of daily bins in the horizon.
    pub bins: usize,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied once per epoch.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Trailing share of training rows (by date) held out for early stopping.
    pub validation_fraction: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
    /// L2 penalty on all network parameters, applied with each step.
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for DeepHitConfig {
    fn default() -> Self {
        DeepHitConfig {
            bins: 7,
            alpha: 1.0,
            beta: 1.0,
            sigma: 0.1,
            learning_rate: 0.05,
            lr_decay: 0.98,
            batch_size: 64,
            epochs: 200,
            patience: 10,
            validation_fraction: 0.1,
            grad_clip: 5.0,
            weight_decay: 0.0,
            seed: 29,
        }
    }
}

impl DeepHitConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.bins == 0 {
            errs.push("deephit.bins must be >= 1".to_string());
        }
        if self.alpha < 0.0 || self.beta < 0.0 || !(self.alpha + self.beta > 0.0) {
            errs.push("deephit.alpha and beta must be >= 0 with a positive sum".to_string());
        }
        if !(self.sigma > 0.0) {
            errs.push("deephit.sigma must be > 0".to_string());
        }
        if !(self.learning_rate >= 0.0) {
            errs.push("deephit.learning_rate must be >= 0".to_string());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            errs.push("deephit.lr_decay must lie in (0, 1]".to_string());
        }
        if self.batch_size == 0 {
            errs.push("deephit.batch_size must be >= 1".to_string());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            errs.push("deephit.validation_fraction must lie in [0, 1)".to_string());
        }
        if !(self.weight_decay >= 0.0) {
            errs.push("deephit.weight_decay must be >= 0".to_string());
        }
        if self.grad_clip < 0.0 {
            errs.push("deephit.grad_clip must be >= 0".to_string());
        }
        errs
    }
}

/// Predicted distribution of the injury day over the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    /// `K` daily probabilities followed by the beyond-horizon mass.
    pub pmf: Vec<f64>,
    /// Cumulative incidence for days `1..=K`.
    pub cif: Vec<f64>,
}

impl RiskCurve {
    pub fn from_logits(logits: &[f64]) -> RiskCurve {
        let pmf: Vec<f64> = loss::log_softmax(logits).into_iter().map(f64::exp).collect();
        let mut acc = 0.0;
        let cif = pmf[..pmf.len() - 1]
            .iter()
            .map(|p| {
                acc += p;
                acc.min(1.0)
            })
            .collect();
        RiskCurve { pmf, cif }
    }

    /// Probability of injury within the horizon.
    pub fn risk_score(&self) -> f64 {
        self.cif.last().copied().unwrap_or(0.0)
    }
}

/// Scalar ranking score of a curve: the cumulative incidence at the horizon.
pub fn risk_score(curve: &RiskCurve) -> f64 {
    curve.risk_score()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepHit {
    pub mlp: Mlp,
    pub bins: usize,
}

impl DeepHit {
    /// Fresh network with random weights from `mlp_cfg.seed`.
    pub fn new(n_features: usize, mlp_cfg: &MlpConfig, bins: usize) -> DeepHit {
        let mut rng = ChaCha8Rng::seed_from_u64(mlp_cfg.seed);
        DeepHit {
            mlp: Mlp::new(
                n_features,
                &mlp_cfg.hidden,
                bins + 1,
                mlp_cfg.activation,
                mlp_cfg.weight_init_scale,
                &mut rng,
            ),
            bins,
        }
    }

    pub fn n_features(&self) -> usize {
        self.mlp.n_inputs()
    }

    pub fn forward(&self, x: &[f64]) -> Result<RiskCurve> {
        self.check_dim(x.len())?;
        Ok(RiskCurve::from_logits(&self.mlp.logits(x)))
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.risk_score())
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                actual: len,
            });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &[SurvivalSample]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        for s in batch {
            self.check_dim(s.x.len())?;
            if s.time_to_event < 1 || s.time_to_event as usize > self.bins {
                return Err(Error::Data(format!(
                    "time_to_event {} outside 1..={}",
                    s.time_to_event, self.bins
                )));
            }
        }
        Ok(())
    }

    /// Batch loss without dropout.
    pub fn loss(&self, batch: &[SurvivalSample], cfg: &DeepHitConfig) -> Result<f64> {
        self.check_batch(batch)?;
        let logits: Vec<Vec<f64>> = batch.iter().map(|s| self.mlp.logits(&s.x)).collect();
        let times: Vec<usize> = batch.iter().map(|s| s.time_to_event as usize).collect();
        let events: Vec<bool> = batch.iter().map(|s| s.event).collect();
        let view = loss::BatchView {
            logits: &logits,
            times: &times,
            events: &events,
        };
        Ok(loss::loss_and_logit_grads(&view, cfg).0)
    }

    /// Loss and exact parameter gradients (flattened like [`Mlp::params`]),
    /// without dropout.
    pub fn gradients(&self, batch: &[SurvivalSample], cfg: &DeepHitConfig) -> Result<(f64, Vec<f64>)> {
        self.check_batch(batch)?;
        Ok(self.loss_and_grads::<ChaCha8Rng>(batch, cfg, None))
    }

    pub(crate) fn loss_and_grads<R: rand::Rng>(
        &self,
        batch: &[SurvivalSample],
        cfg: &DeepHitConfig,
        mut dropout: Option<(f64, &mut R)>,
    ) -> (f64, Vec<f64>) {
        let traces: Vec<_> = batch
            .iter()
            .map(|s| {
                let d = dropout.as_mut().map(|(rate, rng)| (*rate, &mut **rng));
                self.mlp.trace(&s.x, d)
            })
            .collect();
        let logits: Vec<Vec<f64>> = traces.iter().map(|t| t.logits.clone()).collect();
        let times: Vec<usize> = batch.iter().map(|s| s.time_to_event as usize).collect();
        let events: Vec<bool> = batch.iter().map(|s| s.event).collect();
        let view = loss::BatchView {
            logits: &logits,
            times: &times,
            events: &events,
        };
        let (value, dlogits) = loss::loss_and_logit_grads(&view, cfg);
        let mut grads = self.mlp.zero_grads();
        for (t, g) in traces.iter().zip(&dlogits) {
            self.mlp.backward(t, g, &mut grads);
        }
        (value, mlp::flatten(&grads))
    }

    /// Mean negative log-likelihood, used for early stopping.
    pub fn mean_nll(&self, samples: &[SurvivalSample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        samples
            .iter()
            .map(|s| loss::nll(&self.mlp.logits(&s.x), s.time_to_event as usize, s.event).0)
            .sum::<f64>()
            / samples.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use rand::Rng;

    fn sample(x: Vec<f64>, t: u32, e: bool) -> SurvivalSample {
        SurvivalSample {
            player_id: "p".into(),
            anchor_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            x,
            time_to_event: t,
            event: e,
        }
    }

    #[test]
    fn zero_weights_give_uniform_pmf() {
        let cfg = MlpConfig {
            weight_init_scale: 0.0,
            ..Default::default()
        };
        let m = DeepHit::new(3, &cfg, 7);
        let c = m.forward(&[1.0, -2.0, 0.5]).unwrap();
        for p in &c.pmf {
            assert!((p - 0.125).abs() < 1e-12);
        }
        assert!((c.risk_score() - 7.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn large_first_logit_takes_all_mass() {
        let mut z = vec![0.0; 8];
        z[0] = 60.0;
        let c = RiskCurve::from_logits(&z);
        assert!(c.pmf[0] > 1.0 - 1e-12);
    }

    #[test]
    fn risk_score_extremes() {
        let mut z = vec![-80.0; 8];
        z[7] = 80.0;
        assert!(RiskCurve::from_logits(&z).risk_score() < 1e-12);
        let mut z = vec![0.0; 8];
        z[7] = -80.0;
        assert!((RiskCurve::from_logits(&z).risk_score() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let m = DeepHit::new(3, &MlpConfig::default(), 7);
        assert!(matches!(m.forward(&[1.0]), Err(Error::DimensionMismatch { expected: 3, actual: 1 })));
        assert!(m.loss(&[], &DeepHitConfig::default()).is_err());
    }

    #[test]
    fn loss_is_batch_permutation_invariant() {
        let m = DeepHit::new(2, &MlpConfig::default(), 7);
        let batch = vec![
            sample(vec![0.1, 0.2], 3, true),
            sample(vec![-1.0, 0.5], 7, false),
            sample(vec![0.4, -0.3], 5, true),
            sample(vec![2.0, 1.0], 6, false),
        ];
        let cfg = DeepHitConfig::default();
        let a = m.loss(&batch, &cfg).unwrap();
        let mut rev = batch.clone();
        rev.reverse();
        let b = m.loss(&rev, &cfg).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn beta_zero_gradient_equals_nll_gradient() {
        let m = DeepHit::new(2, &MlpConfig::default(), 7);
        let batch = vec![sample(vec![0.1, 0.2], 3, true), sample(vec![-1.0, 0.5], 7, false)];
        let nll_only = DeepHitConfig { beta: 0.0, ..Default::default() };
        let (_, g) = m.gradients(&batch, &nll_only).unwrap();
        // Average of single-sample NLL gradients.
        let (_, g0) = m.gradients(&batch[..1], &nll_only).unwrap();
        let (_, g1) = m.gradients(&batch[1..], &nll_only).unwrap();
        for i in 0..g.len() {
            assert!((g[i] - (g0[i] + g1[i]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let m = DeepHit::new(2, &MlpConfig::default(), 7);
        let batch = vec![sample(vec![0.1, 0.2], 3, true), sample(vec![-1.0, 0.5], 7, false)];
        let mut doubled = batch.clone();
        doubled.extend(batch.clone());
        let cfg = DeepHitConfig::default();
        let (la, ga) = m.gradients(&batch, &cfg).unwrap();
        let (lb, gb) = m.gradients(&doubled, &cfg).unwrap();
        assert!((la - lb).abs() < 1e-12);
        for (a, b) in ga.iter().zip(&gb) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..20u64 {
            let n_in = rng.random_range(1..5);
            let hidden: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(2..6)).collect();
            let mlp_cfg = MlpConfig { hidden, activation: Activation::Tanh, seed: case, ..Default::default() };
            let m = DeepHit::new(n_in, &mlp_cfg, 7);
            let batch: Vec<SurvivalSample> = (0..6)
                .map(|_| {
                    let x = (0..n_in).map(|_| rng.random_range(-2.0..2.0)).collect();
                    sample(x, rng.random_range(1..=7), rng.random_bool(0.5))
                })
                .collect();
            let cfg = DeepHitConfig { alpha: 0.6, beta: 0.8, sigma: 0.5, ..Default::default() };
            let (_, g) = m.gradients(&batch, &cfg).unwrap();
            let p0 = m.mlp.params();
            let h = 1e-5;
            for i in 0..p0.len() {
                let at = |d: f64| {
                    let mut mm = m.clone();
                    let mut p = p0.clone();
                    p[i] += d;
                    mm.mlp.set_params(&p);
                    mm.loss(&batch, &cfg).unwrap()
                };
                let fd = (at(h) - at(-h)) / (2.0 * h);
                let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
                assert!(rel < 1e-4, "case {case} param {i}: {fd} vs {}", g[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn curves_are_valid(seed in any::<u64>(), scale in 0.1f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = MlpConfig { seed, weight_init_scale: scale, hidden: vec![6], ..Default::default() };
            let m = DeepHit::new(4, &cfg, 7);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-10.0..10.0)).collect();
            let c = m.forward(&x).unwrap();
            prop_assert!((c.pmf.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(c.pmf.iter().all(|&p| p >= 0.0));
            prop_assert!(c.cif.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(c.risk_score() <= 1.0);
        }
    }
}
