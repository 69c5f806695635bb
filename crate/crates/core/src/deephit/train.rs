use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DeepHit, DeepHitConfig, MlpConfig};
use crate::cohort::{chronological_split, SurvivalSample};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Full objective on the fitting rows after the epoch, dropout off.
    pub train_loss: f64,
    pub val_nll: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: DeepHit,
    pub history: Vec<EpochStats>,
    /// Epoch whose weights were kept.
    pub best_epoch: Option<usize>,
}

/// Mini-batch gradient descent with an exponentially decaying step.
///
/// The last `validation_fraction` of rows (by anchor date) are held out; the
/// weights with the lowest validation NLL are returned, and training stops
/// after `patience` epochs without improvement. Same seeds give identical
/// results.
pub fn train(samples: &[SurvivalSample], mlp_cfg: &MlpConfig, cfg: &DeepHitConfig) -> Result<TrainedModel> {
    let mut errs = mlp_cfg.validate();
    errs.extend(cfg.validate());
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    if !samples.iter().any(|s| s.event) {
        return Err(Error::Training("training set has no events".into()));
    }
    let n_features = samples[0].x.len();

    let (fit, val) = if cfg.validation_fraction > 0.0 {
        match chronological_split(samples.to_vec(), 1.0 - cfg.validation_fraction) {
            Ok((fit, val)) if fit.iter().any(|s| s.event) => (fit, val),
            _ => (samples.to_vec(), Vec::new()),
        }
    } else {
        (samples.to_vec(), Vec::new())
    };

    let mut model = DeepHit::new(n_features, mlp_cfg, cfg.bins);
    model.check_batch(&fit)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..fit.len()).collect();
    let mut params = model.mlp.params();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32);
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<SurvivalSample> = chunk.iter().map(|&i| fit[i].clone()).collect();
            let dropout = (mlp_cfg.dropout > 0.0).then_some((mlp_cfg.dropout, &mut dropout_rng));
            let (_, mut grad) = model.loss_and_grads(&batch, cfg, dropout);
            if cfg.grad_clip > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.grad_clip {
                    let s = cfg.grad_clip / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= lr * (g + cfg.weight_decay * *p);
            }
            model.mlp.set_params(&params);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training(format!("parameters diverged in epoch {epoch}")));
        }

        let train_loss = model.loss(&fit, cfg)?;
        let val_nll = (!val.is_empty()).then(|| model.mean_nll(&val));
        history.push(EpochStats {
            epoch,
            learning_rate: lr,
            train_loss,
            val_nll,
        });
        if let Some(v) = val_nll {
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, params.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }

    let best_epoch = match best {
        Some((_, epoch, p)) => {
            model.mlp.set_params(&p);
            Some(epoch)
        }
        None => history.last().map(|h| h.epoch),
    };
    Ok(TrainedModel {
        model,
        history,
        best_epoch,
    })
}
