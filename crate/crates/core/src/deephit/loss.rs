//! Likelihood and ranking loss on the softmax head, with gradients with
//! respect to the logits.
//!
//! The head has `K + 1` outputs: one per day of the horizon plus a
//! beyond-horizon bucket. Over a batch of `n` samples with `P` ranking pairs
//!
//! ```text
//! L = alpha * (1/n) Σ_i nll_i + beta * (1/P) Σ_(i,j) exp(-(F_i(t_i) - F_j(t_i)) / sigma)
//! ```
//!
//! where `nll_i = -log p_i(t_i)` for an injury and `-log(1 - F_i(t_i))` when
//! censored, `F` is the cumulative incidence, and pairs run over `i` with an
//! event and `t_i < t_j`.

use super::DeepHitConfig;

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Negative log-likelihood of one sample and its gradient w.r.t. the logits.
/// `time` is 1-based.
pub fn nll(logits: &[f64], time: usize, event: bool) -> (f64, Vec<f64>) {
    let logp = log_softmax(logits);
    let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    if event {
        let mut g = p;
        g[time - 1] -= 1.0;
        (-logp[time - 1], g)
    } else {
        // Survival past `time` is the mass of buckets time+1 ..= K+1.
        let log_s = log_sum_exp(&logp[time..]);
        let s = log_s.exp();
        let g = p
            .iter()
            .enumerate()
            .map(|(m, &pm)| if m >= time { pm - pm / s } else { pm })
            .collect();
        (-log_s, g)
    }
}

/// Per-sample logits, times and event flags for one batch.
pub struct BatchView<'a> {
    pub logits: &'a [Vec<f64>],
    pub times: &'a [usize],
    pub events: &'a [bool],
}

/// Batch loss and `dL/dlogits` for every sample.
pub fn loss_and_logit_grads(batch: &BatchView<'_>, cfg: &DeepHitConfig) -> (f64, Vec<Vec<f64>>) {
    let n = batch.logits.len();
    let k1 = batch.logits.first().map_or(0, Vec::len);
    let mut grads = vec![vec![0.0; k1]; n];
    let mut total = 0.0;

    if cfg.alpha > 0.0 {
        let scale = cfg.alpha / n as f64;
        for i in 0..n {
            let (l, g) = nll(&batch.logits[i], batch.times[i], batch.events[i]);
            total += scale * l;
            for (acc, v) in grads[i].iter_mut().zip(g) {
                *acc += scale * v;
            }
        }
    }

    if cfg.beta > 0.0 {
        let probs: Vec<Vec<f64>> = batch
            .logits
            .iter()
            .map(|z| log_softmax(z).into_iter().map(f64::exp).collect())
            .collect();
        // cif[i][k - 1] = F_i(k) for 1-based k.
        let cif: Vec<Vec<f64>> = probs
            .iter()
            .map(|p| {
                p.iter()
                    .scan(0.0, |acc, v| {
                        *acc += v;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        // dL/dF_s(k) per sample and bin, scaled by 1/P once P is known.
        let mut dcif = vec![vec![0.0; k1]; n];
        let mut n_pairs = 0usize;
        let mut eta_sum = 0.0;
        for i in 0..n {
            if !batch.events[i] {
                continue;
            }
            let ti = batch.times[i];
            let fi = cif[i][ti - 1];
            let mut eta_i = 0.0;
            for j in 0..n {
                if batch.times[j] > ti {
                    let eta = (-(fi - cif[j][ti - 1]) / cfg.sigma).exp();
                    n_pairs += 1;
                    eta_i += eta;
                    dcif[j][ti - 1] += eta / cfg.sigma;
                }
            }
            eta_sum += eta_i;
            dcif[i][ti - 1] -= eta_i / cfg.sigma;
        }
        if n_pairs > 0 {
            let scale = cfg.beta / n_pairs as f64;
            total += scale * eta_sum;
            dcif.iter_mut().flatten().for_each(|v| *v *= scale);
            for s in 0..n {
                if dcif[s].iter().all(|&c| c == 0.0) {
                    continue;
                }
                let p = &probs[s];
                // dF(k)/dz_m = p_m ([m < k] - F(k)) with m 0-based, k 1-based.
                let mut f = 0.0;
                let mut weighted_f = 0.0;
                for k in 1..k1 {
                    f += p[k - 1];
                    weighted_f += dcif[s][k - 1] * f;
                }
                let mut suffix = 0.0;
                for m in (0..k1).rev() {
                    // Σ_{k > m} dcif[k] over 1-based k, i.e. indices k-1 >= m.
                    if m < k1 - 1 {
                        suffix += dcif[s][m];
                    }
                    grads[s][m] += p[m] * (suffix - weighted_f);
                }
            }
        }
    }
    (total, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(alpha: f64, beta: f64) -> DeepHitConfig {
        DeepHitConfig {
            alpha,
            beta,
            ..Default::default()
        }
    }

    /// Logits whose softmax is exactly `p`.
    fn logits_for(p: &[f64]) -> Vec<f64> {
        p.iter().map(|v| v.ln()).collect()
    }

    #[test]
    fn event_likelihood() {
        let z = logits_for(&[0.1, 0.5, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05]);
        let (l, _) = loss_and_logit_grads(
            &BatchView { logits: &[z], times: &[2], events: &[true] },
            &cfg(1.0, 0.0),
        );
        assert!((l - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn censored_likelihood() {
        let z = logits_for(&[0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.2]);
        let (l, _) = loss_and_logit_grads(
            &BatchView { logits: &[z], times: &[1], events: &[false] },
            &cfg(1.0, 0.0),
        );
        assert!((l - 0.2231).abs() < 1e-4);
    }

    #[test]
    fn equal_cif_pair_costs_one() {
        let z = vec![0.0; 8];
        let (l, _) = loss_and_logit_grads(
            &BatchView { logits: &[z.clone(), z], times: &[2, 5], events: &[true, false] },
            &cfg(0.0, 1.0),
        );
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_pairs_no_ranking_loss() {
        let z = vec![0.0; 8];
        let (l, g) = loss_and_logit_grads(
            &BatchView { logits: &[z.clone(), z], times: &[3, 3], events: &[false, false] },
            &cfg(0.0, 1.0),
        );
        assert_eq!(l, 0.0);
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn logit_gradients_match_finite_differences() {
        let logits = vec![
            vec![0.3, -0.2, 0.5, 0.0, -1.0, 0.2, 0.1, 0.4],
            vec![-0.1, 0.6, 0.0, 0.3, 0.2, -0.4, 0.5, 0.0],
            vec![0.2, 0.2, -0.3, 0.1, 0.0, 0.7, -0.2, 0.3],
            vec![0.0, -0.5, 0.4, 0.2, 0.1, 0.0, 0.3, -0.1],
        ];
        let times = [2, 5, 7, 3];
        let events = [true, false, true, false];
        let c = DeepHitConfig { alpha: 0.7, beta: 1.3, sigma: 0.5, ..Default::default() };
        let f = |z: &[Vec<f64>]| loss_and_logit_grads(&BatchView { logits: z, times: &times, events: &events }, &c).0;
        let (_, g) = loss_and_logit_grads(&BatchView { logits: &logits, times: &times, events: &events }, &c);
        let h = 1e-6;
        for i in 0..logits.len() {
            for m in 0..8 {
                let mut up = logits.clone();
                up[i][m] += h;
                let mut dn = logits.clone();
                dn[i][m] -= h;
                let fd = (f(&up) - f(&dn)) / (2.0 * h);
                assert!((fd - g[i][m]).abs() < 1e-7, "sample {i} logit {m}: {fd} vs {}", g[i][m]);
            }
        }
    }

    #[test]
    fn single_bin_matches_cross_entropy() {
        // K = 1: two logits, event at day 1 is class 0, censoring is class 1.
        let z: Vec<f64> = vec![0.4, -0.9];
        let sig = 1.0 / (1.0 + (-(z[0] - z[1])).exp());
        let (le, _) = nll(&z, 1, true);
        let (lc, _) = nll(&z, 1, false);
        assert!((le + sig.ln()).abs() < 1e-12);
        assert!((lc + (1.0 - sig).ln()).abs() < 1e-12);
    }
}
