//! Concordance, binary classification metrics and per-player reports.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cohort::SurvivalSample;
use crate::{Error, Result};

/// Pair counts behind Harrell's C-index.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concordance {
    pub concordant: u64,
    pub tied: u64,
    pub comparable: u64,
}

impl Concordance {
    /// `None` when no pair is comparable.
    pub fn value(&self) -> Option<f64> {
        (self.comparable > 0)
            .then(|| (2 * self.concordant + self.tied) as f64 / (2 * self.comparable) as f64)
    }
}

struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< i`.
    fn below(&self, i: usize) -> u64 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's C-index.
///
/// A pair `(i, j)` is comparable when `times[i] < times[j]` and `i` had the
/// event. It is concordant when `scores[i] > scores[j]`; equal scores count
/// half. Runs in `O(n log n)`.
pub fn c_index(scores: &[f64], times: &[u32], events: &[bool]) -> Result<Concordance> {
    let n = scores.len();
    if times.len() != n || events.len() != n {
        return Err(Error::Data(format!(
            "c_index inputs differ in length: {} scores, {} times, {} events",
            n,
            times.len(),
            events.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("c_index scores contain NaN".into()));
    }
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank = |s: f64| sorted.binary_search_by(|x| x.total_cmp(&s)).unwrap();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].cmp(&times[a]));

    let mut tree = Fenwick::new(sorted.len());
    let mut counts = vec![0u64; sorted.len()];
    let mut inserted = 0u64;
    let mut out = Concordance::default();
    let mut g = 0;
    while g < n {
        let t = times[order[g]];
        let end = order[g..].iter().position(|&i| times[i] != t).map_or(n, |p| g + p);
        for &i in &order[g..end] {
            if events[i] {
                let r = rank(scores[i]);
                out.concordant += tree.below(r);
                out.tied += counts[r];
                out.comparable += inserted;
            }
        }
        for &i in &order[g..end] {
            let r = rank(scores[i]);
            tree.add(r);
            counts[r] += 1;
            inserted += 1;
        }
        g = end;
    }
    Ok(out)
}

/// C-index of risk scores over survival samples.
pub fn c_index_samples(scores: &[f64], samples: &[SurvivalSample]) -> Result<Concordance> {
    let times: Vec<u32> = samples.iter().map(|s| s.time_to_event).collect();
    let events: Vec<bool> = samples.iter().map(|s| s.event).collect();
    c_index(scores, &times, &events)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
}

impl BinaryMetrics {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        BinaryMetrics {
            tp,
            fp,
            tn,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
            auc: None,
        }
    }
}

/// Area under the ROC curve via the rank-sum statistic with average ranks
/// for ties. `None` unless both classes are present.
pub fn auc(probas: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..probas.len()).collect();
    order.sort_by(|&a, &b| probas[a].total_cmp(&probas[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && probas[order[j + 1]] == probas[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Confusion counts at `threshold` (predict positive when `p >= threshold`)
/// plus threshold-free AUC.
pub fn binary_metrics(probas: &[f64], labels: &[bool], threshold: f64) -> Result<BinaryMetrics> {
    if probas.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: probas.len(),
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in probas.iter().zip(labels) {
        match (p >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let mut m = BinaryMetrics::from_counts(tp, fp, tn, fn_);
    m.auc = auc(probas, labels);
    Ok(m)
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerLopo {
    pub player_id: String,
    /// `None` when the held-out player has no comparable pair.
    pub c_index: Option<f64>,
    pub n_samples: usize,
    pub n_sessions_tracked: usize,
    pub n_injuries: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LopoReport {
    pub players: Vec<PlayerLopo>,
    pub median: Option<f64>,
    pub iqr: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub r_sessions: Option<f64>,
    pub r_injuries: Option<f64>,
}

impl LopoReport {
    /// Aggregates per-player results; players without a C-index are kept in
    /// the table but excluded from the summary statistics.
    pub fn from_players(players: Vec<PlayerLopo>) -> Self {
        let rows: Vec<&PlayerLopo> = players.iter().filter(|p| p.c_index.is_some()).collect();
        let mut cs: Vec<f64> = rows.iter().filter_map(|p| p.c_index).collect();
        cs.sort_by(f64::total_cmp);
        let sessions: Vec<f64> = rows.iter().map(|p| p.n_sessions_tracked as f64).collect();
        let injuries: Vec<f64> = rows.iter().map(|p| p.n_injuries as f64).collect();
        let by_player: Vec<f64> = rows.iter().filter_map(|p| p.c_index).collect();
        let has = !cs.is_empty();
        LopoReport {
            median: has.then(|| quantile(&cs, 0.5)),
            iqr: has.then(|| quantile(&cs, 0.75) - quantile(&cs, 0.25)),
            min: cs.first().copied(),
            max: cs.last().copied(),
            r_sessions: pearson_r(&by_player, &sessions),
            r_injuries: pearson_r(&by_player, &injuries),
            players,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["player_id", "c_index", "computable", "n_samples", "n_sessions_tracked", "n_injuries"])?;
        for p in &self.players {
            wtr.write_record([
                p.player_id.clone(),
                p.c_index.map(|c| c.to_string()).unwrap_or_default(),
                p.c_index.is_some().to_string(),
                p.n_samples.to_string(),
                p.n_sessions_tracked.to_string(),
                p.n_injuries.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// One train/test fold.
#[derive(Clone, Debug)]
pub struct Fold<T> {
    pub held_out: String,
    pub train: Vec<T>,
    pub test: Vec<T>,
}

/// Leave-one-player-out evaluation.
///
/// `fit_score` trains on a fold's training rows and returns risk scores for
/// its test rows. `sessions` and `injuries` give per-player context counts.
pub fn lopo_evaluate<F>(
    folds: &[Fold<SurvivalSample>],
    sessions: &BTreeMap<String, usize>,
    injuries: &BTreeMap<String, usize>,
    mut fit_score: F,
) -> Result<LopoReport>
where
    F: FnMut(&Fold<SurvivalSample>) -> Result<Vec<f64>>,
{
    let mut players = Vec::with_capacity(folds.len());
    for fold in folds {
        let has_event = fold.test.iter().any(|s| s.event);
        let c = if has_event {
            let scores = fit_score(fold)?;
            c_index_samples(&scores, &fold.test)?.value()
        } else {
            None
        };
        players.push(PlayerLopo {
            player_id: fold.held_out.clone(),
            c_index: c,
            n_samples: fold.test.len(),
            n_sessions_tracked: sessions.get(&fold.held_out).copied().unwrap_or(0),
            n_injuries: injuries.get(&fold.held_out).copied().unwrap_or(0),
        });
    }
    Ok(LopoReport::from_players(players))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(scores: &[f64], times: &[u32], events: &[bool]) -> Concordance {
        let mut c = Concordance::default();
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if events[i] && times[i] < times[j] {
                    c.comparable += 1;
                    if scores[i] > scores[j] {
                        c.concordant += 1;
                    } else if scores[i] == scores[j] {
                        c.tied += 1;
                    }
                }
            }
        }
        c
    }

    #[test]
    fn c_index_examples() {
        let all = [true; 3];
        assert_eq!(c_index(&[0.9, 0.5, 0.1], &[1, 2, 3], &all).unwrap().value(), Some(1.0));
        let c = c_index(&[0.5, 0.9, 0.1], &[1, 2, 3], &all).unwrap();
        assert_eq!(c, brute(&[0.5, 0.9, 0.1], &[1, 2, 3], &all));
        assert_eq!(c.value(), Some(2.0 / 3.0));
        assert_eq!(c_index(&[0.3, 0.7], &[2, 2], &[true, false]).unwrap().value(), None);
        assert!(c_index(&[0.1], &[1, 2], &[true]).is_err());
    }

    #[test]
    fn binary_metric_examples() {
        // 4 TP, 0 FP, 7 FN, plus some negatives.
        let m = BinaryMetrics::from_counts(4, 0, 100, 7);
        assert!((m.precision.unwrap() - 1.0).abs() < 1e-12);
        assert!((m.recall.unwrap() - 0.364).abs() < 5e-4);
        assert!((m.f1.unwrap() - 0.533).abs() < 5e-4);

        let m = binary_metrics(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true], 0.5).unwrap();
        assert_eq!(m.auc, Some(1.0));
        assert_eq!(m.f1, Some(1.0));

        let m = binary_metrics(&[0.3; 4], &[false, true, false, true], 0.5).unwrap();
        assert_eq!(m.auc, Some(0.5));
        assert_eq!(m.precision, None);
        assert_eq!(m.f1, Some(0.0));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 4.0, 7.0];
        assert!((pearson_r(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        // Hand oracle: x mean 3.5, y = [2, 1, 4, 3] mean 2.5.
        // Sxy = (-2.5)(-0.5) + (-1.5)(-1.5) + (0.5)(1.5) + (3.5)(0.5) = 6
        // Sxx = 6.25 + 2.25 + 0.25 + 12.25 = 21, Syy = 0.25 + 2.25 + 2.25 + 0.25 = 5
        let y = [2.0, 1.0, 4.0, 3.0];
        assert!((pearson_r(&x, &y).unwrap() - 6.0 / (21.0f64 * 5.0).sqrt()).abs() < 1e-12);
        assert_eq!(pearson_r(&x, &[1.0; 4]), None);
    }

    #[test]
    fn lopo_summary() {
        let row = |id: &str, c: Option<f64>, s: usize| PlayerLopo {
            player_id: id.into(),
            c_index: c,
            n_samples: 10,
            n_sessions_tracked: s,
            n_injuries: 1,
        };
        let r = LopoReport::from_players(vec![
            row("a", Some(0.5), 10),
            row("b", Some(0.6), 20),
            row("c", None, 30),
            row("d", Some(0.9), 40),
            row("e", Some(0.7), 50),
        ]);
        assert_eq!(r.players.len(), 5);
        assert!((r.median.unwrap() - 0.65).abs() < 1e-12);
        // Quartiles of [0.5, 0.6, 0.7, 0.9] at positions 0.75 and 2.25.
        assert!((r.iqr.unwrap() - (0.75 - 0.575)).abs() < 1e-12);
        assert!(r.r_sessions.unwrap() > 0.0);
        assert_eq!(r.r_injuries, None);

        let same = LopoReport::from_players(vec![row("a", Some(0.7), 5), row("b", Some(0.7), 5)]);
        assert_eq!(same.iqr, Some(0.0));
        assert_eq!(same.r_sessions, None);
    }

    proptest! {
        #[test]
        fn fast_matches_brute_force(
            rows in prop::collection::vec((0u8..12, 1u32..8, prop::bool::ANY), 0..120),
        ) {
            let scores: Vec<f64> = rows.iter().map(|r| r.0 as f64 / 4.0).collect();
            let times: Vec<u32> = rows.iter().map(|r| r.1).collect();
            let events: Vec<bool> = rows.iter().map(|r| r.2).collect();
            prop_assert_eq!(c_index(&scores, &times, &events).unwrap(), brute(&scores, &times, &events));
        }

        #[test]
        fn invariant_to_monotone_transform(
            rows in prop::collection::vec((-5.0f64..5.0, 1u32..8, prop::bool::ANY), 2..80),
        ) {
            let scores: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let warped: Vec<f64> = scores.iter().map(|s| s.exp() * 3.0 + 1.0).collect();
            let times: Vec<u32> = rows.iter().map(|r| r.1).collect();
            let events: Vec<bool> = rows.iter().map(|r| r.2).collect();
            prop_assert_eq!(c_index(&scores, &times, &events).unwrap(), c_index(&warped, &times, &events).unwrap());
        }

        #[test]
        fn negated_scores_complement(
            rows in prop::collection::vec((1u32..8, prop::bool::ANY), 2..80),
            seed in any::<u64>(),
        ) {
            // Distinct scores: a shuffled permutation of 0..n.
            use rand::{seq::SliceRandom, SeedableRng};
            let mut scores: Vec<f64> = (0..rows.len()).map(|i| i as f64).collect();
            scores.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let times: Vec<u32> = rows.iter().map(|r| r.0).collect();
            let events: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let a = c_index(&scores, &times, &events).unwrap().value();
            let b = c_index(&neg, &times, &events).unwrap().value();
            if let (Some(a), Some(b)) = (a, b) {
                prop_assert!((a + b - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn auc_is_ranking_probability(
            rows in prop::collection::vec((0u8..6, prop::bool::ANY), 2..60),
        ) {
            let p: Vec<f64> = rows.iter().map(|r| r.0 as f64 / 5.0).collect();
            let l: Vec<bool> = rows.iter().map(|r| r.1).collect();
            let mut wins = 0.0;
            let mut pairs = 0.0;
            for i in 0..p.len() {
                for j in 0..p.len() {
                    if l[i] && !l[j] {
                        pairs += 1.0;
                        wins += if p[i] > p[j] { 1.0 } else if p[i] == p[j] { 0.5 } else { 0.0 };
                    }
                }
            }
            match auc(&p, &l) {
                Some(a) => prop_assert!((a - wins / pairs).abs() < 1e-12),
                None => prop_assert_eq!(pairs, 0.0),
            }
        }
    }
}
