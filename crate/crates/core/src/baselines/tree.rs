//! Exact greedy CART shared by the forest (Gini) and boosting (second-order
//! gain) learners.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Tree {
        Tree { nodes: vec![Node::Leaf { value }] }
    }

    /// Rows with `x[feature] <= threshold` go left; NaN goes right.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// How a node is scored. Each row carries a pair `(a, b)`: label and 1 for
/// Gini, gradient and hessian for the second-order objective.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Criterion {
    Gini,
    Newton { lambda: f64 },
}

impl Criterion {
    /// Node cost; a split's gain is parent cost minus children's.
    fn cost(self, a: f64, b: f64) -> f64 {
        match self {
            // count * Gini impurity = 2 a (b - a) / b
            Criterion::Gini => {
                if b > 0.0 {
                    2.0 * a * (b - a) / b
                } else {
                    0.0
                }
            }
            Criterion::Newton { lambda } => -0.5 * a * a / (b + lambda),
        }
    }

    fn leaf_value(self, a: f64, b: f64) -> f64 {
        match self {
            Criterion::Gini => {
                if b > 0.0 {
                    a / b
                } else {
                    0.0
                }
            }
            Criterion::Newton { lambda } => -a / (b + lambda),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features considered per split; all when `None`.
    pub features_per_split: Option<usize>,
    pub criterion: Criterion,
}

pub(crate) struct Grown {
    pub tree: Tree,
    /// Summed cost reduction per feature.
    pub importance: Vec<f64>,
}

struct Builder<'a, R> {
    rows: &'a [&'a [f64]],
    a: &'a [f64],
    b: &'a [f64],
    params: GrowParams,
    n_features: usize,
    rng: &'a mut R,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Grows a tree on the rows listed in `idx` (repeats allowed, as in a
/// bootstrap sample).
pub(crate) fn grow<R: Rng>(
    rows: &[&[f64]],
    a: &[f64],
    b: &[f64],
    idx: Vec<usize>,
    params: GrowParams,
    rng: &mut R,
) -> Grown {
    let n_features = rows.first().map_or(0, |r| r.len());
    let mut builder = Builder {
        rows,
        a,
        b,
        params,
        n_features,
        rng,
        nodes: Vec::new(),
        importance: vec![0.0; n_features],
    };
    builder.build(idx, 0);
    Grown {
        tree: Tree { nodes: builder.nodes },
        importance: builder.importance,
    }
}

impl<R: Rng> Builder<'_, R> {
    fn sums(&self, idx: &[usize]) -> (f64, f64) {
        idx.iter().fold((0.0, 0.0), |(a, b), &i| (a + self.a[i], b + self.b[i]))
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let me = self.nodes.len();
        let (sa, sb) = self.sums(&idx);
        let crit = self.params.criterion;
        self.nodes.push(Node::Leaf { value: crit.leaf_value(sa, sb) });
        if depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf.max(1) {
            return me;
        }
        let Some(best) = self.best_split(&idx, sa, sb) else {
            return me;
        };
        self.importance[best.feature] += best.gain;
        let (l, r): (Vec<usize>, Vec<usize>) =
            idx.into_iter().partition(|&i| self.rows[i][best.feature] <= best.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[me] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        me
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        match self.params.features_per_split {
            Some(k) if k < self.n_features => {
                let mut f = rand::seq::index::sample(self.rng, self.n_features, k.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..self.n_features).collect(),
        }
    }

    fn best_split(&mut self, idx: &[usize], sa: f64, sb: f64) -> Option<BestSplit> {
        let crit = self.params.criterion;
        let parent = crit.cost(sa, sb);
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<BestSplit> = None;
        let mut order = idx.to_vec();
        for f in self.candidate_features() {
            let rows = self.rows;
            order.sort_by(|&i, &j| rows[i][f].total_cmp(&rows[j][f]));
            let (mut la, mut lb) = (0.0, 0.0);
            for k in 0..order.len() - 1 {
                la += self.a[order[k]];
                lb += self.b[order[k]];
                let (lo, hi) = (rows[order[k]][f], rows[order[k + 1]][f]);
                if k + 1 < min_leaf || order.len() - k - 1 < min_leaf || lo == hi || lo.is_nan() || hi.is_nan() {
                    continue;
                }
                let gain = parent - crit.cost(la, lb) - crit.cost(sa - la, sb - lb);
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: lo + (hi - lo) / 2.0,
                        gain,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(depth: usize) -> GrowParams {
        GrowParams {
            max_depth: depth,
            min_leaf: 1,
            features_per_split: None,
            criterion: Criterion::Gini,
        }
    }

    /// Weighted Gini of the best threshold found by trying every cut point.
    fn brute_best(xs: &[f64], ys: &[f64]) -> f64 {
        let gini = |v: &[f64]| {
            let n = v.len() as f64;
            let p = v.iter().sum::<f64>() / n;
            n * 2.0 * p * (1.0 - p)
        };
        let mut cuts: Vec<f64> = xs.to_vec();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut best = (f64::INFINITY, f64::NAN);
        for w in cuts.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            let l: Vec<f64> = xs.iter().zip(ys).filter(|(x, _)| **x <= t).map(|(_, y)| *y).collect();
            let r: Vec<f64> = xs.iter().zip(ys).filter(|(x, _)| **x > t).map(|(_, y)| *y).collect();
            let c = gini(&l) + gini(&r);
            if c < best.0 - 1e-12 {
                best = (c, t);
            }
        }
        best.1
    }

    #[test]
    fn stump_recovers_threshold() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| if x > 6.2 { 1.0 } else { 0.0 }).collect();
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let ones = vec![1.0; xs.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = grow(&refs, &ys, &ones, (0..xs.len()).collect(), params(1), &mut rng);
        match g.tree.nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, brute_best(&xs, &ys)),
            ref n => panic!("expected a split, got {n:?}"),
        }
        assert_eq!(g.tree.predict(&[0.0]), 0.0);
        assert_eq!(g.tree.predict(&[9.0]), 1.0);
    }

    #[test]
    fn stump_matches_brute_force_on_noisy_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let xs: Vec<f64> = (0..30).map(|_| rng.random_range(0..15) as f64).collect();
            let ys: Vec<f64> = xs.iter().map(|&x| if rng.random::<f64>() < x / 15.0 { 1.0 } else { 0.0 }).collect();
            let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let ones = vec![1.0; xs.len()];
            let g = grow(&refs, &ys, &ones, (0..xs.len()).collect(), params(1), &mut rng);
            if let Node::Split { threshold, .. } = g.tree.nodes[0] {
                assert_eq!(threshold, brute_best(&xs, &ys));
            }
        }
    }

    #[test]
    fn pure_node_stays_a_leaf() {
        let rows = [vec![1.0], vec![2.0], vec![3.0]];
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = grow(&refs, &[1.0; 3], &[1.0; 3], vec![0, 1, 2], params(5), &mut rng);
        assert_eq!(g.tree, Tree::leaf(1.0));
        assert_eq!(g.importance, vec![0.0]);
    }

    #[test]
    fn depth_and_min_leaf_are_respected() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64, (i * 7 % 13) as f64]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let ys: Vec<f64> = (0..64).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let ones = vec![1.0; 64];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = GrowParams { max_depth: 3, min_leaf: 5, ..params(3) };
        let g = grow(&refs, &ys, &ones, (0..64).collect(), p, &mut rng);
        assert!(g.tree.depth() <= 3);
        // every leaf receives at least min_leaf training rows
        let mut counts = vec![0usize; g.tree.nodes.len()];
        for r in &rows {
            let mut i = 0;
            while let Node::Split { feature, threshold, left, right } = g.tree.nodes[i] {
                i = if r[feature] <= threshold { left } else { right };
            }
            counts[i] += 1;
        }
        for (i, n) in g.tree.nodes.iter().enumerate() {
            if matches!(n, Node::Leaf { .. }) {
                assert!(counts[i] >= 5, "leaf {i} has {}", counts[i]);
            }
        }
    }
}
