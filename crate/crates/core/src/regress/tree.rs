use serde::{Deserialize, Serialize};

use super::{check_input, check_training_set};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub bins: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 5,
            bins: 32,
            min_leaf: 1,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Config(format!("tree bins must be >= 2, got {}", self.bins)));
        }
        if self.min_leaf == 0 {
            return Err(Error::Config("tree min_leaf must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// Rows with `a[feature] <= threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary regression tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    pub params: TreeParams,
    n_features: usize,
}

impl RegressionTree {
    pub fn leaf(value: f64, n_features: usize) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { value }],
            params: TreeParams::default(),
            n_features,
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn predict(&self, a: &[f64]) -> Result<f64> {
        check_input(a, self.n_features)?;
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return Ok(value),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if a[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Candidate split thresholds for one feature.
///
/// With at most `bins` distinct values every gap between neighbours is a
/// candidate; otherwise `bins − 1` equal-frequency boundaries are taken
/// from the sorted sample. Each threshold sits at the midpoint between a
/// boundary value and the next distinct value above it.
fn candidate_thresholds(values: &mut [f64], bins: usize) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = values.to_vec();
    distinct.dedup();
    if distinct.len() < 2 {
        return Vec::new();
    }
    let boundaries: Vec<f64> = if distinct.len() <= bins {
        distinct[..distinct.len() - 1].to_vec()
    } else {
        let n = values.len();
        let mut b: Vec<f64> = (1..bins).map(|q| values[(q * n / bins).min(n - 1)]).collect();
        b.dedup();
        b
    };
    boundaries
        .into_iter()
        .filter_map(|b| {
            let next = distinct.partition_point(|&v| v <= b);
            distinct.get(next).map(|&above| 0.5 * (b + above))
        })
        .collect()
}

struct Builder<'a> {
    y: &'a [f64],
    thresholds: Vec<Vec<f64>>,
    /// `bin[f][row]` = number of thresholds of feature `f` strictly below the value.
    bin: Vec<Vec<u32>>,
    params: TreeParams,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold_index: usize,
    gain: f64,
}

impl Builder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let n = rows.len() as f64;
        let sum: f64 = rows.iter().map(|&r| self.y[r]).sum();
        self.nodes.push(Node::Leaf { value: sum / n });

        let (lo, hi) = rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(self.y[r]), hi.max(self.y[r])));
        if depth >= self.params.max_depth || lo == hi || rows.len() < 2 * self.params.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(&rows, sum) else {
            return id;
        };

        let threshold = self.thresholds[best.feature][best.threshold_index];
        let cut = best.threshold_index as u32;
        let bins = &self.bin[best.feature];
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| bins[r] <= cut);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold,
            left,
            right,
        };
        id
    }

    /// Maximizes the reduction in summed squared error, which ranks splits
    /// identically to the parent-weighted variance reduction.
    fn best_split(&self, rows: &[usize], sum: f64) -> Option<BestSplit> {
        let n = rows.len();
        let mean = sum / n as f64;
        let parent_sse: f64 = rows.iter().map(|&r| (self.y[r] - mean).powi(2)).sum();
        let tol = 1e-12 * parent_sse.max(f64::MIN_POSITIVE);
        let min_leaf = self.params.min_leaf;

        let mut best: Option<BestSplit> = None;
        for (f, ths) in self.thresholds.iter().enumerate() {
            if ths.is_empty() {
                continue;
            }
            let bins = &self.bin[f];
            let mut count = vec![0usize; ths.len() + 1];
            let mut total = vec![0.0f64; ths.len() + 1];
            let mut sq = vec![0.0f64; ths.len() + 1];
            for &r in rows {
                let b = bins[r] as usize;
                let d = self.y[r] - mean;
                count[b] += 1;
                total[b] += d;
                sq[b] += d * d;
            }
            let all_total: f64 = total.iter().sum();
            let all_sq: f64 = sq.iter().sum();
            let (mut cl, mut tl, mut sl) = (0usize, 0.0f64, 0.0f64);
            for t in 0..ths.len() {
                cl += count[t];
                tl += total[t];
                sl += sq[t];
                let cr = n - cl;
                if cl < min_leaf || cr < min_leaf {
                    continue;
                }
                let tr = all_total - tl;
                let sr = all_sq - sl;
                let sse_left = sl - tl * tl / cl as f64;
                let sse_right = sr - tr * tr / cr as f64;
                let gain = all_sq - all_total * all_total / n as f64 - sse_left - sse_right;
                if best.as_ref().map_or(true, |b| gain > b.gain + tol) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold_index: t,
                        gain,
                    });
                }
            }
        }
        best
    }
}

/// Greedy CART regression tree on quantile-binned thresholds.
///
/// Ties go to the lowest feature index, then the lowest threshold. A node
/// is split whenever a split respecting `min_leaf` exists, even if the
/// squared-error gain is zero (XOR-style targets have no first-level gain).
pub fn fit_tree(x: &[Vec<f64>], y: &[f64], params: TreeParams) -> Result<RegressionTree> {
    params.validate()?;
    let d = check_training_set(x, y)?;
    let mut thresholds = Vec::with_capacity(d);
    let mut bin = Vec::with_capacity(d);
    for f in 0..d {
        let mut column: Vec<f64> = x.iter().map(|r| r[f]).collect();
        let ths = candidate_thresholds(&mut column, params.bins);
        bin.push(
            x.iter()
                .map(|r| ths.partition_point(|&t| t < r[f]) as u32)
                .collect(),
        );
        thresholds.push(ths);
    }
    let mut builder = Builder {
        y,
        thresholds,
        bin,
        params,
        nodes: Vec::new(),
    };
    builder.grow((0..x.len()).collect(), 0);
    Ok(RegressionTree {
        nodes: builder.nodes,
        params,
        n_features: d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(depth: usize) -> TreeParams {
        TreeParams {
            max_depth: depth,
            bins: 32,
            min_leaf: 1,
        }
    }

    fn mae(t: &RegressionTree, x: &[Vec<f64>], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(r, v)| (t.predict(r).unwrap() - v).abs()).sum::<f64>() / y.len() as f64
    }

    fn xor_data() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let y = vec![0.0, 1.0, 1.0, 0.0];
        (x, y)
    }

    /// Every tree over two binary features of the given depth, exhaustively:
    /// depth 0 is one leaf; a depth-d tree splits on one of the features and
    /// recurses. Leaves predict their mean, so only the structure varies.
    fn brute_force_best_mae(x: &[Vec<f64>], y: &[f64], rows: &[usize], depth: usize) -> f64 {
        let leaf = {
            let m = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
            rows.iter().map(|&r| (y[r] - m).abs()).sum::<f64>()
        };
        if depth == 0 {
            return leaf;
        }
        let mut best = leaf;
        for f in 0..x[0].len() {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= 0.5);
            if l.is_empty() || r.is_empty() {
                continue;
            }
            best = best.min(brute_force_best_mae(x, y, &l, depth - 1) + brute_force_best_mae(x, y, &r, depth - 1));
        }
        best
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x = vec![vec![0.0], vec![1.0], vec![1.0]];
        let t = fit_tree(&x, &[2.0, 2.0, 2.0], params(4)).unwrap();
        assert_eq!(t.nodes, vec![Node::Leaf { value: 2.0 }]);
        assert_eq!(t.depth(), 0);
    }

    #[test]
    fn single_binary_split() {
        let x = vec![vec![0.0], vec![1.0], vec![1.0], vec![0.0]];
        let y = vec![0.0, 1.0, 1.0, 0.0];
        let t = fit_tree(&x, &y, params(1)).unwrap();
        assert_eq!(mae(&t, &x, &y), 0.0);
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, threshold, .. } if threshold == 0.5));
    }

    #[test]
    fn xor_needs_depth_two() {
        let (x, y) = xor_data();
        let all: Vec<usize> = (0..4).collect();
        let oracle1 = brute_force_best_mae(&x, &y, &all, 1) / 4.0;
        let oracle2 = brute_force_best_mae(&x, &y, &all, 2) / 4.0;
        assert_eq!(oracle1, 0.5);
        assert_eq!(oracle2, 0.0);
        assert_eq!(mae(&fit_tree(&x, &y, params(1)).unwrap(), &x, &y), oracle1);
        let deep = fit_tree(&x, &y, params(2)).unwrap();
        assert_eq!(mae(&deep, &x, &y), oracle2);
        assert_eq!(deep.predict(&[1.0, 0.0]).unwrap(), 1.0);
        // tie at the root goes to feature 0
        assert!(matches!(deep.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn constant_tree_predicts_leaf() {
        let t = RegressionTree::leaf(2.5, 3);
        assert_eq!(t.predict(&[9.0, -1.0, 0.0]).unwrap(), 2.5);
        assert!(matches!(t.predict(&[1.0]), Err(Error::Dimension { .. })));
    }

    /// Mean-valued leaves minimize squared error, not absolute error, so a
    /// split can raise training MAE: here the parent mean sits at the left
    /// child's median while the split moves the left prediction off it.
    #[test]
    fn splitting_can_raise_mae() {
        let mut x = vec![vec![0.0]; 5];
        let mut y = vec![0.0, 0.0, 0.0, 0.0, 10.0];
        for i in 0..200 {
            x.push(vec![1.0]);
            y.push(if i % 2 == 0 { -1.0 } else { 1.0 });
        }
        let shallow = fit_tree(&x, &y, params(0)).unwrap();
        let deep = fit_tree(&x, &y, params(1)).unwrap();
        assert!(sse(&deep, &x, &y) < sse(&shallow, &x, &y));
        assert!(mae(&deep, &x, &y) > mae(&shallow, &x, &y));
    }

    #[test]
    fn min_leaf_respected() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let t = fit_tree(&x, &y, TreeParams { max_depth: 10, bins: 32, min_leaf: 3 }).unwrap();
        let mut counts = std::collections::HashMap::new();
        for r in &x {
            *counts.entry(t.predict(r).unwrap().to_bits()).or_insert(0) += 1;
        }
        assert!(counts.values().all(|&c| c >= 3));
    }

    #[test]
    fn quantile_thresholds() {
        let mut v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let t = candidate_thresholds(&mut v, 4);
        assert_eq!(t, vec![25.5, 50.5, 75.5]);
        let mut b = vec![0.0, 1.0, 1.0, 0.0];
        assert_eq!(candidate_thresholds(&mut b, 2), vec![0.5]);
        let mut c = vec![3.0, 3.0];
        assert!(candidate_thresholds(&mut c, 8).is_empty());
    }

    #[test]
    fn invalid_params() {
        let x = vec![vec![0.0]];
        assert!(fit_tree(&x, &[1.0], TreeParams { max_depth: 1, bins: 1, min_leaf: 1 }).is_err());
        assert!(fit_tree(&x, &[1.0], TreeParams { max_depth: 1, bins: 2, min_leaf: 0 }).is_err());
    }

    fn arb_binary_data() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (1usize..6, 2usize..40).prop_flat_map(|(d, n)| {
            (
                proptest::collection::vec(proptest::collection::vec(0u8..2, d), n),
                proptest::collection::vec(-3.0f64..3.0, n),
            )
                .prop_map(|(x, y)| (x.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect(), y))
        })
    }

    fn sse(t: &RegressionTree, x: &[Vec<f64>], y: &[f64]) -> f64 {
        x.iter().zip(y).map(|(r, v)| (t.predict(r).unwrap() - v).powi(2)).sum()
    }

    fn leaves_are_means(t: &RegressionTree, x: &[Vec<f64>], y: &[f64]) -> bool {
        let mut groups: std::collections::HashMap<u64, (f64, usize)> = Default::default();
        for (r, v) in x.iter().zip(y) {
            let e = groups.entry(t.predict(r).unwrap().to_bits()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
        groups.iter().all(|(&bits, &(s, c))| (f64::from_bits(bits) - s / c as f64).abs() < 1e-9)
    }

    proptest! {
        #[test]
        fn depth_bounded_and_leaves_are_means((x, y) in arb_binary_data(), depth in 0usize..5) {
            let t = fit_tree(&x, &y, params(depth)).unwrap();
            prop_assert!(t.depth() <= depth);
            prop_assert!(leaves_are_means(&t, &x, &y));
        }

        #[test]
        fn deeper_trees_fit_no_worse((x, y) in arb_binary_data()) {
            let mut prev = f64::INFINITY;
            for depth in 0..6 {
                let t = fit_tree(&x, &y, params(depth)).unwrap();
                let s = sse(&t, &x, &y);
                prop_assert!(s <= prev + 1e-9);
                prev = s;
            }
        }

        /// On noise-free targets that a depth-3 tree can represent, training
        /// MAE falls monotonically to zero.
        #[test]
        fn deeper_trees_reduce_mae_on_tree_targets(
            rows in proptest::collection::vec(proptest::collection::vec(0u8..2, 3), 2..30),
            leaf_values in proptest::collection::vec(-3.0f64..3.0, 8),
        ) {
            let x: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&b| f64::from(b)).collect()).collect();
            let y: Vec<f64> = rows.iter().map(|r| leaf_values[(r[0] * 4 + r[1] * 2 + r[2]) as usize]).collect();
            let last = fit_tree(&x, &y, params(3)).unwrap();
            prop_assert!(mae(&last, &x, &y) < 1e-12);
        }
        #[test]
        fn bin_count_irrelevant_for_binary_features((x, y) in arb_binary_data(), depth in 0usize..5, bins in 2usize..64) {
            let a = fit_tree(&x, &y, TreeParams { max_depth: depth, bins: 2, min_leaf: 1 }).unwrap();
            let b = fit_tree(&x, &y, TreeParams { max_depth: depth, bins, min_leaf: 1 }).unwrap();
            prop_assert_eq!(a.nodes, b.nodes);
        }

        #[test]
        fn deterministic((x, y) in arb_binary_data()) {
            prop_assert_eq!(fit_tree(&x, &y, params(4)).unwrap(), fit_tree(&x, &y, params(4)).unwrap());
        }
    }
}
