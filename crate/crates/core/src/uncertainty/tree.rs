//! Least-squares regression trees with exact greedy splits.
//!
//! Candidate thresholds are midpoints between consecutive distinct observed
//! values of each feature. Each node keeps one presorted index segment per
//! feature, and children are formed by a stable partition, so a level costs
//! `O(d * m)` after the initial sort.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: 3, min_samples_leaf: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    n_features: usize,
}

impl RegressionTree {
    /// Fits on every row of the row-major `features` matrix (`d` columns).
    pub fn fit(features: &[f64], d: usize, targets: &[f64], params: TreeParams) -> Result<Self> {
        let rows: Vec<usize> = (0..targets.len()).collect();
        Self::fit_rows(features, d, targets, &rows, params)
    }

    /// Fits on the listed rows only.
    pub fn fit_rows(
        features: &[f64],
        d: usize,
        targets: &[f64],
        rows: &[usize],
        params: TreeParams,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("trees need at least one feature"));
        }
        if features.len() != targets.len() * d {
            return Err(Error::DimensionMismatch {
                expected: targets.len() * d,
                got: features.len(),
            });
        }
        if rows.is_empty() {
            return Err(Error::invalid("cannot fit a tree on zero rows"));
        }
        if params.min_samples_leaf == 0 {
            return Err(Error::invalid("min_samples_leaf must be >= 1"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= targets.len()) {
            return Err(Error::invalid(format!("row index {bad} out of range")));
        }
        let sorted = presort(features, d, rows);
        Ok(Self::fit_sorted(features, d, targets, sorted, params))
    }

    /// Fits on the rows of `sorted`, which must hold, for every feature,
    /// the same training rows ordered by that feature (see [`presort`]).
    pub(crate) fn fit_sorted(
        features: &[f64],
        d: usize,
        targets: &[f64],
        sorted: Vec<Vec<usize>>,
        params: TreeParams,
    ) -> Self {
        let m = sorted[0].len();
        let mut builder = Builder::new(features, d, targets, sorted, params);
        builder.build(0, m, 0);
        RegressionTree { nodes: builder.nodes, n_features: d }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
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

    /// Prediction for one feature row. The caller guarantees the length.
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
}

struct Builder<'a> {
    features: &'a [f64],
    d: usize,
    targets: &'a [f64],
    params: TreeParams,
    /// `sorted[f]` holds the training rows; each node owns the same
    /// `[start, end)` window in every feature's array, sorted by that feature.
    sorted: Vec<Vec<usize>>,
    goes_left: Vec<bool>,
    scratch: Vec<usize>,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Per-feature orderings of `rows`, ties broken by row index.
pub(crate) fn presort(features: &[f64], d: usize, rows: &[usize]) -> Vec<Vec<usize>> {
    (0..d)
        .map(|f| {
            let mut idx = rows.to_vec();
            idx.sort_by(|&a, &b| features[a * d + f].total_cmp(&features[b * d + f]).then(a.cmp(&b)));
            idx
        })
        .collect()
}

impl<'a> Builder<'a> {
    fn new(features: &'a [f64], d: usize, targets: &'a [f64], sorted: Vec<Vec<usize>>, params: TreeParams) -> Self {
        let m = sorted[0].len();
        Builder {
            features,
            d,
            targets,
            params,
            sorted,
            goes_left: vec![false; targets.len()],
            scratch: Vec::with_capacity(m),
            nodes: Vec::new(),
        }
    }

    fn x(&self, row: usize, f: usize) -> f64 {
        self.features[row * self.d + f]
    }

    fn build(&mut self, start: usize, end: usize, depth: usize) -> usize {
        let count = end - start;
        let (sum, sumsq) = self.sorted[0][start..end]
            .iter()
            .fold((0.0, 0.0), |(s, q), &r| {
                let y = self.targets[r];
                (s + y, q + y * y)
            });
        let mean = sum / count as f64;
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: mean });

        let sse = sumsq - sum * sum / count as f64;
        let tiny = 1e-12 * sumsq.max(f64::MIN_POSITIVE);
        if depth >= self.params.max_depth || count < 2 * self.params.min_samples_leaf || sse <= tiny {
            return id;
        }
        let Some(split) = self.best_split(start, end, sum) else {
            return id;
        };
        if split.score - sum * sum / count as f64 <= tiny {
            return id;
        }

        let n_left = self.partition(start, end, split.feature, split.threshold);
        let left = self.build(start, start + n_left, depth + 1);
        let right = self.build(start + n_left, end, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    /// Maximizes `S_L^2/n_L + S_R^2/n_R`, equivalent to the largest drop in
    /// squared error. Ties keep the first candidate (lowest feature, then
    /// lowest threshold).
    fn best_split(&self, start: usize, end: usize, total: f64) -> Option<Split> {
        let count = end - start;
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<Split> = None;
        for f in 0..self.d {
            let seg = &self.sorted[f][start..end];
            let mut left_sum = 0.0;
            for i in 0..count - 1 {
                left_sum += self.targets[seg[i]];
                let n_left = i + 1;
                let n_right = count - n_left;
                if n_left < min_leaf {
                    continue;
                }
                if n_right < min_leaf {
                    break;
                }
                let lo = self.x(seg[i], f);
                let hi = self.x(seg[i + 1], f);
                if lo == hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(Split { feature: f, threshold, score });
                }
            }
        }
        best
    }

    fn partition(&mut self, start: usize, end: usize, feature: usize, threshold: f64) -> usize {
        let mut n_left = 0;
        for k in start..end {
            let r = self.sorted[feature][k];
            let left = self.features[r * self.d + feature] <= threshold;
            self.goes_left[r] = left;
            n_left += left as usize;
        }
        for f in 0..self.d {
            self.scratch.clear();
            let seg = &mut self.sorted[f][start..end];
            let mut write = 0;
            for k in 0..seg.len() {
                let r = seg[k];
                if self.goes_left[r] {
                    seg[write] = r;
                    write += 1;
                } else {
                    self.scratch.push(r);
                }
            }
            seg[write..].copy_from_slice(&self.scratch);
        }
        n_left
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_target_gives_single_leaf() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y = vec![0.7; 20];
        let t = RegressionTree::fit(&x, 1, &y, TreeParams { max_depth: 4, min_samples_leaf: 2 }).unwrap();
        assert_eq!(t.n_leaves(), 1);
        assert!((t.predict(&[3.0]) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn step_function_is_recovered_exactly() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 - 20.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 0.0 { 1.0 } else { 3.0 }).collect();
        let t = RegressionTree::fit(&x, 1, &y, TreeParams { max_depth: 1, min_samples_leaf: 2 }).unwrap();
        assert_eq!(t.predict(&[-5.0]), 1.0);
        assert_eq!(t.predict(&[5.0]), 3.0);
        // midpoint between -1 and 0
        assert_eq!(t.predict(&[-0.5]), 1.0);
        assert_eq!(t.predict(&[-0.49]), 3.0);
    }

    #[test]
    fn picks_the_informative_feature() {
        // feature 0 is noise, feature 1 determines the target
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..50 {
            let noise = ((i * 37) % 11) as f64;
            let signal = i as f64;
            x.extend([noise, signal]);
            y.push(if signal < 25.0 { -1.0 } else { 1.0 });
        }
        let t = RegressionTree::fit(&x, 2, &y, TreeParams { max_depth: 1, min_samples_leaf: 2 }).unwrap();
        assert_eq!(t.predict(&[0.0, 10.0]), -1.0);
        assert_eq!(t.predict(&[10.0, 40.0]), 1.0);
    }

    #[test]
    fn respects_depth_and_leaf_size() {
        let x: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 0.37).sin()).collect();
        for depth in 1..5 {
            let t = RegressionTree::fit(&x, 1, &y, TreeParams { max_depth: depth, min_samples_leaf: 2 }).unwrap();
            assert!(t.depth() <= depth);
            assert!(t.n_leaves() <= 1 << depth);
        }
        let t = RegressionTree::fit(&x, 1, &y, TreeParams { max_depth: 20, min_samples_leaf: 2 }).unwrap();
        assert!(t.n_leaves() <= 32);
    }

    #[test]
    fn fit_rows_ignores_other_rows() {
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let y = vec![5.0, 5.0, 100.0, 100.0];
        let t = RegressionTree::fit_rows(&x, 1, &y, &[0, 1], TreeParams::default()).unwrap();
        assert_eq!(t.predict(&[3.0]), 5.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(RegressionTree::fit(&[1.0, 2.0, 3.0], 2, &[1.0, 2.0], TreeParams::default()).is_err());
        assert!(RegressionTree::fit(&[], 1, &[], TreeParams::default()).is_err());
    }
}
