//! Least-squares gradient boosting over [`RegressionTree`]s.

use super::tree::{presort, RegressionTree, TreeParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams { n_trees: 50, max_depth: 2, learning_rate: 0.1, min_samples_leaf: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedTrees {
    base: f64,
    params: BoostParams,
    trees: Vec<RegressionTree>,
    train_losses: Vec<f64>,
    n_features: usize,
}

impl BoostedTrees {
    pub fn fit(features: &[f64], d: usize, targets: &[f64], params: BoostParams) -> Result<Self> {
        let rows: Vec<usize> = (0..targets.len()).collect();
        Self::fit_rows(features, d, targets, &rows, params)
    }

    /// Fits on the listed rows. The model starts from the mean target and
    /// adds `n_trees` trees, each fitted to the current residuals.
    pub fn fit_rows(
        features: &[f64],
        d: usize,
        targets: &[f64],
        rows: &[usize],
        params: BoostParams,
    ) -> Result<Self> {
        if !(params.learning_rate > 0.0 && params.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if rows.is_empty() {
            return Err(Error::invalid("cannot boost on zero rows"));
        }
        if features.len() != targets.len() * d {
            return Err(Error::DimensionMismatch { expected: targets.len() * d, got: features.len() });
        }
        if d == 0 {
            return Err(Error::invalid("boosting needs at least one feature"));
        }
        if params.min_samples_leaf == 0 {
            return Err(Error::invalid("min_samples_leaf must be >= 1"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= targets.len()) {
            return Err(Error::invalid(format!("row index {bad} out of range")));
        }
        let sorted = presort(features, d, rows);
        let base = rows.iter().map(|&r| targets[r]).sum::<f64>() / rows.len() as f64;
        let mut fitted = vec![base; targets.len()];
        let mut residuals = vec![0.0; targets.len()];
        let tree_params = TreeParams { max_depth: params.max_depth, min_samples_leaf: params.min_samples_leaf };

        let sse = |fitted: &[f64]| rows.iter().map(|&r| (targets[r] - fitted[r]).powi(2)).sum::<f64>();
        let mut train_losses = Vec::with_capacity(params.n_trees + 1);
        train_losses.push(sse(&fitted) / rows.len() as f64);

        let mut trees = Vec::with_capacity(params.n_trees);
        for _ in 0..params.n_trees {
            for &r in rows {
                residuals[r] = targets[r] - fitted[r];
            }
            let tree = RegressionTree::fit_sorted(features, d, &residuals, sorted.clone(), tree_params);
            for &r in rows {
                fitted[r] += params.learning_rate * tree.predict(&features[r * d..(r + 1) * d]);
            }
            train_losses.push(sse(&fitted) / rows.len() as f64);
            trees.push(tree);
        }
        Ok(BoostedTrees { base, params, trees, train_losses, n_features: d })
    }

    pub fn params(&self) -> BoostParams {
        self.params
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Mean squared training error after 0, 1, ..., n_trees trees.
    pub fn train_losses(&self) -> &[f64] {
        &self.train_losses
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_staged(x, self.trees.len())
    }

    /// Prediction using only the first `k` trees.
    pub fn predict_staged(&self, x: &[f64], k: usize) -> f64 {
        let lr = self.params.learning_rate;
        self.trees[..k.min(self.trees.len())]
            .iter()
            .fold(self.base, |acc, t| acc + lr * t.predict(x))
    }

    /// Running predictions after each tree: element `k` uses `k` trees.
    pub fn staged_predictions(&self, x: &[f64]) -> Vec<f64> {
        let lr = self.params.learning_rate;
        let mut acc = self.base;
        let mut out = Vec::with_capacity(self.trees.len() + 1);
        out.push(acc);
        for t in &self.trees {
            acc += lr * t.predict(x);
            out.push(acc);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trees_predicts_mean() {
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let y = vec![1.0, 2.0, 3.0, 6.0];
        let m = BoostedTrees::fit(&x, 1, &y, BoostParams { n_trees: 0, ..Default::default() }).unwrap();
        assert_eq!(m.predict(&[10.0]), 3.0);
    }

    #[test]
    fn staged_matches_truncated_predict() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let m = BoostedTrees::fit(&x, 1, &y, BoostParams { n_trees: 10, ..Default::default() }).unwrap();
        let staged = m.staged_predictions(&[1.3]);
        for (k, s) in staged.iter().enumerate() {
            assert_eq!(*s, m.predict_staged(&[1.3], k));
        }
    }

    #[test]
    fn more_trees_fit_better() {
        let x: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin()).collect();
        let m = BoostedTrees::fit(&x, 1, &y, BoostParams { n_trees: 100, max_depth: 3, ..Default::default() }).unwrap();
        let l = m.train_losses();
        assert!(l.last().unwrap() < &(0.05 * l[0]));
    }
}
