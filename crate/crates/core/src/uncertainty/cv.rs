//! K-fold hyperparameter selection for the boosted residual models.

use super::boost::{BoostParams, BoostedTrees};
use crate::error::{Error, Result};
use crate::rng;

/// Hyperparameter grid scored by mean absolute error on held-out folds.
#[derive(Debug, Clone, PartialEq)]
pub struct CvGrid {
    pub n_trees_options: Vec<usize>,
    pub depth_options: Vec<usize>,
    pub learning_rate_options: Vec<f64>,
    pub folds: usize,
    pub min_samples_leaf: usize,
}

impl Default for CvGrid {
    fn default() -> Self {
        CvGrid {
            n_trees_options: vec![25, 50, 100],
            depth_options: vec![2, 6, 8],
            learning_rate_options: vec![0.05, 0.1],
            folds: 3,
            min_samples_leaf: 2,
        }
    }
}

impl CvGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees_options.is_empty() || self.depth_options.is_empty() || self.learning_rate_options.is_empty() {
            return Err(Error::invalid("every grid option list must be non-empty"));
        }
        if self.n_trees_options.contains(&0) || self.depth_options.contains(&0) {
            return Err(Error::invalid("tree counts and depths must be positive"));
        }
        if self.learning_rate_options.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("cross-validation needs at least 2 folds"));
        }
        Ok(())
    }

    /// Every configuration in the grid, ordered by (trees, depth, rate).
    pub fn candidates(&self) -> Vec<BoostParams> {
        let mut out = Vec::new();
        for &n_trees in &self.n_trees_options {
            for &max_depth in &self.depth_options {
                for &learning_rate in &self.learning_rate_options {
                    out.push(BoostParams { n_trees, max_depth, learning_rate, min_samples_leaf: self.min_samples_leaf });
                }
            }
        }
        out.sort_by(|a, b| {
            a.n_trees
                .cmp(&b.n_trees)
                .then(a.max_depth.cmp(&b.max_depth))
                .then(a.learning_rate.total_cmp(&b.learning_rate))
        });
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    /// Mean held-out MAE per candidate, in [`CvGrid::candidates`] order.
    pub scores: Vec<(BoostParams, f64)>,
    pub selected: BoostParams,
}

/// Contiguous folds over a seeded permutation of `0..m`.
pub fn fold_assignment(m: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..m).collect();
    rng::shuffle(&mut order, &mut rng::stream(rng::derive_seed(seed, &[rng::domain::CV_SHUFFLE])));
    let base = m / folds;
    let extra = m % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for k in 0..folds {
        let len = base + usize::from(k < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Scores every grid configuration and returns the best one.
///
/// For each (depth, rate) pair and fold, one model with the largest tree
/// count is trained; smaller counts are scored from its staged
/// predictions, which are identical to training those models separately.
/// Ties (within `1e-12` relative) go to fewer trees, then shallower trees,
/// then the lower rate.
pub fn select_params(features: &[f64], d: usize, targets: &[f64], grid: &CvGrid, seed: u64) -> Result<CvReport> {
    grid.validate()?;
    let m = targets.len();
    if m < grid.folds {
        return Err(Error::invalid(format!("{m} rows cannot be split into {} folds", grid.folds)));
    }
    let folds = fold_assignment(m, grid.folds, seed);
    let max_trees = *grid.n_trees_options.iter().max().expect("validated non-empty");
    let candidates = grid.candidates();
    let mut totals = vec![0.0; candidates.len()];

    for &depth in &grid.depth_options {
        for &rate in &grid.learning_rate_options {
            let params = BoostParams {
                n_trees: max_trees,
                max_depth: depth,
                learning_rate: rate,
                min_samples_leaf: grid.min_samples_leaf,
            };
            let mut fold_mae = vec![0.0; grid.n_trees_options.len()];
            for (k, holdout) in folds.iter().enumerate() {
                let train: Vec<usize> = folds
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != k)
                    .flat_map(|(_, f)| f.iter().copied())
                    .collect();
                let model = BoostedTrees::fit_rows(features, d, targets, &train, params)?;
                let mut abs_err = vec![0.0; grid.n_trees_options.len()];
                for &r in holdout {
                    let staged = model.staged_predictions(&features[r * d..(r + 1) * d]);
                    for (slot, &nt) in abs_err.iter_mut().zip(&grid.n_trees_options) {
                        *slot += (staged[nt] - targets[r]).abs();
                    }
                }
                for (acc, e) in fold_mae.iter_mut().zip(abs_err) {
                    *acc += e / holdout.len() as f64;
                }
            }
            for (&nt, mae) in grid.n_trees_options.iter().zip(fold_mae) {
                let idx = candidates
                    .iter()
                    .position(|c| c.n_trees == nt && c.max_depth == depth && c.learning_rate == rate)
                    .expect("candidate present");
                totals[idx] = mae / grid.folds as f64;
            }
        }
    }

    let best = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * (1.0 + best.abs());
    let chosen = totals
        .iter()
        .position(|&s| s <= best + tol)
        .expect("at least one candidate");
    Ok(CvReport {
        scores: candidates.iter().copied().zip(totals).collect(),
        selected: candidates[chosen],
    })
}
