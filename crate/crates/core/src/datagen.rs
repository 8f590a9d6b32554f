//! Seeded synthetic data: the heteroscedastic easy/hard regression problem,
//! noisy-oracle predictors, the two-population sampler, and tree
//! predictors fitted on a training split.
//!
//! Each random component reads its own stream (see [`crate::rng::domain`]),
//! so for example changing the label noise never moves the covariates.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::types::{Dataset, TwoPopParams};
use crate::uncertainty::{RegressionTree, TreeParams};

pub const CHEAP: &str = "cheap";
pub const EXPENSIVE: &str = "expensive";

/// Population mean of the label in [`gen_synthetic_regression`]: both
/// `2 X_1` and `sin(3 X_1 X_2)` are odd in `X_1`, and the noise is centered.
pub const SYNTHETIC_MEAN: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    pub n: usize,
    pub d: usize,
    pub easy_frac: f64,
    /// Standard deviation of the noise on easy instances.
    pub easy_noise_sd: f64,
    /// Standard deviation of the noise on hard instances.
    pub hard_noise_sd: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams { n: 20_000, d: 5, easy_frac: 0.7, easy_noise_sd: 0.1, hard_noise_sd: 2.0 }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n must be positive"));
        }
        if self.d < 2 {
            return Err(Error::invalid("the synthetic generator needs d >= 2"));
        }
        if !(0.0..=1.0).contains(&self.easy_frac) {
            return Err(Error::invalid("easy_frac must lie in [0, 1]"));
        }
        if !(self.easy_noise_sd >= 0.0 && self.hard_noise_sd >= 0.0) {
            return Err(Error::invalid("noise levels must be >= 0"));
        }
        Ok(())
    }
}

/// A generated dataset and the per-row population flag (`true` = easy).
#[derive(Debug, Clone)]
pub struct Generated {
    pub dataset: Dataset,
    pub easy: Vec<bool>,
}

/// Standard normal covariates; each row is easy with probability
/// `easy_frac`. Easy rows have `Y = 2 X_1 + e`, hard rows
/// `Y = sin(3 X_1 X_2) + e`. No prediction columns are attached.
pub fn gen_synthetic_regression(params: &SyntheticParams, seed: u64) -> Result<Generated> {
    params.validate()?;
    let SyntheticParams { n, d, .. } = *params;
    let mut cov_rng = rng::stream(rng::derive_seed(seed, &[domain::COVARIATES]));
    let mut hard_rng = rng::stream(rng::derive_seed(seed, &[domain::HARDNESS]));
    let mut noise_rng = rng::stream(rng::derive_seed(seed, &[domain::LABEL_NOISE]));
    let covariates = Array2::from_shape_simple_fn((n, d), || rng::standard_normal(&mut cov_rng));
    let mut labels = Vec::with_capacity(n);
    let mut easy = Vec::with_capacity(n);
    for row in covariates.rows() {
        let is_easy = rng::uniform(&mut hard_rng) < params.easy_frac;
        let eps = rng::standard_normal(&mut noise_rng);
        let y = if is_easy {
            2.0 * row[0] + params.easy_noise_sd * eps
        } else {
            (3.0 * row[0] * row[1]).sin() + params.hard_noise_sd * eps
        };
        labels.push(y);
        easy.push(is_easy);
    }
    Ok(Generated { dataset: Dataset::labeled(covariates, labels, BTreeMap::new())?, easy })
}

/// Stream key for the noise of the named predictor.
pub fn predictor_seed(root: u64, predictor: &str) -> u64 {
    rng::derive_seed(root, &[domain::PREDICTOR_NOISE, rng::name_tag(predictor)])
}

/// `f_i = y_i + sigma eta_i` with standard normal `eta` from `seed`.
pub fn make_noisy_predictor(labels: &[f64], sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("sigma must be finite and >= 0"));
    }
    let mut g = rng::stream(seed);
    Ok(labels.iter().map(|y| y + sigma * rng::standard_normal(&mut g)).collect())
}

/// Like [`make_noisy_predictor`] with a per-row noise level.
pub fn make_noisy_predictor_rows(labels: &[f64], sigmas: &[f64], seed: u64) -> Result<Vec<f64>> {
    if labels.len() != sigmas.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: sigmas.len() });
    }
    if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::invalid("sigmas must be finite and >= 0"));
    }
    let mut g = rng::stream(seed);
    Ok(labels.iter().zip(sigmas).map(|(y, s)| y + s * rng::standard_normal(&mut g)).collect())
}

/// Two populations with `Y ~ N(0, var_y)` and noisy-oracle predictors
/// `cheap` and `expensive` whose residual variances are `(r_e, r_h)` and
/// `(r_e, r_h (1 - delta))` on (easy, hard) rows. The single covariate is
/// the population flag (1 = easy).
pub fn gen_two_population(params: &TwoPopParams, n: usize, seed: u64) -> Result<Generated> {
    params.validate()?;
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let mut hard_rng = rng::stream(rng::derive_seed(seed, &[domain::HARDNESS]));
    let mut label_rng = rng::stream(rng::derive_seed(seed, &[domain::LABEL_NOISE]));
    let easy: Vec<bool> = (0..n).map(|_| rng::uniform(&mut hard_rng) < params.p).collect();
    let sd_y = params.var_y.sqrt();
    let labels: Vec<f64> = (0..n).map(|_| sd_y * rng::standard_normal(&mut label_rng)).collect();
    let sigmas = |j: usize| -> Vec<f64> {
        easy.iter()
            .map(|&e| if e { params.r_e.sqrt() } else { params.hard_residual(j).sqrt() })
            .collect()
    };
    let f1 = make_noisy_predictor_rows(&labels, &sigmas(1), predictor_seed(seed, CHEAP))?;
    let f2 = make_noisy_predictor_rows(&labels, &sigmas(2), predictor_seed(seed, EXPENSIVE))?;
    let covariates = Array2::from_shape_fn((n, 1), |(i, _)| if easy[i] { 1.0 } else { 0.0 });
    let predictions = BTreeMap::from([(CHEAP.to_string(), f1), (EXPENSIVE.to_string(), f2)]);
    Ok(Generated { dataset: Dataset::labeled(covariates, labels, predictions)?, easy })
}

/// Two equal-quality predictors specialized on opposite halves of the
/// covariate space: `first` has noise `sigma_good` where column `column`
/// is below `threshold` and `sigma_bad` elsewhere, `second` the reverse.
#[allow(clippy::too_many_arguments)]
pub fn add_specialized_predictors(
    data: Dataset,
    first: &str,
    second: &str,
    column: usize,
    threshold: f64,
    sigma_good: f64,
    sigma_bad: f64,
    seed: u64,
) -> Result<Dataset> {
    if column >= data.dim() {
        return Err(Error::invalid(format!("column {column} out of range")));
    }
    let labels = data.require_labels()?;
    let low: Vec<bool> = data.covariates().column(column).iter().map(|&v| v < threshold).collect();
    let s1: Vec<f64> = low.iter().map(|&l| if l { sigma_good } else { sigma_bad }).collect();
    let s2: Vec<f64> = low.iter().map(|&l| if l { sigma_bad } else { sigma_good }).collect();
    let f1 = make_noisy_predictor_rows(&labels, &s1, predictor_seed(seed, first))?;
    let f2 = make_noisy_predictor_rows(&labels, &s2, predictor_seed(seed, second))?;
    data.with_prediction(first, f1)?.with_prediction(second, f2)
}

/// A single regression tree fitted on the labeled `train` rows, used as a
/// predictor. Leaves may hold a single row.
pub fn fit_tree_predictor(train: &Dataset, max_depth: usize) -> Result<RegressionTree> {
    let labels = train.require_labels()?;
    let (features, d) = train.feature_matrix(None)?;
    RegressionTree::fit(&features, d, &labels, TreeParams { max_depth, min_samples_leaf: 1 })
}

pub fn tree_predictions(tree: &RegressionTree, data: &Dataset) -> Result<Vec<f64>> {
    if tree.n_features() != data.dim() {
        return Err(Error::DimensionMismatch { expected: tree.n_features(), got: data.dim() });
    }
    Ok(data.covariates().rows().into_iter().map(|r| tree.predict(r.as_slice().expect("standard layout"))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_formulas() {
        let p = SyntheticParams { n: 400, easy_noise_sd: 0.0, hard_noise_sd: 0.0, ..Default::default() };
        let g = gen_synthetic_regression(&p, 9).unwrap();
        let x = g.dataset.covariates();
        for (i, &e) in g.easy.iter().enumerate() {
            let y = g.dataset.label(i).unwrap();
            let expect = if e { 2.0 * x[[i, 0]] } else { (3.0 * x[[i, 0]] * x[[i, 1]]).sin() };
            assert_eq!(y, expect);
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let p = SyntheticParams { n: 50, ..Default::default() };
        let a = gen_synthetic_regression(&p, 1).unwrap();
        let b = gen_synthetic_regression(&p, 1).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.easy, b.easy);
        let c = gen_synthetic_regression(&p, 2).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn zero_sigma_predictor_is_exact() {
        let y = vec![1.0, -2.0, 3.5];
        assert_eq!(make_noisy_predictor(&y, 0.0, 4).unwrap(), y);
        assert!(make_noisy_predictor(&y, -1.0, 4).is_err());
    }

    #[test]
    fn two_population_flags() {
        let params = TwoPopParams {
            p: 1.0,
            r_e: 0.01,
            r_h: 1.0,
            delta: 0.0,
            c1: 0.0,
            c2: 0.0,
            c_label: 1.0,
            b: 1.0,
            n: 100,
            var_y: 1.0,
        };
        let g = gen_two_population(&params, 100, 3).unwrap();
        assert!(g.easy.iter().all(|&e| e));
        assert!(g.dataset.covariates().iter().all(|&v| v == 1.0));
        assert!(g.dataset.prediction(CHEAP).is_ok() && g.dataset.prediction(EXPENSIVE).is_ok());
    }

    #[test]
    fn deeper_tree_fits_train_better() {
        let g = gen_synthetic_regression(&SyntheticParams { n: 2000, ..Default::default() }, 5).unwrap();
        let y = g.dataset.require_labels().unwrap();
        let mse = |depth| {
            let t = fit_tree_predictor(&g.dataset, depth).unwrap();
            let f = tree_predictions(&t, &g.dataset).unwrap();
            f.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64
        };
        assert!(mse(6) < mse(2));
    }
}
