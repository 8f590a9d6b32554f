//! Per-trial data: a burn-in sample, a deployment stream and the target
//! mean used for coverage.
//!
//! Generated sources draw a fresh population for every trial, so trials
//! are independent and the target is the generator's population mean. CSV
//! data is loaded and split once; trials then differ only in their
//! calibration and deployment randomness, and the target is the label mean
//! of the test split.

use ampi_core::datagen::{self, SYNTHETIC_MEAN};
use ampi_core::rng::{self, domain};
use ampi_core::{Dataset, TwoPopParams};

use crate::config::{DataSource, Splits, SweepConfig};
use crate::csv_io::{class_balance, load_csv_dataset};
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone)]
pub struct TrialData {
    pub burn_in: Dataset,
    pub test: Dataset,
    pub theta_star: f64,
}

/// Row indices of the train, calibration and test splits of `n` rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRows {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded split with `round(fraction * n)` calibration and test rows; the
/// rest is training data.
pub fn split_rows(n: usize, splits: &Splits, seed: u64) -> Result<SplitRows> {
    let n_test = (splits.test * n as f64).round() as usize;
    let n_cal = (splits.calibration * n as f64).round() as usize;
    if n_test == 0 || n_cal == 0 || n_test + n_cal > n {
        return Err(HarnessError::config(
            "splits",
            format!("{n} rows cannot be split into non-empty calibration and test sets"),
        ));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut perm, &mut rng::stream(rng::derive_seed(seed, &[domain::SUBSAMPLE, 0])));
    let mut test = perm[..n_test].to_vec();
    let mut calibration = perm[n_test..n_test + n_cal].to_vec();
    let mut train = perm[n_test + n_cal..].to_vec();
    for v in [&mut train, &mut calibration, &mut test] {
        v.sort_unstable();
    }
    Ok(SplitRows { train, calibration, test })
}

/// At most `size` rows of `pool`, chosen without replacement.
pub fn burn_in_rows(pool: &[usize], size: usize, seed: u64) -> Vec<usize> {
    if pool.len() <= size {
        return pool.to_vec();
    }
    let mut rows = pool.to_vec();
    rng::shuffle(&mut rows, &mut rng::stream(rng::derive_seed(seed, &[domain::SUBSAMPLE, 1])));
    rows.truncate(size);
    rows.sort_unstable();
    rows
}

/// Produces the data of each trial for a configuration.
#[derive(Debug, Clone)]
pub struct DataProvider {
    cfg: SweepConfig,
    fixed: Option<TrialData>,
}

impl DataProvider {
    pub fn new(cfg: &SweepConfig) -> Result<Self> {
        let fixed = match &cfg.data {
            DataSource::Csv { path, schema, balance } => {
                let mut data = load_csv_dataset(path, schema)?;
                if *balance {
                    data = class_balance(&data, cfg.seed)?;
                }
                let rows = split_rows(data.len(), &cfg.splits, cfg.seed)?;
                let burn = burn_in_rows(&rows.calibration, cfg.burn_in, cfg.seed);
                let test = data.select_rows(&rows.test);
                let labels = test.require_labels()?;
                let theta_star = labels.iter().sum::<f64>() / labels.len() as f64;
                Some(TrialData { burn_in: data.select_rows(&burn), test, theta_star })
            }
            _ => None,
        };
        Ok(DataProvider { cfg: cfg.clone(), fixed })
    }

    /// Size of the deployment stream, which is the same in every trial.
    pub fn n_test(&self) -> usize {
        match &self.fixed {
            Some(t) => t.test.len(),
            None => (self.cfg.splits.test * self.population_size() as f64).round() as usize,
        }
    }

    fn population_size(&self) -> usize {
        match &self.cfg.data {
            DataSource::Synthetic { params, .. }
            | DataSource::Noisy { params, .. }
            | DataSource::Specialized { params, .. } => params.n,
            DataSource::TwoPop { n, .. } => *n,
            DataSource::Csv { .. } => 0,
        }
    }

    /// Data for the trial whose data seed is `seed`.
    pub fn trial(&self, seed: u64) -> Result<TrialData> {
        if let Some(fixed) = &self.fixed {
            return Ok(fixed.clone());
        }
        let cfg = &self.cfg;
        let n = self.population_size();
        let rows = split_rows(n, &cfg.splits, seed)?;
        let (full, theta_star) = match &cfg.data {
            DataSource::Synthetic { params, tree_depths } => {
                let mut full = datagen::gen_synthetic_regression(params, seed)?.dataset;
                if rows.train.is_empty() {
                    return Err(HarnessError::config("splits.train", "tree predictors need a training split"));
                }
                let train = full.select_rows(&rows.train);
                for id in cfg.predictor_ids() {
                    let tree = datagen::fit_tree_predictor(&train, tree_depths[&id])?;
                    let preds = datagen::tree_predictions(&tree, &full)?;
                    full = full.with_prediction(id, preds)?;
                }
                (full, SYNTHETIC_MEAN)
            }
            DataSource::Noisy { params, sigmas } => {
                let mut full = datagen::gen_synthetic_regression(params, seed)?.dataset;
                let labels = full.require_labels()?;
                for id in cfg.predictor_ids() {
                    let preds = datagen::make_noisy_predictor(&labels, sigmas[&id], datagen::predictor_seed(seed, &id))?;
                    full = full.with_prediction(id, preds)?;
                }
                (full, SYNTHETIC_MEAN)
            }
            DataSource::Specialized { params, sigma_good, sigma_bad, column, threshold } => {
                let base = datagen::gen_synthetic_regression(params, seed)?.dataset;
                let ids = cfg.predictor_ids();
                let full = datagen::add_specialized_predictors(
                    base, &ids[0], &ids[1], *column, *threshold, *sigma_good, *sigma_bad, seed,
                )?;
                (full, SYNTHETIC_MEAN)
            }
            DataSource::TwoPop { n, p, r_e, r_h, delta, var_y } => {
                let params = self.two_pop_params(*n, *p, *r_e, *r_h, *delta, *var_y);
                (datagen::gen_two_population(&params, *n, seed)?.dataset, 0.0)
            }
            DataSource::Csv { .. } => unreachable!("csv data is fixed"),
        };
        let burn = burn_in_rows(&rows.calibration, cfg.burn_in, seed);
        Ok(TrialData { burn_in: full.select_rows(&burn), test: full.select_rows(&rows.test), theta_star })
    }

    fn two_pop_params(&self, n: usize, p: f64, r_e: f64, r_h: f64, delta: f64, var_y: f64) -> TwoPopParams {
        let costs = &self.cfg.predictor_costs;
        TwoPopParams {
            p,
            r_e,
            r_h,
            delta,
            c1: costs[datagen::CHEAP],
            c2: costs[datagen::EXPENSIVE],
            c_label: self.cfg.label_cost,
            // only the generator reads these parameters, and it ignores b
            b: 1.0,
            n,
            var_y,
        }
    }
}
