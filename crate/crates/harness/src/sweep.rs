//! Budget sweeps over repeated trials.
//!
//! Each trial draws its data once and evaluates every viable
//! (budget, method) pair on it. Seeds are derived from the root seed:
//!
//! * data and burn-in: `(TRIAL, trial)`
//! * calibration: `(CALIBRATE, trial)`
//! * deployment: `(DEPLOY, budget index, trial)`
//!
//! None of them involve the method, so every method in a trial sees the
//! same data and the same deployment draws, and adding or removing a
//! method leaves the others' results unchanged.

use std::path::Path;

use ampi_core::engine::{confidence_interval, deploy_with_stored_labels, increment, point_estimate, variance_estimate};
use ampi_core::optimizer::{calibrate_from, initial_fit, route, uncertainty_table, InitialFit};
use ampi_core::rng::{self, domain};
use ampi_core::{CalibrationResult, CostModel, Dataset, Error as CoreError, IntervalEstimate, Subset, SubsetFamily};
use log::{debug, info, warn};
use rayon::prelude::*;

use crate::config::{FamilyKind, Method, SweepConfig};
use crate::error::{HarnessError, Result};
use crate::sources::{DataProvider, TrialData};

/// Smallest total budget that pays for querying every test instance at
/// cost `method_cost` plus `n_min` gold labels.
pub fn viability_cutoff(method_cost: f64, n_test: usize, n_min: usize, label_cost: f64) -> f64 {
    method_cost * n_test as f64 + n_min as f64 * label_cost
}

/// Per-instance query cost used for the viability cutoff: the predictor's
/// own cost for single-predictor baselines, otherwise the mean predictor
/// cost.
pub fn method_cost(cfg: &SweepConfig, method: &Method) -> f64 {
    match method {
        Method::Asi(id) => cfg.predictor_costs[id],
        _ => cfg.predictor_costs.values().sum::<f64>() / cfg.predictor_costs.len() as f64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub budget: f64,
    pub method: String,
    pub ci_width_mean: f64,
    pub ci_width_sem: f64,
    pub coverage: f64,
    pub mean_labels: f64,
    pub mean_spend: f64,
    pub n_trials_effective: usize,
    /// False when calibration found the budget infeasible in every trial.
    pub viable: bool,
}

/// Outcome of one (budget, method, trial) run whose calibration was
/// feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub budget_index: usize,
    pub method_index: usize,
    pub trial: usize,
    pub width: f64,
    pub covered: bool,
    pub labels: usize,
    /// Realized total spend over the deployment stream.
    pub spend: f64,
    /// Calibration met its tolerances or settled into a two-state cycle.
    pub settled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// One row per viable (budget, method) pair, ordered by budget and
    /// then by the configured method order.
    pub rows: Vec<SweepRow>,
    pub records: Vec<TrialRecord>,
    pub n_test: usize,
}

impl SweepResult {
    pub fn row(&self, budget: f64, method: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.budget == budget && r.method == method)
    }

    pub fn rows_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a SweepRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }
}

/// Summary statistics of per-trial values in trial order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSem {
    pub mean: f64,
    pub sem: f64,
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
pub fn mean_sem(values: &[f64]) -> MeanSem {
    let n = values.len();
    if n == 0 {
        return MeanSem { mean: f64::NAN, sem: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return MeanSem { mean, sem: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanSem { mean, sem: (var / n as f64).sqrt() }
}

struct TrialOutcome {
    estimate: IntervalEstimate,
    labels: usize,
    spend: f64,
}

enum PairOutcome {
    Done(TrialRecord),
    Infeasible,
}

struct Plan {
    pairs: Vec<(usize, usize)>,
    n_test: usize,
}

fn plan(cfg: &SweepConfig, n_test: usize) -> Plan {
    let mut pairs = Vec::new();
    for (bi, &budget) in cfg.budgets.iter().enumerate() {
        for (mi, method) in cfg.methods.iter().enumerate() {
            let cutoff = viability_cutoff(method_cost(cfg, method), n_test, cfg.n_min, cfg.label_cost);
            if budget >= cutoff {
                pairs.push((bi, mi));
            } else {
                debug!("skipping {method} at B = {budget}: below the viability cutoff {cutoff}");
            }
        }
    }
    Plan { pairs, n_test }
}

fn ampi_family(cfg: &SweepConfig) -> Result<SubsetFamily> {
    let ids = cfg.predictor_ids();
    Ok(match cfg.family {
        FamilyKind::Singletons => SubsetFamily::singletons(&ids)?,
        FamilyKind::All => SubsetFamily::all_nonempty(&ids)?,
    })
}

fn method_family(cfg: &SweepConfig, method: &Method) -> Result<SubsetFamily> {
    Ok(match method {
        Method::Ampi | Method::AmpiRandom => ampi_family(cfg)?,
        Method::Asi(id) => SubsetFamily::new(vec![Subset::singleton(id.as_str())])?,
        Method::AsiMixture => SubsetFamily::singletons(&cfg.predictor_ids())?,
    })
}

/// Deploys a uniform per-instance mixture of single-predictor
/// calibrations: the routing coin picks one calibration for each instance,
/// which then predicts and samples exactly as it would on its own. Coins
/// and label draws come from the same streams as uniform routing in
/// [`deploy`](ampi_core::engine::deploy), so a mixture and a randomly
/// routed AM-PPI run with the same seed see the same draws.
fn deploy_mixture(stream: &Dataset, calibs: &[CalibrationResult], alpha: f64, seed: u64) -> Result<TrialOutcome> {
    let n = stream.len();
    let k = calibs.len();
    let labels = stream.require_labels()?;
    let mut columns = Vec::with_capacity(k);
    let mut tables = Vec::with_capacity(k);
    for c in calibs {
        let fit = &c.fits[0];
        columns.push(stream.prediction(&fit.subset.members()[0])?);
        tables.push(uncertainty_table(stream, &c.family, &[&fit.model], c.uncertainty_features.as_deref())?);
    }
    let coin_key = rng::derive_seed(seed, &[domain::ROUTING_COIN]);
    let label_key = rng::derive_seed(seed, &[domain::LABEL_DRAW]);
    let mut increments = Vec::with_capacity(n);
    let mut labels_collected = 0;
    let mut spend = 0.0;
    for i in 0..n {
        let coin = rng::instance_uniform(coin_key, i as u64);
        let j = ((coin * k as f64) as usize).min(k - 1);
        let c = &calibs[j];
        let fit = &c.fits[0];
        let c_label = c.costs.label_cost();
        let pi_hat = route(&[tables[j][i]], &[fit.cost], c_label, c.multiplier, n, c.pi_floor)?.pi_hat;
        let labeled = rng::instance_uniform(label_key, i as u64) < pi_hat;
        if labeled {
            labels_collected += 1;
            spend += c_label;
        }
        spend += fit.cost;
        increments.push(increment(fit.weights[0] * columns[j][i], labeled.then_some(labels[i]), pi_hat));
    }
    let theta_hat = point_estimate(&increments)?;
    let estimate = confidence_interval(theta_hat, variance_estimate(&increments, theta_hat), n, alpha)?;
    Ok(TrialOutcome { estimate, labels: labels_collected, spend })
}

/// Initial fits restricted to `family`, taken from fits over `union`.
fn restrict(init: &InitialFit, union: &SubsetFamily, family: &SubsetFamily) -> InitialFit {
    let idx: Vec<usize> = family.subsets().iter().map(|s| union.index_of(s).expect("subset in union")).collect();
    InitialFit {
        weights: idx.iter().map(|&j| init.weights[j].clone()).collect(),
        models: idx.iter().map(|&j| init.models[j].clone()).collect(),
        params: idx.iter().map(|&j| init.params[j]).collect(),
        ridge_used: init.ridge_used,
    }
}

struct TrialRunner<'a> {
    cfg: &'a SweepConfig,
    provider: &'a DataProvider,
    plan: &'a Plan,
    union: SubsetFamily,
}

impl TrialRunner<'_> {
    /// Calibrates `method` at `budget`; `None` when the budget is
    /// infeasible for it.
    fn calibrate(
        &self,
        method: &Method,
        budget: f64,
        burn_in: &Dataset,
        union_fit: &InitialFit,
        calib_seed: u64,
    ) -> Result<Option<CalibrationResult>> {
        let cfg = self.cfg;
        let family = method_family(cfg, method)?;
        let init = restrict(union_fit, &self.union, &family);
        let costs = CostModel::from_total_budget(cfg.predictor_costs.clone(), cfg.label_cost, budget, self.plan.n_test)?;
        let opts = cfg.calibration_options(method, calib_seed);
        match calibrate_from(burn_in, &family, &costs, self.plan.n_test, &opts, &init) {
            Ok(c) => Ok(Some(c)),
            Err(CoreError::InfeasibleBudget { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn run(&self, trial: usize) -> Result<Vec<PairOutcome>> {
        let cfg = self.cfg;
        let data_seed = rng::derive_seed(cfg.seed, &[domain::TRIAL, trial as u64]);
        let calib_seed = rng::derive_seed(cfg.seed, &[domain::CALIBRATE, trial as u64]);
        let TrialData { burn_in, test, theta_star } = self.provider.trial(data_seed)?;
        let union_fit = initial_fit(&burn_in, &self.union, &cfg.calibration_options(&Method::Ampi, calib_seed))?;

        let mut out = Vec::with_capacity(self.plan.pairs.len());
        for &(bi, mi) in &self.plan.pairs {
            let method = &cfg.methods[mi];
            let budget = cfg.budgets[bi];
            let deploy_seed = rng::derive_seed(cfg.seed, &[domain::DEPLOY, bi as u64, trial as u64]);
            let components: Vec<Method> = match method {
                Method::AsiMixture => cfg.predictor_ids().into_iter().map(Method::Asi).collect(),
                other => vec![other.clone()],
            };
            let mut calibs = Vec::with_capacity(components.len());
            for m in &components {
                match self.calibrate(m, budget, &burn_in, &union_fit, calib_seed)? {
                    Some(c) => calibs.push(c),
                    None => break,
                }
            }
            if calibs.len() < components.len() {
                out.push(PairOutcome::Infeasible);
                continue;
            }
            let settled = calibs.iter().all(|c| c.diagnostics.converged || c.diagnostics.cycle_detected);
            let outcome = match method {
                Method::AsiMixture => deploy_mixture(&test, &calibs, cfg.alpha, deploy_seed)?,
                _ => {
                    let o = deploy_with_stored_labels(&test, &calibs[0], cfg.alpha, deploy_seed)?;
                    TrialOutcome { estimate: o.estimate, labels: o.labels_collected, spend: o.estimate.realized_spend }
                }
            };
            out.push(PairOutcome::Done(TrialRecord {
                budget_index: bi,
                method_index: mi,
                trial,
                width: outcome.estimate.width(),
                covered: outcome.estimate.contains(theta_star),
                labels: outcome.labels,
                spend: outcome.spend,
                settled,
            }));
        }
        Ok(out)
    }
}

/// Runs every trial (in parallel on the current rayon pool) and aggregates
/// per (budget, method). Results do not depend on the number of threads.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let provider = DataProvider::new(cfg)?;
    let n_test = provider.n_test();
    let plan = plan(cfg, n_test);
    let union = ampi_family(cfg)?;
    let mut union_subsets: Vec<Subset> = union.subsets().to_vec();
    for m in &cfg.methods {
        if let Method::Asi(id) = m {
            let s = Subset::singleton(id.as_str());
            if !union_subsets.contains(&s) {
                union_subsets.push(s);
            }
        }
    }
    let runner = TrialRunner { cfg, provider: &provider, plan: &plan, union: SubsetFamily::new(union_subsets)? };
    info!("sweep: {} trials, {} viable (budget, method) pairs, n_test = {n_test}", cfg.n_trials, plan.pairs.len());

    let per_trial: Vec<Vec<PairOutcome>> =
        (0..cfg.n_trials).into_par_iter().map(|t| runner.run(t)).collect::<Result<_>>()?;

    let mut records = Vec::new();
    let mut rows = Vec::with_capacity(plan.pairs.len());
    for (p, &(bi, mi)) in plan.pairs.iter().enumerate() {
        let pair_records: Vec<TrialRecord> = per_trial
            .iter()
            .filter_map(|outcomes| match &outcomes[p] {
                PairOutcome::Done(r) => Some(r.clone()),
                PairOutcome::Infeasible => None,
            })
            .collect();
        rows.push(aggregate(cfg.budgets[bi], &cfg.methods[mi], &pair_records));
        records.extend(pair_records);
    }
    let unsettled = records.iter().filter(|r| !r.settled).count();
    if unsettled > 0 {
        warn!(
            "{unsettled} of {} calibrations hit the outer iteration limit before meeting their tolerances",
            records.len()
        );
    }
    Ok(SweepResult { rows, records, n_test })
}

/// Aggregates the records of one (budget, method) pair.
pub fn aggregate(budget: f64, method: &Method, records: &[TrialRecord]) -> SweepRow {
    let n = records.len();
    let widths: Vec<f64> = records.iter().map(|r| r.width).collect();
    let MeanSem { mean, sem } = mean_sem(&widths);
    let avg = |f: &dyn Fn(&TrialRecord) -> f64| {
        if n == 0 {
            f64::NAN
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    SweepRow {
        budget,
        method: method.to_string(),
        ci_width_mean: mean,
        ci_width_sem: sem,
        coverage: avg(&|r| r.covered as u8 as f64),
        mean_labels: avg(&|r| r.labels as f64),
        mean_spend: avg(&|r| r.spend),
        n_trials_effective: n,
        viable: n > 0,
    }
}

pub const SWEEP_HEADER: [&str; 9] = [
    "budget",
    "method",
    "ci_width_mean",
    "ci_width_sem",
    "coverage",
    "mean_labels",
    "mean_spend",
    "n_trials_effective",
    "viable",
];

/// Writes the sweep rows as CSV.
pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.budget.to_string(),
            r.method.clone(),
            r.ci_width_mean.to_string(),
            r.ci_width_sem.to_string(),
            r.coverage.to_string(),
            r.mean_labels.to_string(),
            r.mean_spend.to_string(),
            r.n_trials_effective.to_string(),
            r.viable.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| HarnessError::Io { path: path.into(), source })?;
    write_sweep_csv(rows, std::io::BufWriter::new(file)).map_err(|source| HarnessError::Csv { path: path.into(), source })
}

/// Reads a file written by [`save_sweep_csv`].
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let csv_err = |source| HarnessError::Csv { path: path.into(), source };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(SWEEP_HEADER) {
        return Err(HarnessError::Data { path: path.into(), message: "not a sweep result file (header mismatch)".into() });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |field: &str| HarnessError::Parse { path: path.into(), line, message: format!("bad {field}") };
        let num = |i: usize| record[i].parse::<f64>().map_err(|_| parse_err(SWEEP_HEADER[i]));
        rows.push(SweepRow {
            budget: num(0)?,
            method: record[1].to_string(),
            ci_width_mean: num(2)?,
            ci_width_sem: num(3)?,
            coverage: num(4)?,
            mean_labels: num(5)?,
            mean_spend: num(6)?,
            n_trials_effective: record[7].parse().map_err(|_| parse_err(SWEEP_HEADER[7]))?,
            viable: record[8].parse().map_err(|_| parse_err(SWEEP_HEADER[8]))?,
        });
    }
    Ok(rows)
}

/// Writes per-trial records as CSV (budget, method, trial, width, covered,
/// labels, spend).
pub fn save_records_csv(cfg: &SweepConfig, records: &[TrialRecord], path: &Path) -> Result<()> {
    let csv_err = |source| HarnessError::Csv { path: path.into(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["budget", "method", "trial", "width", "covered", "labels", "spend"]).map_err(csv_err)?;
    for r in records {
        w.write_record([
            cfg.budgets[r.budget_index].to_string(),
            cfg.methods[r.method_index].to_string(),
            r.trial.to_string(),
            r.width.to_string(),
            r.covered.to_string(),
            r.labels.to_string(),
            r.spend.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| HarnessError::Io { path: path.into(), source })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    #[test]
    fn cutoff_arithmetic() {
        assert!((viability_cutoff(0.1, 100, 7, 1.0) - 17.0).abs() < 1e-12);
        assert_eq!(viability_cutoff(0.0, 100, 7, 1.0), 7.0);
    }

    #[test]
    fn ampi_uses_mean_cost() {
        let mut cfg = crate::config::RawConfig::default().build().unwrap();
        cfg.predictor_costs = BTreeMap::from([("cheap".into(), 0.01), ("expensive".into(), 0.05)]);
        assert!((method_cost(&cfg, &Method::Ampi) - 0.03).abs() < 1e-15);
        assert_eq!(method_cost(&cfg, &Method::Asi("expensive".into())), 0.05);
    }

    #[test]
    fn sem_of_known_values() {
        let s = mean_sem(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.sem - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sem(&[7.0]).sem, 0.0);
    }
}
