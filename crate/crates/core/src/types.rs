//! Domain types shared by the optimizer, the deployment engine and the
//! generators. Everything here is immutable after construction and `Send +
//! Sync`, so calibrations and trials can be shared across worker threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::uncertainty::UncertaintyModel;

pub type PredictorId = String;

/// A non-empty set of predictor ids, stored sorted so that equal sets
/// compare and hash equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Subset(Vec<PredictorId>);

impl Subset {
    pub fn new<I, S>(members: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<PredictorId>,
    {
        let set: BTreeSet<PredictorId> = members.into_iter().map(Into::into).collect();
        if set.is_empty() {
            return Err(Error::invalid("a subset must contain at least one predictor"));
        }
        Ok(Subset(set.into_iter().collect()))
    }

    pub fn singleton(id: impl Into<PredictorId>) -> Self {
        Subset(vec![id.into()])
    }

    pub fn members(&self) -> &[PredictorId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join("+"))
    }
}

/// The candidate family of subsets a router may choose from.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetFamily {
    subsets: Vec<Subset>,
}

impl SubsetFamily {
    pub fn new(subsets: Vec<Subset>) -> Result<Self> {
        if subsets.is_empty() {
            return Err(Error::invalid("subset family must be non-empty"));
        }
        let mut seen = BTreeSet::new();
        for s in &subsets {
            if !seen.insert(s.clone()) {
                return Err(Error::invalid(format!("duplicate subset {s} in family")));
            }
        }
        Ok(SubsetFamily { subsets })
    }

    /// One singleton per predictor, in the given order.
    pub fn singletons<S: AsRef<str>>(ids: &[S]) -> Result<Self> {
        Self::new(ids.iter().map(|id| Subset::singleton(id.as_ref())).collect())
    }

    /// Every non-empty subset of the given predictors, ordered by size and
    /// then lexicographically.
    pub fn all_nonempty<S: AsRef<str>>(ids: &[S]) -> Result<Self> {
        let ids: Vec<&str> = ids.iter().map(AsRef::as_ref).collect();
        if ids.len() > 16 {
            return Err(Error::invalid("power-set family limited to 16 predictors"));
        }
        let mut subsets = Vec::new();
        for mask in 1u32..(1 << ids.len()) {
            let members = ids
                .iter()
                .enumerate()
                .filter(|(j, _)| mask & (1 << j) != 0)
                .map(|(_, id)| *id);
            subsets.push(Subset::new(members)?);
        }
        subsets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        subsets.dedup();
        Self::new(subsets)
    }

    pub fn subsets(&self) -> &[Subset] {
        &self.subsets
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn index_of(&self, subset: &Subset) -> Option<usize> {
        self.subsets.iter().position(|s| s == subset)
    }

    /// All predictor ids referenced by any subset, sorted.
    pub fn predictor_ids(&self) -> Vec<PredictorId> {
        let set: BTreeSet<&PredictorId> = self.subsets.iter().flat_map(|s| s.0.iter()).collect();
        set.into_iter().cloned().collect()
    }
}

/// Covariates, optional labels and per-predictor prediction columns for `n`
/// instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: Array2<f64>,
    labels: Vec<Option<f64>>,
    predictions: BTreeMap<PredictorId, Vec<f64>>,
}

impl Dataset {
    pub fn new(
        covariates: Array2<f64>,
        labels: Vec<Option<f64>>,
        predictions: BTreeMap<PredictorId, Vec<f64>>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
        }
        for (id, col) in &predictions {
            if col.len() != n {
                return Err(Error::invalid(format!(
                    "prediction column '{id}' has length {} but dataset has {n} rows",
                    col.len()
                )));
            }
        }
        Ok(Dataset { covariates, labels, predictions })
    }

    /// Convenience constructor for fully labeled data.
    pub fn labeled(
        covariates: Array2<f64>,
        labels: Vec<f64>,
        predictions: BTreeMap<PredictorId, Vec<f64>>,
    ) -> Result<Self> {
        Self::new(covariates, labels.into_iter().map(Some).collect(), predictions)
    }

    pub fn len(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn labels(&self) -> &[Option<f64>] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<f64> {
        self.labels[i]
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    /// All labels, or an error naming the first unlabeled row.
    pub fn require_labels(&self) -> Result<Vec<f64>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, y)| y.ok_or(Error::MissingLabel(i)))
            .collect()
    }

    pub fn predictions(&self) -> &BTreeMap<PredictorId, Vec<f64>> {
        &self.predictions
    }

    pub fn prediction(&self, id: &str) -> Result<&[f64]> {
        self.predictions
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownPredictor(id.to_string()))
    }

    pub fn with_prediction(mut self, id: impl Into<PredictorId>, column: Vec<f64>) -> Result<Self> {
        if column.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: column.len() });
        }
        self.predictions.insert(id.into(), column);
        Ok(self)
    }

    /// Checks that every predictor referenced by `family` has a column.
    pub fn check_family(&self, family: &SubsetFamily) -> Result<()> {
        for id in family.predictor_ids() {
            self.prediction(&id)?;
        }
        Ok(())
    }

    /// Row-major `n x |subset|` matrix of the subset's predictions.
    pub fn subset_matrix(&self, subset: &Subset) -> Result<Vec<f64>> {
        let cols: Vec<&[f64]> = subset
            .members()
            .iter()
            .map(|id| self.prediction(id))
            .collect::<Result<_>>()?;
        let q = cols.len();
        let mut out = vec![0.0; self.len() * q];
        for (i, row) in out.chunks_exact_mut(q).enumerate() {
            for (slot, col) in row.iter_mut().zip(&cols) {
                *slot = col[i];
            }
        }
        Ok(out)
    }

    /// Row-major `n x |columns|` matrix of selected covariate columns.
    pub fn feature_matrix(&self, columns: Option<&[usize]>) -> Result<(Vec<f64>, usize)> {
        let d = self.dim();
        let cols: Vec<usize> = match columns {
            Some(c) => {
                if let Some(&bad) = c.iter().find(|&&j| j >= d) {
                    return Err(Error::invalid(format!(
                        "feature column {bad} out of range for {d} covariates"
                    )));
                }
                c.to_vec()
            }
            None => (0..d).collect(),
        };
        let mut out = Vec::with_capacity(self.len() * cols.len());
        for row in self.covariates.rows() {
            out.extend(cols.iter().map(|&j| row[j]));
        }
        Ok((out, cols.len()))
    }

    /// A new dataset holding the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let covariates = self.covariates.select(ndarray::Axis(0), rows);
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        let predictions = self
            .predictions
            .iter()
            .map(|(id, col)| (id.clone(), rows.iter().map(|&i| col[i]).collect()))
            .collect();
        Dataset { covariates, labels, predictions }
    }

    /// Same rows with every label hidden.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            covariates: self.covariates.clone(),
            labels: vec![None; self.len()],
            predictions: self.predictions.clone(),
        }
    }
}

/// Query costs per predictor, the gold-label cost, and the per-instance
/// budget `b = B / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    predictor_costs: BTreeMap<PredictorId, f64>,
    label_cost: f64,
    per_instance_budget: f64,
}

impl CostModel {
    pub fn new(
        predictor_costs: BTreeMap<PredictorId, f64>,
        label_cost: f64,
        per_instance_budget: f64,
    ) -> Result<Self> {
        for (id, &c) in &predictor_costs {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::invalid(format!("cost of '{id}' must be finite and >= 0")));
            }
        }
        if !(label_cost.is_finite() && label_cost > 0.0) {
            return Err(Error::invalid("label cost must be finite and > 0"));
        }
        if !(per_instance_budget.is_finite() && per_instance_budget > 0.0) {
            return Err(Error::invalid("per-instance budget must be finite and > 0"));
        }
        Ok(CostModel { predictor_costs, label_cost, per_instance_budget })
    }

    /// Builds from a total budget `B` spread over `n` deployment instances.
    pub fn from_total_budget(
        predictor_costs: BTreeMap<PredictorId, f64>,
        label_cost: f64,
        total_budget: f64,
        n: usize,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("deployment size must be positive"));
        }
        Self::new(predictor_costs, label_cost, total_budget / n as f64)
    }

    pub fn predictor_costs(&self) -> &BTreeMap<PredictorId, f64> {
        &self.predictor_costs
    }

    pub fn predictor_cost(&self, id: &str) -> Result<f64> {
        self.predictor_costs
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownPredictor(id.to_string()))
    }

    pub fn label_cost(&self) -> f64 {
        self.label_cost
    }

    pub fn per_instance_budget(&self) -> f64 {
        self.per_instance_budget
    }

    pub fn with_budget(&self, per_instance_budget: f64) -> Result<Self> {
        Self::new(self.predictor_costs.clone(), self.label_cost, per_instance_budget)
    }

    /// `c_I`, the sum of member costs.
    pub fn subset_cost(&self, subset: &Subset) -> Result<f64> {
        subset.members().iter().map(|id| self.predictor_cost(id)).sum()
    }

    pub fn family_costs(&self, family: &SubsetFamily) -> Result<Vec<f64>> {
        family.subsets().iter().map(|s| self.subset_cost(s)).collect()
    }

    /// Smallest per-instance spend any routing can reach when every
    /// probability sits at the floor.
    pub fn floor_spend(&self, family: &SubsetFamily, pi_floor: f64) -> Result<f64> {
        let min_c = self
            .family_costs(family)?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        Ok(min_c + pi_floor * self.label_cost)
    }

    /// Slater condition: the budget strictly exceeds the floor spend.
    pub fn is_slater_feasible(&self, family: &SubsetFamily, pi_floor: f64) -> Result<bool> {
        Ok(self.floor_spend(family, pi_floor)? < self.per_instance_budget)
    }
}

/// How the deployment router picks a subset per instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoutingMode {
    /// Per-instance Lagrangian argmin.
    #[default]
    Optimal,
    /// Uniformly random subset per instance (ablation).
    Uniform,
}

/// Fitted state of one subset after calibration.
#[derive(Debug, Clone)]
pub struct SubsetFit {
    pub subset: Subset,
    pub cost: f64,
    pub weights: Vec<f64>,
    pub model: UncertaintyModel,
}

#[derive(Debug, Clone, Default)]
pub struct CalibrationDiagnostics {
    pub outer_iterations: usize,
    pub converged: bool,
    /// The iteration returned (up to rounding) to the state of two iterations
    /// earlier and was stopped. Piecewise-constant uncertainty models can
    /// alternate between two fits that differ by more than the tolerances.
    pub cycle_detected: bool,
    /// `false` when the budget exceeds the spend at `mu -> 0`.
    pub budget_binding: bool,
    /// Expected spend at the returned multiplier under deterministic routing.
    pub spend_at_multiplier: f64,
    /// Expected spend after resolving a routing tie at the multiplier (see
    /// [`crate::optimizer::MuSolution`]); equals the budget when binding.
    pub resolved_spend: f64,
    /// Share of the routing tie at the multiplier that must go to the
    /// costlier side for the resolved spend to meet the budget; 0 when the
    /// spend is continuous there.
    pub tie_fraction: f64,
    pub mu_history: Vec<f64>,
    pub max_lambda_change: Vec<f64>,
    pub ridge_used: bool,
}

/// Output of the calibration loop: per-subset weights and uncertainty
/// models, the budget multiplier, and everything deployment needs.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub family: SubsetFamily,
    pub fits: Vec<SubsetFit>,
    pub multiplier: f64,
    pub costs: CostModel,
    pub deployment_n: usize,
    pub pi_floor: f64,
    pub routing: RoutingMode,
    pub uncertainty_features: Option<Vec<usize>>,
    pub diagnostics: CalibrationDiagnostics,
}

impl CalibrationResult {
    pub fn fit_for(&self, subset: &Subset) -> Option<&SubsetFit> {
        self.fits.iter().find(|f| &f.subset == subset)
    }

    pub fn weights_for(&self, subset: &Subset) -> Option<&[f64]> {
        self.fit_for(subset).map(|f| f.weights.as_slice())
    }
}

/// Per-instance routing and labeling outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingDecision {
    /// Index into the calibration family.
    pub subset: usize,
    /// Probability before the floor/one clamp.
    pub pi_raw: f64,
    pub pi_hat: f64,
    pub labeled: bool,
    pub combined_prediction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalEstimate {
    pub theta_hat: f64,
    pub sigma_sq_hat: f64,
    pub alpha: f64,
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    pub realized_spend: f64,
}

impl IntervalEstimate {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Parameters of the two-population (easy/hard) model with one cheap and
/// one expensive predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPopParams {
    pub p: f64,
    pub r_e: f64,
    pub r_h: f64,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    pub c_label: f64,
    pub b: f64,
    pub n: usize,
    pub var_y: f64,
}

impl TwoPopParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::invalid(msg)) };
        check(self.p > 0.0 && self.p <= 1.0, "p must lie in (0, 1]")?;
        check(self.r_e >= 0.0 && self.r_h >= 0.0, "residual variances must be >= 0")?;
        check((0.0..=1.0).contains(&self.delta), "delta must lie in [0, 1]")?;
        check(self.c1 >= 0.0 && self.c2 >= 0.0, "predictor costs must be >= 0")?;
        check(self.c_label > 0.0 && self.b > 0.0, "label cost and budget must be > 0")?;
        check(self.n >= 1, "n must be positive")?;
        check(self.var_y >= 0.0, "var_y must be >= 0")?;
        let all_finite = [self.p, self.r_e, self.r_h, self.delta, self.c1, self.c2, self.c_label, self.b, self.var_y]
            .iter()
            .all(|v| v.is_finite());
        check(all_finite, "parameters must be finite")
    }

    /// Residual variance of predictor `j` (1 or 2) on the hard population.
    pub fn hard_residual(&self, j: usize) -> f64 {
        if j == 2 {
            self.r_h * (1.0 - self.delta)
        } else {
            self.r_h
        }
    }
}
