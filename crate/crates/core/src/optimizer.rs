//! Sampling rule, weighted least squares, budget multiplier and the
//! calibration fixed point.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};
use crate::rng;
use crate::types::{
    CalibrationDiagnostics, CalibrationResult, CostModel, Dataset, RoutingMode, Subset, SubsetFamily, SubsetFit,
};
use crate::uncertainty::{self, BoostParams, InstanceView, UncertaintyModel, UncertaintySpec};

/// Bracket and stopping rule for the multiplier search. The bracket ends
/// are in units of `c_label / n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionConfig {
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
    /// Times each bracket end may be pushed out by a factor of 10.
    pub max_expansions: usize,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        BisectionConfig { mu_lo: 1e-12, mu_hi: 1e12, rel_tol: 1e-9, max_iters: 300, max_expansions: 60 }
    }
}

impl BisectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_lo > 0.0 && self.mu_lo < self.mu_hi && self.mu_hi.is_finite()) {
            return Err(Error::invalid("bisection bracket needs 0 < mu_lo < mu_hi"));
        }
        if !(self.rel_tol > 0.0) || self.max_iters == 0 {
            return Err(Error::invalid("bisection needs rel_tol > 0 and max_iters >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    pub max_outer_iters: usize,
    pub mu_rel_tol: f64,
    pub lambda_rel_tol: f64,
    /// Added to the diagonal of every weighted Gram matrix.
    pub ridge: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig { max_outer_iters: 10, mu_rel_tol: 1e-4, lambda_rel_tol: 1e-4, ridge: 0.0 }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 {
            return Err(Error::invalid("max_outer_iters must be >= 1"));
        }
        if !(self.mu_rel_tol > 0.0 && self.lambda_rel_tol > 0.0) {
            return Err(Error::invalid("fixed-point tolerances must be > 0"));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::invalid("ridge must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Unconstrained optimal labeling probability `sqrt(r / (n mu c_label))`.
pub fn pi_star(r: f64, n: usize, mu: f64, c_label: f64) -> Result<f64> {
    for (name, v) in [("r", r), ("mu", mu), ("c_label", c_label)] {
        ensure_finite(name, v)?;
    }
    if n == 0 || mu <= 0.0 || c_label <= 0.0 || r < 0.0 {
        return Err(Error::invalid("pi_star needs n >= 1, mu > 0, c_label > 0, r >= 0"));
    }
    Ok(pi_star_unchecked(r, n, mu, c_label))
}

#[inline]
pub(crate) fn pi_star_unchecked(r: f64, n: usize, mu: f64, c_label: f64) -> f64 {
    (r / (n as f64 * mu * c_label)).sqrt()
}

/// Clamps a probability into `[pi_floor, 1]`.
#[inline]
pub fn clip_pi(pi_raw: f64, pi_floor: f64) -> f64 {
    pi_raw.max(pi_floor).min(1.0)
}

/// Per-instance Lagrangian cost of routing to a subset:
/// `(r/n)(1/pi - 1) + mu c_I + mu c_label pi`.
pub fn instance_cost(r: f64, pi_hat: f64, mu: f64, c_subset: f64, c_label: f64, n: usize) -> f64 {
    if pi_hat == 1.0 {
        return mu * (c_subset + c_label);
    }
    (r / n as f64) * (1.0 / pi_hat - 1.0) + mu * c_subset + mu * c_label * pi_hat
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteChoice {
    /// Index into the family.
    pub subset: usize,
    pub pi_raw: f64,
    pub pi_hat: f64,
}

/// Order in which subsets win ties: lowest cost, then family order.
pub fn tie_order(subset_costs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..subset_costs.len()).collect();
    order.sort_by(|&a, &b| subset_costs[a].total_cmp(&subset_costs[b]).then(a.cmp(&b)));
    order
}

/// Picks the subset minimizing [`instance_cost`] given each subset's
/// uncertainty `u[I]` at the instance.
pub fn route(u: &[f64], subset_costs: &[f64], c_label: f64, mu: f64, n: usize, pi_floor: f64) -> Result<RouteChoice> {
    if u.is_empty() {
        return Err(Error::invalid("cannot route over an empty family"));
    }
    if u.len() != subset_costs.len() {
        return Err(Error::DimensionMismatch { expected: subset_costs.len(), got: u.len() });
    }
    if !(mu > 0.0) || n == 0 || !(c_label > 0.0) {
        return Err(Error::invalid("route needs mu > 0, n >= 1, c_label > 0"));
    }
    Ok(route_ordered(u, subset_costs, &tie_order(subset_costs), c_label, mu, n, pi_floor))
}

pub(crate) fn route_ordered(
    u: &[f64],
    subset_costs: &[f64],
    order: &[usize],
    c_label: f64,
    mu: f64,
    n: usize,
    pi_floor: f64,
) -> RouteChoice {
    let mut best: Option<(f64, RouteChoice)> = None;
    for &j in order {
        let r = u[j] * u[j];
        let pi_raw = pi_star_unchecked(r, n, mu, c_label);
        let pi_hat = clip_pi(pi_raw, pi_floor);
        let cost = instance_cost(r, pi_hat, mu, subset_costs[j], c_label, n);
        if best.as_ref().is_none_or(|(b, _)| cost < *b) {
            best = Some((cost, RouteChoice { subset: j, pi_raw, pi_hat }));
        }
    }
    best.expect("non-empty family").1
}

/// Uncertainty values `u_I(x)` of every burn-in row for every subset,
/// precomputed so the spend can be evaluated cheaply at many multipliers.
#[derive(Debug, Clone)]
pub struct SpendModel {
    /// Row-major `m x k` uncertainties.
    u: Vec<f64>,
    k: usize,
    costs: Vec<f64>,
    order: Vec<usize>,
    c_label: f64,
    n: usize,
    pi_floor: f64,
    routing: RoutingMode,
}

impl SpendModel {
    /// Builds from a row-major `m x k` table of uncertainties.
    pub fn new(
        u_table: &[f64],
        subset_costs: Vec<f64>,
        c_label: f64,
        n: usize,
        pi_floor: f64,
        routing: RoutingMode,
    ) -> Result<Self> {
        let k = subset_costs.len();
        if k == 0 {
            return Err(Error::invalid("subset family must be non-empty"));
        }
        if u_table.is_empty() {
            return Err(Error::invalid("spend needs a non-empty burn-in sample"));
        }
        if !u_table.len().is_multiple_of(k) {
            return Err(Error::DimensionMismatch { expected: k, got: u_table.len() % k });
        }
        if n == 0 || !(c_label > 0.0) || !(pi_floor > 0.0 && pi_floor <= 1.0) {
            return Err(Error::invalid("spend needs n >= 1, c_label > 0 and pi_floor in (0, 1]"));
        }
        Ok(SpendModel {
            u: u_table.to_vec(),
            k,
            order: tie_order(&subset_costs),
            costs: subset_costs,
            c_label,
            n,
            pi_floor,
            routing,
        })
    }

    pub fn rows(&self) -> usize {
        self.u.len() / self.k
    }

    fn row_spend(&self, row: &[f64], mu: f64) -> f64 {
        match self.routing {
            RoutingMode::Optimal => {
                let choice = route_ordered(row, &self.costs, &self.order, self.c_label, mu, self.n, self.pi_floor);
                self.costs[choice.subset] + self.c_label * choice.pi_hat
            }
            RoutingMode::Uniform => {
                row.iter()
                    .zip(&self.costs)
                    .map(|(&u, &c)| c + self.c_label * clip_pi(pi_star_unchecked(u * u, self.n, mu, self.c_label), self.pi_floor))
                    .sum::<f64>()
                    / self.k as f64
            }
        }
    }

    /// Burn-in average of `c_I + c_label pi_I` under the routing at `mu`.
    pub fn spend(&self, mu: f64) -> f64 {
        self.u.chunks_exact(self.k).map(|row| self.row_spend(row, mu)).sum::<f64>() / self.rows() as f64
    }

    /// Spend as `mu -> infinity`: every probability at the floor.
    pub fn floor_spend(&self) -> f64 {
        let c = match self.routing {
            RoutingMode::Optimal => self.costs.iter().copied().fold(f64::INFINITY, f64::min),
            RoutingMode::Uniform => self.costs.iter().sum::<f64>() / self.k as f64,
        };
        c + self.pi_floor * self.c_label
    }
}

/// Row-major `m x k` table of `u_I(x)` for every row of `data`.
pub fn uncertainty_table(
    data: &Dataset,
    family: &SubsetFamily,
    models: &[&UncertaintyModel],
    feature_columns: Option<&[usize]>,
) -> Result<Vec<f64>> {
    if models.len() != family.len() {
        return Err(Error::DimensionMismatch { expected: family.len(), got: models.len() });
    }
    let (features, d) = data.feature_matrix(feature_columns)?;
    let mats: Vec<(Vec<f64>, usize)> = family
        .subsets()
        .iter()
        .map(|s| Ok((data.subset_matrix(s)?, s.len())))
        .collect::<Result<_>>()?;
    let k = family.len();
    let mut out = vec![0.0; data.len() * k];
    for i in 0..data.len() {
        for (j, ((mat, q), model)) in mats.iter().zip(models).enumerate() {
            let view = InstanceView {
                features: &features[i * d..(i + 1) * d],
                predictions: &mat[i * q..(i + 1) * q],
                label: data.label(i),
            };
            out[i * k + j] = model.predict(&view)?;
        }
    }
    Ok(out)
}

/// Expected per-instance spend on the burn-in sample at multiplier `mu`.
#[allow(clippy::too_many_arguments)]
pub fn expected_spend(
    burn_in: &Dataset,
    family: &SubsetFamily,
    fits: &[SubsetFit],
    costs: &CostModel,
    mu: f64,
    n: usize,
    pi_floor: f64,
    routing: RoutingMode,
    feature_columns: Option<&[usize]>,
) -> Result<f64> {
    if burn_in.is_empty() {
        return Err(Error::invalid("expected spend needs a non-empty burn-in sample"));
    }
    if !(mu > 0.0) {
        return Err(Error::invalid("mu must be > 0"));
    }
    let models: Vec<&UncertaintyModel> = fits.iter().map(|f| &f.model).collect();
    let table = uncertainty_table(burn_in, family, &models, feature_columns)?;
    let model = SpendModel::new(&table, costs.family_costs(family)?, costs.label_cost(), n, pi_floor, routing)?;
    Ok(model.spend(mu))
}

/// Result of the multiplier search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuSolution {
    pub mu: f64,
    /// `false` when even `mu -> 0` spends less than the budget.
    pub binding: bool,
    /// Spend at `mu` under deterministic routing; never above the budget
    /// when binding.
    pub spend: f64,
    /// Spend just below `mu`. Differs from `spend` only when a routing
    /// switch on the finite burn-in sample makes the spend jump across the
    /// budget.
    pub spend_above: f64,
    /// Fraction of the jump that a randomized tie at `mu` must take from
    /// the costlier routing to meet the budget exactly.
    pub tie_fraction: f64,
    pub iterations: usize,
}

impl MuSolution {
    /// Spend after resolving the routing tie with `tie_fraction`.
    pub fn resolved_spend(&self) -> f64 {
        self.spend + self.tie_fraction * (self.spend_above - self.spend)
    }
}

/// Finds `mu` with `spend(mu) = b` by bisection in `log mu`.
///
/// The spend is non-increasing in `mu`. The bracket starts at
/// `[mu_lo, mu_hi] * c_label / n` and each end is widened by factors of 10
/// as needed. With several subsets the sample spend can jump where the
/// routing of some burn-in row switches; when the budget falls inside such
/// a jump the bracket collapses onto the switch point and the returned
/// multiplier is its upper side, whose spend does not exceed `b`.
pub fn solve_mu(model: &SpendModel, b: f64, cfg: &BisectionConfig) -> Result<MuSolution> {
    cfg.validate()?;
    ensure_finite("budget", b)?;
    let floor = model.floor_spend();
    if b <= floor {
        return Err(Error::InfeasibleBudget { budget: b, min_spend: floor });
    }
    let scale = model.c_label / model.n as f64;
    let mut lo = cfg.mu_lo * scale;
    let mut hi = cfg.mu_hi * scale;
    let mut s_lo = model.spend(lo);
    let mut expansions = 0;
    while s_lo < b && expansions < cfg.max_expansions {
        lo /= 10.0;
        s_lo = model.spend(lo);
        expansions += 1;
    }
    if s_lo < b {
        return Ok(MuSolution { mu: lo, binding: false, spend: s_lo, spend_above: s_lo, tie_fraction: 0.0, iterations: 0 });
    }
    let mut s_hi = model.spend(hi);
    expansions = 0;
    while s_hi > b && expansions < cfg.max_expansions {
        hi *= 10.0;
        s_hi = model.spend(hi);
        expansions += 1;
    }
    if s_hi > b {
        return Err(Error::InfeasibleBudget { budget: b, min_spend: s_hi });
    }

    let within = |s: f64| ((s - b) / b).abs() <= cfg.rel_tol;
    if within(s_lo) {
        return Ok(exact(lo, s_lo, 0));
    }
    if within(s_hi) {
        return Ok(exact(hi, s_hi, 0));
    }
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let mid = (lo * hi).sqrt();
        if !(mid > lo && mid < hi) {
            break;
        }
        let s = model.spend(mid);
        if within(s) {
            return Ok(exact(mid, s, iterations));
        }
        if s > b {
            lo = mid;
            s_lo = s;
        } else {
            hi = mid;
            s_hi = s;
        }
    }
    let gap = s_lo - s_hi;
    let tie_fraction = if gap > 0.0 { ((b - s_hi) / gap).clamp(0.0, 1.0) } else { 0.0 };
    Ok(MuSolution { mu: hi, binding: true, spend: s_hi, spend_above: s_lo, tie_fraction, iterations })
}

fn exact(mu: f64, spend: f64, iterations: usize) -> MuSolution {
    MuSolution { mu, binding: true, spend, spend_above: spend, tie_fraction: 0.0, iterations }
}

/// Multiplier for a single subset without clipping:
/// `(c_label / n) (E sqrt(r) / (b - E c))^2`.
pub fn mu_closed_form(mean_sqrt_r: f64, b: f64, mean_c: f64, c_label: f64, n: usize) -> Result<f64> {
    for (name, v) in [("mean_sqrt_r", mean_sqrt_r), ("b", b), ("mean_c", mean_c), ("c_label", c_label)] {
        ensure_finite(name, v)?;
    }
    if n == 0 || !(c_label > 0.0) || mean_sqrt_r < 0.0 {
        return Err(Error::invalid("closed form needs n >= 1, c_label > 0, mean_sqrt_r >= 0"));
    }
    if b <= mean_c {
        return Err(Error::InfeasibleBudget { budget: b, min_spend: mean_c });
    }
    let ratio = mean_sqrt_r / (b - mean_c);
    Ok(c_label / n as f64 * ratio * ratio)
}

fn check_design(features: &[f64], q: usize, m: usize) -> Result<()> {
    if q == 0 || m == 0 {
        return Err(Error::invalid("design matrix must be non-empty"));
    }
    if features.len() != m * q {
        return Err(Error::DimensionMismatch { expected: m * q, got: features.len() });
    }
    Ok(())
}

/// Solves the symmetric positive semi-definite system `(G + ridge I) x = h`
/// by Cholesky, treating pivots below `1e-13 * trace / q` as singular.
fn solve_spd(gram: DMatrix<f64>, rhs: DVector<f64>, ridge: f64) -> Result<Vec<f64>> {
    let q = gram.nrows();
    let mut g = gram;
    for i in 0..q {
        g[(i, i)] += ridge;
    }
    let trace = g.trace();
    let singular = |min_pivot: f64| Error::SingularSystem { dim: q, min_pivot, trace };
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(singular(0.0));
    }
    let chol = g.cholesky().ok_or_else(|| singular(0.0))?;
    let min_pivot = chol.l_dirty().diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min);
    if min_pivot <= 1e-13 * trace / q as f64 {
        return Err(singular(min_pivot));
    }
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Weighted least squares without intercept: minimizes
/// `sum w_i (y_i - lambda' f_i)^2` over the row-major `m x q` design.
pub fn solve_lambda_wls(features: &[f64], q: usize, targets: &[f64], weights: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let m = targets.len();
    check_design(features, q, m)?;
    if weights.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: weights.len() });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::invalid("WLS weights must be finite and >= 0"));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::invalid("ridge must be finite and >= 0"));
    }
    let mut gram = DMatrix::<f64>::zeros(q, q);
    let mut rhs = DVector::<f64>::zeros(q);
    for ((row, &y), &w) in features.chunks_exact(q).zip(targets).zip(weights) {
        if w == 0.0 {
            continue;
        }
        for a in 0..q {
            rhs[a] += w * row[a] * y;
            for c in a..q {
                gram[(a, c)] += w * row[a] * row[c];
            }
        }
    }
    for a in 0..q {
        for c in 0..a {
            gram[(a, c)] = gram[(c, a)];
        }
    }
    solve_spd(gram, rhs, ridge)
}

/// Centered least squares slope `Cov(f, f)^-1 Cov(f, y)`.
pub fn ols_init(features: &[f64], q: usize, targets: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let m = targets.len();
    check_design(features, q, m)?;
    let mf = m as f64;
    let mut mean_f = vec![0.0; q];
    for row in features.chunks_exact(q) {
        for (acc, v) in mean_f.iter_mut().zip(row) {
            *acc += v / mf;
        }
    }
    let mean_y = targets.iter().sum::<f64>() / mf;
    let mut cov = DMatrix::<f64>::zeros(q, q);
    let mut cross = DVector::<f64>::zeros(q);
    for (row, &y) in features.chunks_exact(q).zip(targets) {
        for a in 0..q {
            let da = row[a] - mean_f[a];
            cross[a] += da * (y - mean_y) / mf;
            for c in 0..q {
                cov[(a, c)] += da * (row[c] - mean_f[c]) / mf;
            }
        }
    }
    solve_spd(cov, cross, ridge)
}

/// Runs `solve` with `ridge`; on a singular system with zero ridge, retries
/// once with a jitter of `1e-8 * trace / q`.
fn with_ridge_fallback(
    ridge: f64,
    q: usize,
    what: &str,
    ridge_used: &mut bool,
    solve: impl Fn(f64) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    match solve(ridge) {
        Err(Error::SingularSystem { trace, min_pivot, .. }) if ridge == 0.0 && trace > 0.0 && trace.is_finite() => {
            let jitter = 1e-8 * trace / q as f64;
            warn!("{what}: singular Gram matrix (min pivot {min_pivot:e}); retrying with ridge {jitter:e}");
            *ridge_used = true;
            solve(jitter)
        }
        other => other,
    }
}

/// Everything calibration needs besides the budget.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    pub fixed_point: FixedPointConfig,
    pub bisection: BisectionConfig,
    pub uncertainty: UncertaintySpec,
    /// Covariate columns fed to the uncertainty models; all when `None`.
    pub uncertainty_features: Option<Vec<usize>>,
    pub pi_floor: f64,
    pub routing: RoutingMode,
    /// Fix every subset's weights to `1/|I|` instead of fitting them.
    pub unit_lambda: bool,
    pub seed: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            fixed_point: FixedPointConfig::default(),
            bisection: BisectionConfig::default(),
            uncertainty: UncertaintySpec::default(),
            uncertainty_features: None,
            pi_floor: 0.01,
            routing: RoutingMode::Optimal,
            unit_lambda: false,
            seed: 0,
        }
    }
}

impl CalibrationOptions {
    pub fn validate(&self) -> Result<()> {
        self.fixed_point.validate()?;
        self.bisection.validate()?;
        if !(self.pi_floor > 0.0 && self.pi_floor <= 1.0) {
            return Err(Error::invalid("pi_floor must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Budget-independent starting point of calibration: initial weights and
/// uncertainty models for each subset. Reusable across budgets for the same
/// burn-in sample, family and options.
#[derive(Debug, Clone)]
pub struct InitialFit {
    pub weights: Vec<Vec<f64>>,
    pub models: Vec<UncertaintyModel>,
    pub params: Vec<Option<BoostParams>>,
    pub ridge_used: bool,
}

struct BurnIn {
    labels: Vec<f64>,
    designs: Vec<Vec<f64>>,
    features: Vec<f64>,
    d: usize,
}

impl BurnIn {
    fn new(burn_in: &Dataset, family: &SubsetFamily, opts: &CalibrationOptions) -> Result<Self> {
        if burn_in.is_empty() {
            return Err(Error::invalid("burn-in sample is empty"));
        }
        burn_in.check_family(family)?;
        let labels = burn_in.require_labels()?;
        let designs = family.subsets().iter().map(|s| burn_in.subset_matrix(s)).collect::<Result<_>>()?;
        let (features, d) = burn_in.feature_matrix(opts.uncertainty_features.as_deref())?;
        if d == 0 && !matches!(opts.uncertainty, UncertaintySpec::Constant(_) | UncertaintySpec::Oracle) {
            return Err(Error::invalid("boosted uncertainty models need at least one feature column"));
        }
        Ok(BurnIn { labels, designs, features, d })
    }

    fn abs_residuals(&self, j: usize, q: usize, lambda: &[f64]) -> Vec<f64> {
        self.designs[j]
            .chunks_exact(q)
            .zip(&self.labels)
            .map(|(f, y)| (y - f.iter().zip(lambda).map(|(a, b)| a * b).sum::<f64>()).abs())
            .collect()
    }
}

fn model_seed(root: u64, subset: &Subset) -> u64 {
    rng::derive_seed(root, &[rng::domain::CALIBRATE, rng::name_tag(&subset.to_string())])
}

/// Initial weights (centered OLS or unit) and uncertainty models.
pub fn initial_fit(burn_in: &Dataset, family: &SubsetFamily, opts: &CalibrationOptions) -> Result<InitialFit> {
    opts.validate()?;
    let data = BurnIn::new(burn_in, family, opts)?;
    let mut out = InitialFit { weights: Vec::new(), models: Vec::new(), params: Vec::new(), ridge_used: false };
    for (j, subset) in family.subsets().iter().enumerate() {
        let q = subset.len();
        let lambda = if opts.unit_lambda {
            vec![1.0 / q as f64; q]
        } else {
            with_ridge_fallback(opts.fixed_point.ridge, q, "OLS initialization", &mut out.ridge_used, |ridge| {
                ols_init(&data.designs[j], q, &data.labels, ridge)
            })?
        };
        let resid = data.abs_residuals(j, q, &lambda);
        let (model, params) = uncertainty::fit_with_spec(
            &opts.uncertainty,
            &data.features,
            data.d,
            &resid,
            &lambda,
            model_seed(opts.seed, subset),
            None,
        )?;
        out.weights.push(lambda);
        out.models.push(model);
        out.params.push(params);
    }
    Ok(out)
}

fn rel_change(new: f64, old: f64) -> f64 {
    if new == old {
        0.0
    } else {
        (new - old).abs() / old.abs().max(f64::MIN_POSITIVE)
    }
}

fn max_rel_change(new: &[f64], old: &[f64]) -> f64 {
    let scale = old.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = new.iter().zip(old).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(1e-12)
    }
}

/// Relative tolerance under which two calibration states count as equal
/// for cycle detection; far below the convergence tolerances, so only
/// floating-point noise separates states it matches.
const CYCLE_TOL: f64 = 1e-9;

fn same_state(a: &(f64, Vec<Vec<f64>>), b: &(f64, Vec<Vec<f64>>)) -> bool {
    rel_change(a.0, b.0) <= CYCLE_TOL && a.1.iter().zip(&b.1).all(|(x, y)| max_rel_change(x, y) <= CYCLE_TOL)
}

/// Alternates the multiplier, weighted least squares weights and
/// uncertainty refits until both the multiplier and every weight vector
/// settle, or `max_outer_iters` is reached.
///
/// After the loop the multiplier is solved once more against the final
/// uncertainty models, so the returned multiplier meets the budget identity
/// for the models it is returned with.
pub fn calibrate(
    burn_in: &Dataset,
    family: &SubsetFamily,
    costs: &CostModel,
    n: usize,
    opts: &CalibrationOptions,
) -> Result<CalibrationResult> {
    let init = initial_fit(burn_in, family, opts)?;
    calibrate_from(burn_in, family, costs, n, opts, &init)
}

/// [`calibrate`] starting from a precomputed [`InitialFit`].
pub fn calibrate_from(
    burn_in: &Dataset,
    family: &SubsetFamily,
    costs: &CostModel,
    n: usize,
    opts: &CalibrationOptions,
    init: &InitialFit,
) -> Result<CalibrationResult> {
    opts.validate()?;
    if n == 0 {
        return Err(Error::invalid("deployment size must be positive"));
    }
    if init.weights.len() != family.len() || init.models.len() != family.len() {
        return Err(Error::DimensionMismatch { expected: family.len(), got: init.weights.len() });
    }
    let data = BurnIn::new(burn_in, family, opts)?;
    let subset_costs = costs.family_costs(family)?;
    let b = costs.per_instance_budget();
    let c_label = costs.label_cost();
    let features = opts.uncertainty_features.as_deref();
    let fp = &opts.fixed_point;

    let floor = match opts.routing {
        RoutingMode::Optimal => subset_costs.iter().copied().fold(f64::INFINITY, f64::min),
        RoutingMode::Uniform => subset_costs.iter().sum::<f64>() / subset_costs.len() as f64,
    } + opts.pi_floor * c_label;
    if b <= floor {
        return Err(Error::InfeasibleBudget { budget: b, min_spend: floor });
    }

    let mut weights = init.weights.clone();
    let mut models = init.models.clone();
    let mut params = init.params.clone();
    let mut diag = CalibrationDiagnostics { ridge_used: init.ridge_used, ..Default::default() };

    let solve = |models: &[UncertaintyModel]| -> Result<(MuSolution, Vec<f64>)> {
        let refs: Vec<&UncertaintyModel> = models.iter().collect();
        let table = uncertainty_table(burn_in, family, &refs, features)?;
        let spend = SpendModel::new(&table, subset_costs.clone(), c_label, n, opts.pi_floor, opts.routing)?;
        Ok((solve_mu(&spend, b, &opts.bisection)?, table))
    };

    let mut prev_mu: Option<f64> = None;
    // (multiplier, weights) after the last two iterations
    let mut states: Vec<(f64, Vec<Vec<f64>>)> = Vec::with_capacity(3);
    for t in 1..=fp.max_outer_iters {
        diag.outer_iterations = t;
        let (sol, table) = solve(&models)?;
        diag.mu_history.push(sol.mu);
        let k = family.len();

        let mut lambda_change = 0.0f64;
        for (j, subset) in family.subsets().iter().enumerate() {
            let q = subset.len();
            if !opts.unit_lambda {
                let w: Vec<f64> = (0..data.labels.len())
                    .map(|i| {
                        let u = table[i * k + j];
                        let pi = clip_pi(pi_star_unchecked(u * u, n, sol.mu, c_label), opts.pi_floor);
                        if pi >= 1.0 {
                            0.0
                        } else {
                            1.0 / pi - 1.0
                        }
                    })
                    .collect();
                if w.iter().all(|&v| v == 0.0) {
                    warn!("subset {subset}: every burn-in row is labeled with certainty; keeping previous weights");
                } else {
                    let new = with_ridge_fallback(fp.ridge, q, "weighted least squares", &mut diag.ridge_used, |ridge| {
                        solve_lambda_wls(&data.designs[j], q, &data.labels, &w, ridge)
                    })?;
                    lambda_change = lambda_change.max(max_rel_change(&new, &weights[j]));
                    weights[j] = new;
                }
            }
            let resid = data.abs_residuals(j, q, &weights[j]);
            let (model, p) = uncertainty::fit_with_spec(
                &opts.uncertainty,
                &data.features,
                data.d,
                &resid,
                &weights[j],
                model_seed(opts.seed, subset),
                params[j],
            )?;
            models[j] = model;
            params[j] = p;
        }
        diag.max_lambda_change.push(lambda_change);

        let mu_change = prev_mu.map_or(f64::INFINITY, |p| rel_change(sol.mu, p));
        prev_mu = Some(sol.mu);
        if mu_change < fp.mu_rel_tol && lambda_change < fp.lambda_rel_tol {
            diag.converged = true;
            break;
        }
        let state = (sol.mu, weights.clone());
        if states.len() == 2 && same_state(&states[0], &state) {
            diag.cycle_detected = true;
            break;
        }
        states.push(state);
        if states.len() > 2 {
            states.remove(0);
        }
    }
    if diag.cycle_detected {
        debug!("calibration entered a two-cycle after {} outer iterations", diag.outer_iterations);
    } else if !diag.converged {
        let h = &diag.mu_history;
        debug!(
            "calibration stopped after {} outer iterations without converging (last mu change {:.2e}, weight change {:.2e})",
            fp.max_outer_iters,
            if h.len() > 1 { rel_change(h[h.len() - 1], h[h.len() - 2]) } else { f64::NAN },
            diag.max_lambda_change.last().copied().unwrap_or(0.0)
        );
    }

    let (sol, _) = solve(&models)?;
    diag.mu_history.push(sol.mu);
    diag.budget_binding = sol.binding;
    diag.spend_at_multiplier = sol.spend;
    diag.resolved_spend = sol.resolved_spend();
    diag.tie_fraction = sol.tie_fraction;

    let fits = family
        .subsets()
        .iter()
        .zip(subset_costs)
        .zip(weights)
        .zip(models)
        .map(|(((subset, cost), weights), model)| SubsetFit { subset: subset.clone(), cost, weights, model })
        .collect();
    Ok(CalibrationResult {
        family: family.clone(),
        fits,
        multiplier: sol.mu,
        costs: costs.clone(),
        deployment_n: n,
        pi_floor: opts.pi_floor,
        routing: opts.routing,
        uncertainty_features: opts.uncertainty_features.clone(),
        diagnostics: diag,
    })
}
