//! Deployment: routing, Bernoulli labeling, the estimator and its interval.

use log::warn;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::optimizer::{self, CalibrationOptions};
use crate::rng;
use crate::types::{CalibrationResult, CostModel, Dataset, IntervalEstimate, RoutingMode, SamplingDecision, Subset, SubsetFamily};
use crate::uncertainty::InstanceView;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpendBreakdown {
    /// Costs of the routed subsets' predictor queries.
    pub query: f64,
    /// `c_label` times the number of labels collected.
    pub label: f64,
}

impl SpendBreakdown {
    pub fn total(&self) -> f64 {
        self.query + self.label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentOutcome {
    pub estimate: IntervalEstimate,
    pub decisions: Vec<SamplingDecision>,
    pub labels_collected: usize,
    pub spend_breakdown: SpendBreakdown,
    /// Per-instance average of `c_I + c_label pi_hat` over the decisions.
    pub expected_spend: f64,
    pub increments: Vec<f64>,
}

/// Mean of the increments.
pub fn point_estimate(increments: &[f64]) -> Result<f64> {
    if increments.is_empty() {
        return Err(Error::invalid("point estimate needs at least one increment"));
    }
    Ok(increments.iter().sum::<f64>() / increments.len() as f64)
}

/// `(1/n) sum (increment - theta_hat)^2`.
pub fn variance_estimate(increments: &[f64], theta_hat: f64) -> f64 {
    let n = increments.len();
    if n < 2 {
        warn!("variance estimate from {n} increment(s) is degenerate");
        return 0.0;
    }
    increments.iter().map(|d| (d - theta_hat).powi(2)).sum::<f64>() / n as f64
}

/// Standard normal quantile `z_{1 - alpha/2}`.
pub fn z_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

/// Normal interval `theta_hat +/- z sqrt(sigma_sq_hat / n)`.
pub fn confidence_interval(theta_hat: f64, sigma_sq_hat: f64, n: usize, alpha: f64) -> Result<IntervalEstimate> {
    let z = z_quantile(alpha)?;
    if n == 0 {
        return Err(Error::invalid("interval needs n >= 1"));
    }
    if !(sigma_sq_hat >= 0.0) {
        return Err(Error::invalid("variance estimate must be >= 0"));
    }
    let half = z * sigma_sq_hat.sqrt() / (n as f64).sqrt();
    Ok(IntervalEstimate {
        theta_hat,
        sigma_sq_hat,
        alpha,
        lower: theta_hat - half,
        upper: theta_hat + half,
        n,
        realized_spend: 0.0,
    })
}

/// Per-instance increment `c + (y - c) xi / pi`, with `c` the combined
/// prediction; the label is only touched when `xi` is set.
#[inline]
pub fn increment(combined: f64, label: Option<f64>, pi_hat: f64) -> f64 {
    match label {
        Some(y) => combined + (y - combined) / pi_hat,
        None => combined,
    }
}

/// Runs deployment over `stream`.
///
/// Labels are requested from `label_source` only for instances whose
/// Bernoulli draw selects them. Label and routing draws come from
/// per-instance sub-streams of `seed`, so they do not depend on the order in
/// which instances are processed. Oracle uncertainty models read the label
/// stored in `stream` for routing; they are meant for simulations only.
pub fn deploy<F>(
    stream: &Dataset,
    calib: &CalibrationResult,
    alpha: f64,
    seed: u64,
    mut label_source: F,
) -> Result<DeploymentOutcome>
where
    F: FnMut(usize) -> std::result::Result<f64, String>,
{
    z_quantile(alpha)?;
    let n = stream.len();
    if n == 0 {
        return Err(Error::invalid("deployment stream is empty"));
    }
    if n != calib.deployment_n {
        warn!(
            "deployment stream has {n} instances but calibration assumed {}; using {n}",
            calib.deployment_n
        );
    }
    let family = &calib.family;
    let k = family.len();
    stream.check_family(family)?;
    let designs: Vec<Vec<f64>> = family.subsets().iter().map(|s| stream.subset_matrix(s)).collect::<Result<_>>()?;
    let (features, d) = stream.feature_matrix(calib.uncertainty_features.as_deref())?;
    let subset_costs: Vec<f64> = calib.fits.iter().map(|f| f.cost).collect();
    let order = optimizer::tie_order(&subset_costs);
    let needs_label = calib.fits.iter().any(|f| f.model.is_oracle());
    let c_label = calib.costs.label_cost();
    let mu = calib.multiplier;
    let label_key = rng::derive_seed(seed, &[rng::domain::LABEL_DRAW]);
    let coin_key = rng::derive_seed(seed, &[rng::domain::ROUTING_COIN]);

    let mut decisions = Vec::with_capacity(n);
    let mut increments = Vec::with_capacity(n);
    let mut spend = SpendBreakdown::default();
    let mut expected = 0.0;
    let mut labels_collected = 0;
    let mut u = vec![0.0; k];

    for i in 0..n {
        let x = &features[i * d..(i + 1) * d];
        let stored = if needs_label { stream.label(i) } else { None };
        let uncertainty = |j: usize| -> Result<f64> {
            let q = family.subsets()[j].len();
            let view = InstanceView { features: x, predictions: &designs[j][i * q..(i + 1) * q], label: stored };
            calib.fits[j].model.predict(&view)
        };
        let choice = match calib.routing {
            RoutingMode::Optimal => {
                for (j, slot) in u.iter_mut().enumerate() {
                    *slot = uncertainty(j)?;
                }
                let c = optimizer::route_ordered(&u, &subset_costs, &order, c_label, mu, n, calib.pi_floor);
                (c.subset, c.pi_raw, c.pi_hat)
            }
            RoutingMode::Uniform => {
                let coin = rng::instance_uniform(coin_key, i as u64);
                let j = ((coin * k as f64) as usize).min(k - 1);
                let uj = uncertainty(j)?;
                let pi_raw = optimizer::pi_star_unchecked(uj * uj, n, mu, c_label);
                (j, pi_raw, optimizer::clip_pi(pi_raw, calib.pi_floor))
            }
        };
        let (j, pi_raw, pi_hat) = choice;
        let q = family.subsets()[j].len();
        let combined: f64 = calib.fits[j]
            .weights
            .iter()
            .zip(&designs[j][i * q..(i + 1) * q])
            .map(|(w, f)| w * f)
            .sum();
        let labeled = rng::instance_uniform(label_key, i as u64) < pi_hat;
        let label = if labeled {
            let y = label_source(i).map_err(|message| Error::LabelSource { index: i, labels_collected, message })?;
            if !y.is_finite() {
                return Err(Error::LabelSource {
                    index: i,
                    labels_collected,
                    message: format!("non-finite label {y}"),
                });
            }
            labels_collected += 1;
            Some(y)
        } else {
            None
        };
        spend.query += subset_costs[j];
        expected += subset_costs[j] + c_label * pi_hat;
        increments.push(increment(combined, label, pi_hat));
        decisions.push(SamplingDecision { subset: j, pi_raw, pi_hat, labeled, combined_prediction: combined });
    }
    spend.label = c_label * labels_collected as f64;

    let theta_hat = point_estimate(&increments)?;
    let sigma_sq = variance_estimate(&increments, theta_hat);
    let mut estimate = confidence_interval(theta_hat, sigma_sq, n, alpha)?;
    estimate.realized_spend = spend.total();
    Ok(DeploymentOutcome {
        estimate,
        decisions,
        labels_collected,
        spend_breakdown: spend,
        expected_spend: expected / n as f64,
        increments,
    })
}

/// [`deploy`] with labels read from the stream itself.
pub fn deploy_with_stored_labels(
    stream: &Dataset,
    calib: &CalibrationResult,
    alpha: f64,
    seed: u64,
) -> Result<DeploymentOutcome> {
    deploy(stream, calib, alpha, seed, |i| {
        stream.label(i).ok_or_else(|| format!("row {i} has no label"))
    })
}

/// Single-predictor baseline: calibration with the family `{{predictor}}`.
pub fn asi_config(
    predictor: &str,
    burn_in: &Dataset,
    costs: &CostModel,
    n: usize,
    opts: &CalibrationOptions,
) -> Result<CalibrationResult> {
    burn_in.prediction(predictor)?;
    let family = SubsetFamily::new(vec![Subset::singleton(predictor)])?;
    optimizer::calibrate(burn_in, &family, costs, n, opts)
}
