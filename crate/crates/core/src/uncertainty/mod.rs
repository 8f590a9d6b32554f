//! Residual-magnitude surrogates `u_I(x)`.
//!
//! A surrogate predicts `|Y - lambda' f_I(X)|` for one subset. The boosted
//! variant learns it from covariates; the constant and oracle variants exist
//! for ablations. Oracle models read the realized label of the instance and
//! are only meaningful in simulations where every label is known.

pub mod boost;
pub mod cv;
pub mod tree;

pub use boost::{BoostParams, BoostedTrees};
pub use cv::{select_params, CvGrid, CvReport};
pub use tree::{RegressionTree, TreeParams};

use crate::error::{Error, Result};

/// What a surrogate may look at for one instance.
#[derive(Debug, Clone, Copy)]
pub struct InstanceView<'a> {
    /// Uncertainty feature panel for the instance.
    pub features: &'a [f64],
    /// Predictions of the subset members, in subset order.
    pub predictions: &'a [f64],
    pub label: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UncertaintyModel {
    Boosted { model: BoostedTrees, feature_dim: usize },
    Constant { value: f64, feature_dim: usize },
    /// Exact realized residual `|y - weights' f|`.
    Oracle { weights: Vec<f64>, feature_dim: usize },
}

impl UncertaintyModel {
    pub fn constant(value: f64, feature_dim: usize) -> Result<Self> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::invalid("constant uncertainty must be finite and >= 0"));
        }
        Ok(UncertaintyModel::Constant { value, feature_dim })
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            UncertaintyModel::Boosted { feature_dim, .. }
            | UncertaintyModel::Constant { feature_dim, .. }
            | UncertaintyModel::Oracle { feature_dim, .. } => *feature_dim,
        }
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self, UncertaintyModel::Oracle { .. })
    }

    /// Predicted residual magnitude, clamped at zero.
    pub fn predict(&self, view: &InstanceView<'_>) -> Result<f64> {
        if view.features.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch { expected: self.feature_dim(), got: view.features.len() });
        }
        let u = match self {
            UncertaintyModel::Boosted { model, .. } => model.predict(view.features),
            UncertaintyModel::Constant { value, .. } => *value,
            UncertaintyModel::Oracle { weights, .. } => {
                if view.predictions.len() != weights.len() {
                    return Err(Error::DimensionMismatch { expected: weights.len(), got: view.predictions.len() });
                }
                let y = view
                    .label
                    .ok_or_else(|| Error::invalid("oracle uncertainty needs the instance label"))?;
                let combined: f64 = weights.iter().zip(view.predictions).map(|(w, f)| w * f).sum();
                (y - combined).abs()
            }
        };
        Ok(u.max(0.0))
    }
}

/// How to build a surrogate from burn-in residuals.
#[derive(Debug, Clone, PartialEq)]
pub enum UncertaintySpec {
    /// Grid search on the first fit; refits reuse the selected
    /// hyperparameters unless `reselect_each_refit` is set.
    CrossValidated { grid: CvGrid, reselect_each_refit: bool },
    Fixed(BoostParams),
    Constant(f64),
    Oracle,
}

impl Default for UncertaintySpec {
    fn default() -> Self {
        UncertaintySpec::CrossValidated { grid: CvGrid::default(), reselect_each_refit: false }
    }
}

/// Cross-validates over `grid`, then retrains the winner on all rows.
pub fn fit_uncertainty(features: &[f64], d: usize, abs_residuals: &[f64], grid: &CvGrid, seed: u64) -> Result<UncertaintyModel> {
    check_residuals(abs_residuals)?;
    let report = select_params(features, d, abs_residuals, grid, seed)?;
    let model = BoostedTrees::fit(features, d, abs_residuals, report.selected)?;
    Ok(UncertaintyModel::Boosted { model, feature_dim: d })
}

/// Fits a surrogate under `spec`.
///
/// `previous` carries hyperparameters chosen by an earlier cross-validated
/// fit of the same subset; the selected parameters are returned so the
/// caller can pass them back on the next refit. `weights` is only used by
/// the oracle variant.
pub fn fit_with_spec(
    spec: &UncertaintySpec,
    features: &[f64],
    d: usize,
    abs_residuals: &[f64],
    weights: &[f64],
    seed: u64,
    previous: Option<BoostParams>,
) -> Result<(UncertaintyModel, Option<BoostParams>)> {
    match spec {
        UncertaintySpec::CrossValidated { grid, reselect_each_refit } => {
            check_residuals(abs_residuals)?;
            let params = match previous {
                Some(p) if !reselect_each_refit => p,
                _ => select_params(features, d, abs_residuals, grid, seed)?.selected,
            };
            let model = BoostedTrees::fit(features, d, abs_residuals, params)?;
            Ok((UncertaintyModel::Boosted { model, feature_dim: d }, Some(params)))
        }
        UncertaintySpec::Fixed(params) => {
            check_residuals(abs_residuals)?;
            let model = BoostedTrees::fit(features, d, abs_residuals, *params)?;
            Ok((UncertaintyModel::Boosted { model, feature_dim: d }, Some(*params)))
        }
        UncertaintySpec::Constant(value) => Ok((UncertaintyModel::constant(*value, d)?, None)),
        UncertaintySpec::Oracle => Ok((UncertaintyModel::Oracle { weights: weights.to_vec(), feature_dim: d }, None)),
    }
}

fn check_residuals(r: &[f64]) -> Result<()> {
    if r.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::invalid("absolute residuals must be finite and >= 0"));
    }
    Ok(())
}
