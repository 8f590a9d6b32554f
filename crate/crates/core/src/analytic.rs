//! Closed-form variances for the two-population model: a fraction `p` of
//! easy instances where both predictors have residual variance `r_e`, and
//! hard instances where predictor 1 has `r_h` and predictor 2 has
//! `r_h (1 - delta)`.

use crate::error::{Error, Result};
use crate::types::TwoPopParams;

fn check_predictor(j: usize) -> Result<()> {
    if j == 1 || j == 2 {
        Ok(())
    } else {
        Err(Error::invalid(format!("predictor index must be 1 or 2, got {j}")))
    }
}

/// `S_j = p sqrt(r_e) + (1 - p) sqrt(r_{j,h})`.
pub fn avg_root_residual(params: &TwoPopParams, j: usize) -> Result<f64> {
    check_predictor(j)?;
    Ok(params.p * params.r_e.sqrt() + (1.0 - params.p) * params.hard_residual(j).sqrt())
}

/// `T_j = p r_e + (1 - p) r_{j,h}`.
pub fn avg_residual(params: &TwoPopParams, j: usize) -> Result<f64> {
    check_predictor(j)?;
    Ok(params.p * params.r_e + (1.0 - params.p) * params.hard_residual(j))
}

/// Average model cost when easy instances go to predictor 1 and hard ones
/// to predictor 2.
pub fn c_route(params: &TwoPopParams) -> f64 {
    params.p * params.c1 + (1.0 - params.p) * params.c2
}

fn variance(params: &TwoPopParams, s: f64, t: f64, cost: f64, include_var_y: bool) -> Result<f64> {
    if params.b <= cost {
        return Err(Error::InfeasibleBudget { budget: params.b, min_spend: cost });
    }
    let var_y = if include_var_y { params.var_y } else { 0.0 };
    Ok((var_y + s * s * params.c_label / (params.b - cost) - t) / params.n as f64)
}

/// Variance of the single-predictor estimator using predictor `j`.
/// Without `include_var_y` only the budget-dependent bracket is kept, which
/// may be negative.
pub fn var_asi(params: &TwoPopParams, j: usize, include_var_y: bool) -> Result<f64> {
    params.validate()?;
    let cost = if j == 2 { params.c2 } else { params.c1 };
    variance(params, avg_root_residual(params, j)?, avg_residual(params, j)?, cost, include_var_y)
}

/// Variance of the routed estimator, whose residual profile matches
/// predictor 2 at the routing cost [`c_route`].
pub fn var_ampi(params: &TwoPopParams, include_var_y: bool) -> Result<f64> {
    params.validate()?;
    variance(params, avg_root_residual(params, 2)?, avg_residual(params, 2)?, c_route(params), include_var_y)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// Variance ratio against the expensive-predictor baseline,
/// `1 + p phi / (1 - phi)` with `phi = c2 / b`.
pub fn ratio_r2(p: f64, phi: f64) -> Result<f64> {
    check_unit("p", p)?;
    check_unit("phi", phi)?;
    Ok(1.0 + p * phi / (1.0 - phi))
}

/// Variance ratio against the cheap-predictor baseline,
/// `(1 - (1 - p) phi) / (1 - delta)`.
pub fn ratio_r1(p: f64, phi: f64, delta: f64) -> Result<f64> {
    check_unit("p", p)?;
    check_unit("phi", phi)?;
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid(format!("delta must lie in [0, 1), got {delta}")));
    }
    Ok((1.0 - (1.0 - p) * phi) / (1.0 - delta))
}

/// Interval width reduction in percent implied by a variance ratio.
pub fn width_reduction_pct(ratio: f64) -> Result<f64> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::invalid(format!("variance ratio must be > 0, got {ratio}")));
    }
    Ok(100.0 * (1.0 - 1.0 / ratio.sqrt()))
}

/// Which baseline a heatmap cell compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapCase {
    /// Expensive predictor; varies `p` and `phi`.
    Expensive,
    /// Cheap predictor at fixed `p`; varies `delta` and `phi`.
    Cheap,
}

impl HeatmapCase {
    pub fn label(self) -> &'static str {
        match self {
            HeatmapCase::Expensive => "expensive",
            HeatmapCase::Cheap => "cheap",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatmapCell {
    pub case: HeatmapCase,
    pub p: f64,
    pub phi: f64,
    /// `None` for [`HeatmapCase::Expensive`], where it does not enter.
    pub delta: Option<f64>,
    pub ratio: f64,
    pub reduction_pct: f64,
}

/// Both heatmaps: every `(p, phi)` pair against the expensive baseline and
/// every `(delta, phi)` pair at `p_cheap` against the cheap baseline.
pub fn heatmap(p_values: &[f64], phi_values: &[f64], delta_values: &[f64], p_cheap: f64) -> Result<Vec<HeatmapCell>> {
    let mut out = Vec::with_capacity(phi_values.len() * (p_values.len() + delta_values.len()));
    for &p in p_values {
        for &phi in phi_values {
            let ratio = ratio_r2(p, phi)?;
            out.push(HeatmapCell {
                case: HeatmapCase::Expensive,
                p,
                phi,
                delta: None,
                ratio,
                reduction_pct: width_reduction_pct(ratio)?,
            });
        }
    }
    for &delta in delta_values {
        for &phi in phi_values {
            let ratio = ratio_r1(p_cheap, phi, delta)?;
            out.push(HeatmapCell {
                case: HeatmapCase::Cheap,
                p: p_cheap,
                phi,
                delta: Some(delta),
                ratio,
                reduction_pct: width_reduction_pct(ratio)?,
            });
        }
    }
    Ok(out)
}
