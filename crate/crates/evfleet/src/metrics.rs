//! Socio-technical measurements over optimization outputs.
//!
//! Standard deviations are population deviations throughout: the demand
//! curve and the per-agent discomfort vector are complete populations, and
//! fairness `1 - sigma(D)` stays within `[0, 1]` only with the population
//! form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::PriceSignal;

/// Headline measurements of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub sigma_kw: f64,
    pub cost_usd: f64,
    pub peak_kw: f64,
    /// Mean per-agent discomfort.
    pub mean_discomfort: f64,
    /// `1 - sigma` of the per-agent discomforts.
    pub fairness: f64,
    pub relative_sigma_reduction: f64,
    pub relative_cost_reduction: f64,
}

/// Deviation, cost and peak of a demand curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveMetrics {
    pub sigma_kw: f64,
    pub cost_usd: f64,
    pub peak_kw: f64,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("input must not be empty")]
    EmptyInput,
    #[error("horizon mismatch: curve has {curve} timesteps, price {price}")]
    HorizonMismatch { curve: usize, price: usize },
    #[error("control value {0} must be positive")]
    NonPositiveControl(f64),
    #[error("plan index {index} outside 1..={v}")]
    BadPlanIndex { index: usize, v: usize },
}

/// Population standard deviation; zero for a single element.
pub fn population_std(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    variance.sqrt()
}

/// Mean per-agent discomfort.
pub fn system_discomfort(discomforts: &[f64]) -> Result<f64, MetricsError> {
    if discomforts.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(discomforts.iter().sum::<f64>() / discomforts.len() as f64)
}

/// `1 - sigma(D_1..D_n)`; 1 when every agent carries the same discomfort.
pub fn fairness(discomforts: &[f64]) -> Result<f64, MetricsError> {
    if discomforts.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(1.0 - population_std(discomforts))
}

/// Deviation, price-weighted cost and peak of a demand curve. Cost applies
/// the timestep duration so the reported value is USD for the horizon.
pub fn curve_metrics(
    curve: &[f64],
    price: &PriceSignal,
    resolution_min: u32,
) -> Result<CurveMetrics, MetricsError> {
    if curve.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if price.horizon() != curve.len() {
        return Err(MetricsError::HorizonMismatch {
            curve: curve.len(),
            price: price.horizon(),
        });
    }
    let hours_per_step = f64::from(resolution_min) / 60.0;
    let cost = curve
        .iter()
        .zip(price.values())
        .map(|(d, p)| d * p * hours_per_step)
        .sum();
    let peak = curve.iter().copied().fold(0.0f64, f64::max);
    Ok(CurveMetrics {
        sigma_kw: population_std(curve),
        cost_usd: cost,
        peak_kw: peak,
    })
}

/// `(control - run) / control`.
pub fn relative_reduction(run: f64, control: f64) -> Result<f64, MetricsError> {
    if !(control.is_finite() && control > 0.0) {
        return Err(MetricsError::NonPositiveControl(control));
    }
    Ok((control - run) / control)
}

/// Empirical plan-selection frequencies averaged over repetitions.
///
/// `selections_per_rep[r]` holds the 1-based plan indices chosen in
/// repetition `r`; the result has one probability per plan index and sums
/// to 1.
pub fn plan_selection_distribution(
    selections_per_rep: &[Vec<usize>],
    v: usize,
) -> Result<Vec<f64>, MetricsError> {
    if v == 0 || selections_per_rep.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut totals = vec![0.0; v];
    let mut reps = 0usize;
    for selections in selections_per_rep {
        if selections.is_empty() {
            return Err(MetricsError::EmptyInput);
        }
        let mut counts = vec![0usize; v];
        for &index in selections {
            if index == 0 || index > v {
                return Err(MetricsError::BadPlanIndex { index, v });
            }
            counts[index - 1] += 1;
        }
        for (total, count) in totals.iter_mut().zip(&counts) {
            *total += *count as f64 / selections.len() as f64;
        }
        reps += 1;
    }
    Ok(totals.into_iter().map(|t| t / reps as f64).collect())
}
