//! EV-adoption diffusion modeling and peak-power projection.
//!
//! Cumulative adoption follows a logistic curve
//! `S(t) = C / (1 + exp(-r * (t - t_mid)))` fitted to observed sales and
//! policy anchor points by Levenberg-Marquardt least squares. Fleet peak
//! power scales linearly with the adopted stock through the per-vehicle
//! peak contribution of a charging paradigm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Logistic diffusion parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdoptionCurve {
    /// Market cap, vehicles.
    pub cap: f64,
    /// Adoption rapidity, per year.
    pub rate_per_year: f64,
    /// Inflection year.
    pub midpoint_year: f64,
}

/// Per-vehicle peak-power contribution of one charging paradigm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParadigmContribution {
    /// Label such as `control` or `min-dev-100-daily`.
    pub paradigm: String,
    /// kW per vehicle.
    pub per_ev_peak_kw: f64,
}

impl ParadigmContribution {
    pub fn new(paradigm: impl Into<String>, per_ev_peak_kw: f64) -> Result<Self, ForecastError> {
        if !(per_ev_peak_kw.is_finite() && per_ev_peak_kw > 0.0) {
            return Err(ForecastError::NonPositiveContribution(per_ev_peak_kw));
        }
        Ok(Self {
            paradigm: paradigm.into(),
            per_ev_peak_kw,
        })
    }

    /// Fleet peak divided by fleet size.
    pub fn from_fleet(
        paradigm: impl Into<String>,
        peak_kw: f64,
        fleet_size: usize,
    ) -> Result<Self, ForecastError> {
        if fleet_size == 0 {
            return Err(ForecastError::NonPositiveContribution(0.0));
        }
        Self::new(paradigm, peak_kw / fleet_size as f64)
    }
}

/// Outcome of [`fit_adoption`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub curve: AdoptionCurve,
    /// Root-mean-square residual over the observations.
    pub residual_rms: f64,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("need at least 3 observations, got {0}")]
    UnderDetermined(usize),
    #[error("observations must span more than one year")]
    DegenerateSpan,
    #[error("observation {index} is not finite and positive (year {year}, value {value})")]
    BadObservation { index: usize, year: f64, value: f64 },
    #[error("fit did not converge after {iterations} iterations (residual rms {residual_rms:.3e}, last step {last_step:.3e})")]
    NonConvergence {
        iterations: usize,
        residual_rms: f64,
        last_step: f64,
    },
    #[error("per-vehicle contribution {0} must be positive")]
    NonPositiveContribution(f64),
}

/// Cumulative adoption at `year`: `C / (1 + exp(-r * (year - t_mid)))`.
pub fn logistic_sales(curve: &AdoptionCurve, year: f64) -> f64 {
    curve.cap / (1.0 + (-curve.rate_per_year * (year - curve.midpoint_year)).exp())
}

/// Projected fleet peak power in MW at `year`.
pub fn project_peak_power(
    curve: &AdoptionCurve,
    contribution: &ParadigmContribution,
    year: f64,
) -> f64 {
    contribution.per_ev_peak_kw * logistic_sales(curve, year) / 1000.0
}

/// Bundled California cumulative EV sales (2011-2015) with the 2020 and
/// 2025 zero-emission-vehicle policy anchors, vehicles.
pub fn default_sales_observations() -> Vec<(f64, f64)> {
    vec![
        (2011.0, 8_000.0),
        (2012.0, 16_000.0),
        (2013.0, 30_000.0),
        (2014.0, 55_000.0),
        (2015.0, 98_000.0),
        (2020.0, 1_000_000.0),
        (2025.0, 1_500_000.0),
    ]
}

const MAX_ITERATIONS: usize = 200;
const STEP_TOLERANCE: f64 = 1e-12;
const COST_TOLERANCE: f64 = 1e-15;

/// Least-squares fit of the logistic adoption curve.
///
/// Initialisation: cap at 1.1x the largest observation, midpoint at the
/// first half-maximum crossing, rate at `4 / span`. The optimisation is
/// plain Levenberg-Marquardt with multiplicative damping and is
/// deterministic for a given observation list.
pub fn fit_adoption(observations: &[(f64, f64)]) -> Result<FitReport, ForecastError> {
    if observations.len() < 3 {
        return Err(ForecastError::UnderDetermined(observations.len()));
    }
    for (index, &(year, value)) in observations.iter().enumerate() {
        if !(year.is_finite() && value.is_finite() && value > 0.0) {
            return Err(ForecastError::BadObservation { index, year, value });
        }
    }
    let mut sorted = observations.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let span = sorted.last().unwrap().0 - sorted[0].0;
    if span <= 0.0 {
        return Err(ForecastError::DegenerateSpan);
    }

    // Years are shifted by their mean for conditioning; the midpoint is
    // shifted back on exit.
    let t_shift = sorted.iter().map(|o| o.0).sum::<f64>() / sorted.len() as f64;
    let max_value = sorted.iter().map(|o| o.1).fold(f64::MIN, f64::max);
    let half_cross = sorted
        .iter()
        .find(|o| o.1 >= max_value / 2.0)
        .map(|o| o.0)
        .unwrap_or(sorted[0].0);

    let mut cap = 1.1 * max_value;
    let mut rate = 4.0 / span;
    let mut mid = half_cross - t_shift;

    let residuals = |cap: f64, rate: f64, mid: f64| -> Vec<f64> {
        sorted
            .iter()
            .map(|&(year, value)| {
                let t = year - t_shift;
                cap / (1.0 + (-rate * (t - mid)).exp()) - value
            })
            .collect()
    };
    let cost_of = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();

    let mut cost = cost_of(&residuals(cap, rate, mid));
    let mut lambda = 1e-3;
    let mut last_step = f64::INFINITY;

    for iteration in 0..MAX_ITERATIONS {
        // Jacobian of the residuals at the current parameters.
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for &(year, value) in &sorted {
            let t = year - t_shift;
            let u = (-rate * (t - mid)).exp();
            let denom = 1.0 + u;
            let s = cap / denom;
            let common = cap * u / (denom * denom);
            let row = [1.0 / denom, common * (t - mid), -common * rate];
            let r = s - value;
            for i in 0..3 {
                for j in 0..3 {
                    jtj[i][j] += row[i] * row[j];
                }
                jtr[i] += row[i] * r;
            }
        }

        let mut improved = false;
        for _ in 0..50 {
            let mut damped = jtj;
            for (i, row) in damped.iter_mut().enumerate() {
                row[i] += lambda * jtj[i][i].max(1e-12);
            }
            let Some(delta) = solve3(damped, [-jtr[0], -jtr[1], -jtr[2]]) else {
                lambda *= 3.0;
                continue;
            };
            let candidate = (cap + delta[0], rate + delta[1], mid + delta[2]);
            if candidate.0 <= 0.0 || candidate.1 <= 0.0 {
                lambda *= 3.0;
                continue;
            }
            let candidate_cost = cost_of(&residuals(candidate.0, candidate.1, candidate.2));
            if candidate_cost < cost {
                last_step = (delta[0] / cap.max(1.0)).abs()
                    + (delta[1] / rate.abs().max(1e-9)).abs()
                    + delta[2].abs();
                let cost_drop = cost - candidate_cost;
                (cap, rate, mid) = candidate;
                cost = candidate_cost;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                if last_step < STEP_TOLERANCE || cost_drop <= COST_TOLERANCE * cost.max(1.0) {
                    return Ok(finish(cap, rate, mid + t_shift, cost, sorted.len(), iteration + 1));
                }
                break;
            }
            lambda *= 3.0;
        }
        if !improved {
            // Damping exhausted: the current point is a (local) minimum.
            return Ok(finish(cap, rate, mid + t_shift, cost, sorted.len(), iteration + 1));
        }
    }
    Err(ForecastError::NonConvergence {
        iterations: MAX_ITERATIONS,
        residual_rms: (cost / sorted.len() as f64).sqrt(),
        last_step,
    })
}

fn finish(
    cap: f64,
    rate: f64,
    midpoint_year: f64,
    cost: f64,
    n: usize,
    iterations: usize,
) -> FitReport {
    FitReport {
        curve: AdoptionCurve {
            cap,
            rate_per_year: rate,
            midpoint_year,
        },
        residual_rms: (cost / n as f64).sqrt(),
        iterations,
    }
}

/// Gaussian elimination with partial pivoting for a 3x3 system.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let pivot_row = a[col];
        for row in col + 1..3 {
            let factor = a[row][col] / pivot_row[col];
            for (entry, pivot_entry) in a[row].iter_mut().zip(&pivot_row).skip(col) {
                *entry -= factor * pivot_entry;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut acc = b[row];
        for k in row + 1..3 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn california_scale_curve() -> AdoptionCurve {
        AdoptionCurve {
            cap: 1.53e6,
            rate_per_year: 0.653,
            midpoint_year: 2019.0,
        }
    }

    #[test]
    fn logistic_midpoint_is_half_cap() {
        let curve = california_scale_curve();
        assert_relative_eq!(logistic_sales(&curve, 2019.0), curve.cap / 2.0);
    }

    #[test]
    fn logistic_asymptotes() {
        let curve = california_scale_curve();
        assert!(logistic_sales(&curve, 1900.0) < 1.0);
        assert_relative_eq!(logistic_sales(&curve, 2200.0), curve.cap, max_relative = 1e-9);
        // Strictly increasing and bounded.
        let mut prev = 0.0;
        for year in 1990..2060 {
            let s = logistic_sales(&curve, year as f64);
            assert!(s > prev && s < curve.cap);
            prev = s;
        }
    }

    #[test]
    fn fit_recovers_noiseless_parameters() {
        let truth = AdoptionCurve {
            cap: 1.2e6,
            rate_per_year: 0.5,
            midpoint_year: 2018.0,
        };
        let obs: Vec<(f64, f64)> = (2008..=2028)
            .map(|y| (y as f64, logistic_sales(&truth, y as f64)))
            .collect();
        let report = fit_adoption(&obs).unwrap();
        assert_relative_eq!(report.curve.cap, truth.cap, max_relative = 1e-6);
        assert_relative_eq!(report.curve.rate_per_year, truth.rate_per_year, max_relative = 1e-6);
        assert_relative_eq!(report.curve.midpoint_year, truth.midpoint_year, max_relative = 1e-6);
    }

    #[test]
    fn fit_rejects_underdetermined_input() {
        let err = fit_adoption(&[(2011.0, 100.0), (2012.0, 200.0)]).unwrap_err();
        assert!(matches!(err, ForecastError::UnderDetermined(2)));
    }

    #[test]
    fn fit_bundled_observations_matches_reported_parameters() {
        let report = fit_adoption(&default_sales_observations()).unwrap();
        let curve = report.curve;
        assert!((curve.rate_per_year - 0.653).abs() <= 0.05, "rate {}", curve.rate_per_year);
        assert!((curve.cap - 1.53e6).abs() <= 0.05 * 1.53e6, "cap {}", curve.cap);
        assert!((curve.midpoint_year - 2019.0).abs() <= 0.5, "mid {}", curve.midpoint_year);
    }

    #[test]
    fn fit_is_deterministic() {
        let a = fit_adoption(&default_sales_observations()).unwrap();
        let b = fit_adoption(&default_sales_observations()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn projection_examples() {
        let fitted = fit_adoption(&default_sales_observations()).unwrap().curve;
        // Control paradigm: 223 kW over a 130-vehicle pool.
        let control = ParadigmContribution::from_fleet("control", 223.0, 130).unwrap();
        assert_relative_eq!(control.per_ev_peak_kw, 223.0 / 130.0, max_relative = 1e-12);
        let peak_2025 = project_peak_power(&fitted, &control, 2025.0);
        assert!((peak_2025 - 2573.0).abs() <= 0.02 * 2573.0, "control {peak_2025} MW");

        let min_dev = ParadigmContribution::from_fleet("min-dev-100-daily", 119.43, 130).unwrap();
        let reduced_2025 = project_peak_power(&fitted, &min_dev, 2025.0);
        assert!(reduced_2025 < 1378.0 * 1.02, "min-dev {reduced_2025} MW");
        let reduction = 1.0 - reduced_2025 / peak_2025;
        assert!(reduction > 0.46, "reduction {reduction}");
    }

    #[test]
    fn projection_is_linear_in_contribution_and_monotone_in_year() {
        let curve = california_scale_curve();
        let one = ParadigmContribution::new("x", 1.0).unwrap();
        let two = ParadigmContribution::new("y", 2.0).unwrap();
        let p1 = project_peak_power(&curve, &one, 2022.0);
        let p2 = project_peak_power(&curve, &two, 2022.0);
        assert_relative_eq!(p2, 2.0 * p1, max_relative = 1e-12);
        assert!(project_peak_power(&curve, &one, 2023.0) > p1);
    }

    #[test]
    fn contribution_rejects_non_positive() {
        assert!(ParadigmContribution::new("x", 0.0).is_err());
        assert!(ParadigmContribution::new("x", f64::NAN).is_err());
        assert!(ParadigmContribution::from_fleet("x", 100.0, 0).is_err());
    }
}
