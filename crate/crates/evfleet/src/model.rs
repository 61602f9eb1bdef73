//! Vehicle catalog and conversion of trip records into per-vehicle
//! state-of-charge and usage-likelihood signals.
//!
//! Trip energy follows the fuel-efficiency conversion
//! `E = d * eta / f_e` with `d = speed * duration` and
//! `eta = 33.705 kWh/gallon`; the city rating applies at average speeds up
//! to 60 mph, the highway rating above that. State-of-charge profiles assume
//! the control behaviour of charging immediately and fully at the start of
//! every parked period.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Energy content of a gallon of gasoline, kWh. Overridable per call for
/// sensitivity studies.
pub const KWH_PER_GALLON: f64 = 33.705;

/// Average speed above which the highway efficiency rating applies, mph.
pub const HIGHWAY_SPEED_MPH: f64 = 60.0;

/// Default centered moving-average width for usage-likelihood smoothing,
/// in timesteps.
pub const DEFAULT_SMOOTHING_WIDTH: usize = 60;

/// Tolerance for market shares summing to one.
const SHARE_SUM_TOLERANCE: f64 = 1e-9;

/// A production EV model with its efficiency and charging characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvModel {
    pub name: String,
    /// City efficiency, miles per gallon-equivalent.
    pub mpg_city: f64,
    /// Highway efficiency, miles per gallon-equivalent.
    pub mpg_highway: f64,
    /// Battery capacity, kWh.
    pub battery_capacity_kwh: f64,
    /// Onboard charger rate, kW.
    pub charge_rate_kw: f64,
    /// Power drawn while charging, kW (equal to the charge rate).
    pub charge_power_kw: f64,
    /// Fraction of the fleet using this model, in `[0, 1]`.
    pub market_share: f64,
}

impl EvModel {
    pub fn new(
        name: impl Into<String>,
        mpg_city: f64,
        mpg_highway: f64,
        battery_capacity_kwh: f64,
        charge_rate_kw: f64,
        market_share: f64,
    ) -> Self {
        Self {
            name: name.into(),
            mpg_city,
            mpg_highway,
            battery_capacity_kwh,
            charge_rate_kw,
            charge_power_kw: charge_rate_kw,
            market_share,
        }
    }
}

/// The five production models shipped as the default catalog.
pub fn default_catalog() -> Vec<EvModel> {
    vec![
        EvModel::new("Nissan Leaf", 126.0, 101.0, 24.0, 6.6, 0.36),
        EvModel::new("Tesla Model S", 88.0, 90.0, 85.0, 9.6, 0.25),
        EvModel::new("BMW i3", 137.0, 111.0, 22.0, 7.4, 0.12),
        EvModel::new("Fiat 500e", 121.0, 103.0, 24.0, 6.6, 0.12),
        EvModel::new("Ford Focus Electric", 110.0, 99.0, 23.0, 6.6, 0.15),
    ]
}

/// Checks catalog invariants: positive characteristics and market shares
/// summing to one.
pub fn validate_catalog(catalog: &[EvModel]) -> Result<(), ModelError> {
    if catalog.is_empty() {
        return Err(ModelError::EmptyCatalog);
    }
    for model in catalog {
        for (field, value) in [
            ("mpg_city", model.mpg_city),
            ("mpg_highway", model.mpg_highway),
            ("battery_capacity_kwh", model.battery_capacity_kwh),
            ("charge_rate_kw", model.charge_rate_kw),
            ("charge_power_kw", model.charge_power_kw),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::NonPositiveField {
                    model: model.name.clone(),
                    field,
                });
            }
        }
        if !(model.market_share.is_finite() && (0.0..=1.0).contains(&model.market_share)) {
            return Err(ModelError::BadShare {
                model: model.name.clone(),
                share: model.market_share,
            });
        }
    }
    let sum: f64 = catalog.iter().map(|m| m.market_share).sum();
    if (sum - 1.0).abs() > SHARE_SUM_TOLERANCE {
        return Err(ModelError::ShareSum { sum });
    }
    Ok(())
}

/// Where a trip ends, as reported by travel surveys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Destination {
    Home,
    Work,
    School,
    Other,
}

impl std::str::FromStr for Destination {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "home" => Ok(Self::Home),
            "work" => Ok(Self::Work),
            "school" => Ok(Self::School),
            "other" => Ok(Self::Other),
            other => Err(format!("unknown destination {other:?}")),
        }
    }
}

impl std::fmt::Display for Destination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Self::Home => "home",
            Self::Work => "work",
            Self::School => "school",
            Self::Other => "other",
        };
        f.write_str(name)
    }
}

/// One trip of one vehicle, in timestep indices from the horizon start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub vehicle_id: String,
    pub start: usize,
    /// Exclusive end timestep; `end > start`.
    pub end: usize,
    pub avg_speed_mph: f64,
    pub destination: Destination,
}

/// Time series of state-of-charge values in `[0, 1]`, one per timestep
/// boundary (length `T + 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocSignal {
    values: Vec<f64>,
    resolution_min: u32,
}

impl SocSignal {
    pub fn new(values: Vec<f64>, resolution_min: u32) -> Result<Self, ModelError> {
        if values.len() < 2 {
            return Err(ModelError::ZeroHorizon);
        }
        if resolution_min == 0 {
            return Err(ModelError::ZeroResolution);
        }
        for (index, &value) in values.iter().enumerate() {
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(ModelError::SocOutOfRange { index, value });
            }
        }
        Ok(Self {
            values,
            resolution_min,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Planning horizon `T` in timesteps.
    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    pub fn resolution_min(&self) -> u32 {
        self.resolution_min
    }

    /// The sub-signal covering timesteps `[start, start + len)`; shares the
    /// boundary value with its neighbours.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self, ModelError> {
        if start + len > self.horizon() {
            return Err(ModelError::SliceOutOfRange {
                start,
                len,
                horizon: self.horizon(),
            });
        }
        Ok(Self {
            values: self.values[start..=start + len].to_vec(),
            resolution_min: self.resolution_min,
        })
    }
}

/// Per-timestep likelihood of the vehicle being in use, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageLikelihood {
    values: Vec<f64>,
}

impl UsageLikelihood {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        for (index, &value) in values.iter().enumerate() {
            if !(value.is_finite() && (0.0..=1.0).contains(&value)) {
                return Err(ModelError::LikelihoodOutOfRange { index, value });
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> usize {
        self.values.len()
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self, ModelError> {
        if start + len > self.values.len() {
            return Err(ModelError::SliceOutOfRange {
                start,
                len,
                horizon: self.values.len(),
            });
        }
        Ok(Self {
            values: self.values[start..start + len].to_vec(),
        })
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("catalog is empty")]
    EmptyCatalog,
    #[error("model {model}: {field} must be finite and positive")]
    NonPositiveField { model: String, field: &'static str },
    #[error("model {model}: market share {share} outside [0, 1]")]
    BadShare { model: String, share: f64 },
    #[error("market shares sum to {sum}, expected 1 within 1e-9")]
    ShareSum { sum: f64 },
    #[error("trip inputs must be finite with speed >= 0 and duration > 0 (speed {speed_mph} mph, duration {duration_h} h)")]
    InvalidTripInput { speed_mph: f64, duration_h: f64 },
    #[error("trip {index} ({start}..{end}) overlaps or precedes its predecessor")]
    UnsortedTrips { index: usize, start: usize, end: usize },
    #[error("trip {index}: end {end} must exceed start {start}")]
    EmptyTrip { index: usize, start: usize, end: usize },
    #[error("trip {index} ends at {end}, beyond horizon {horizon}")]
    TripBeyondHorizon { index: usize, end: usize, horizon: usize },
    #[error("infeasible trip {index}: state of charge would fall {deficit_kwh:.3} kWh below empty")]
    InfeasibleTrip { index: usize, deficit_kwh: f64 },
    #[error("initial state of charge {0} outside [0, 1]")]
    BadInitialSoc(f64),
    #[error("state of charge {value} at index {index} outside [0, 1]")]
    SocOutOfRange { index: usize, value: f64 },
    #[error("usage likelihood {value} at index {index} outside [0, 1]")]
    LikelihoodOutOfRange { index: usize, value: f64 },
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error("timestep resolution must be positive")]
    ZeroResolution,
    #[error("data span {span} is not a whole number of horizons {horizon}")]
    SpanMismatch { span: usize, horizon: usize },
    #[error("slice [{start}, {start}+{len}) outside horizon {horizon}")]
    SliceOutOfRange { start: usize, len: usize, horizon: usize },
    #[error("count must be positive")]
    ZeroCount,
}

/// Energy drawn by one trip, kWh: `speed * duration * eta / f_e`.
pub fn trip_energy_kwh(
    speed_mph: f64,
    duration_h: f64,
    model: &EvModel,
) -> Result<f64, ModelError> {
    trip_energy_with_fuel_value(speed_mph, duration_h, model, KWH_PER_GALLON)
}

/// [`trip_energy_kwh`] with an explicit gasoline energy content.
pub fn trip_energy_with_fuel_value(
    speed_mph: f64,
    duration_h: f64,
    model: &EvModel,
    kwh_per_gallon: f64,
) -> Result<f64, ModelError> {
    if !(speed_mph.is_finite() && duration_h.is_finite() && speed_mph >= 0.0 && duration_h > 0.0) {
        return Err(ModelError::InvalidTripInput {
            speed_mph,
            duration_h,
        });
    }
    let fuel_efficiency = if speed_mph <= HIGHWAY_SPEED_MPH {
        model.mpg_city
    } else {
        model.mpg_highway
    };
    let distance_miles = speed_mph * duration_h;
    Ok(distance_miles * kwh_per_gallon / fuel_efficiency)
}

fn validate_trips(trips: &[TripRecord], horizon: usize) -> Result<(), ModelError> {
    let mut prev_end = 0usize;
    for (index, trip) in trips.iter().enumerate() {
        if trip.end <= trip.start {
            return Err(ModelError::EmptyTrip {
                index,
                start: trip.start,
                end: trip.end,
            });
        }
        if trip.start < prev_end {
            return Err(ModelError::UnsortedTrips {
                index,
                start: trip.start,
                end: trip.end,
            });
        }
        if trip.end > horizon {
            return Err(ModelError::TripBeyondHorizon {
                index,
                end: trip.end,
                horizon,
            });
        }
        if !(trip.avg_speed_mph.is_finite() && trip.avg_speed_mph >= 0.0) {
            return Err(ModelError::InvalidTripInput {
                speed_mph: trip.avg_speed_mph,
                duration_h: (trip.end - trip.start) as f64,
            });
        }
        prev_end = trip.end;
    }
    Ok(())
}

/// Builds a state-of-charge profile from sorted, non-overlapping trips.
///
/// During a trip the state of charge falls linearly by the trip energy;
/// while parked the vehicle charges at its full rate until reaching 1
/// (the charge-immediately control behaviour). A trip that would drive the
/// state of charge below zero is an error; reaching exactly zero is not.
pub fn build_soc_profile(
    trips: &[TripRecord],
    model: &EvModel,
    horizon: usize,
    resolution_min: u32,
    initial_soc: f64,
    kwh_per_gallon: f64,
) -> Result<SocSignal, ModelError> {
    if horizon == 0 {
        return Err(ModelError::ZeroHorizon);
    }
    if resolution_min == 0 {
        return Err(ModelError::ZeroResolution);
    }
    if !(initial_soc.is_finite() && (0.0..=1.0).contains(&initial_soc)) {
        return Err(ModelError::BadInitialSoc(initial_soc));
    }
    validate_trips(trips, horizon)?;

    let hours_per_step = f64::from(resolution_min) / 60.0;
    let charge_per_step = model.charge_rate_kw * hours_per_step / model.battery_capacity_kwh;

    // Per-step state-of-charge drop for each trip.
    let mut drains = Vec::with_capacity(trips.len());
    for trip in trips {
        let duration_h = (trip.end - trip.start) as f64 * hours_per_step;
        let energy =
            trip_energy_with_fuel_value(trip.avg_speed_mph, duration_h, model, kwh_per_gallon)?;
        let steps = (trip.end - trip.start) as f64;
        drains.push(energy / model.battery_capacity_kwh / steps);
    }

    let mut values = Vec::with_capacity(horizon + 1);
    let mut soc = initial_soc;
    values.push(soc);
    let mut trip_idx = 0usize;
    for t in 0..horizon {
        while trip_idx < trips.len() && trips[trip_idx].end <= t {
            trip_idx += 1;
        }
        let in_trip = trip_idx < trips.len() && trips[trip_idx].start <= t && t < trips[trip_idx].end;
        if in_trip {
            soc -= drains[trip_idx];
            if soc < 0.0 {
                if soc < -1e-9 {
                    return Err(ModelError::InfeasibleTrip {
                        index: trip_idx,
                        deficit_kwh: -soc * model.battery_capacity_kwh,
                    });
                }
                soc = 0.0;
            }
        } else {
            soc = (soc + charge_per_step).min(1.0);
        }
        values.push(soc);
    }
    SocSignal::new(values, resolution_min)
}

/// Empirical per-timestep in-transit frequency over the observed periods.
///
/// Trips are recorded over `span` timesteps which must be a whole number of
/// `horizon`-length periods; the frequency at `t` counts the periods in
/// which the vehicle was in transit at offset `t`. With a single observed
/// period the binary indicator is smoothed by a centered moving average of
/// `smoothing_width` timesteps.
pub fn usage_likelihood(
    trips: &[TripRecord],
    horizon: usize,
    span: usize,
    smoothing_width: usize,
) -> Result<UsageLikelihood, ModelError> {
    if horizon == 0 {
        return Err(ModelError::ZeroHorizon);
    }
    if span == 0 || !span.is_multiple_of(horizon) {
        return Err(ModelError::SpanMismatch { span, horizon });
    }
    validate_trips(trips, span)?;

    let periods = span / horizon;
    let mut counts = vec![0u32; horizon];
    for trip in trips {
        for abs_t in trip.start..trip.end {
            let offset = abs_t % horizon;
            counts[offset] += 1;
        }
    }
    // Trips never overlap, so within one period each offset is hit at most
    // once and the count is the number of occupied periods.
    let mut values: Vec<f64> = counts
        .iter()
        .map(|&c| f64::from(c) / periods as f64)
        .collect();
    if periods == 1 && smoothing_width > 1 {
        values = moving_average(&values, smoothing_width);
    }
    UsageLikelihood::new(values)
}

/// Centered moving average with truncated boundary windows.
fn moving_average(values: &[f64], width: usize) -> Vec<f64> {
    let n = values.len();
    let back = (width - 1) / 2;
    let forward = width / 2;
    (0..n)
        .map(|t| {
            let lo = t.saturating_sub(back);
            let hi = (t + forward).min(n - 1);
            let window = &values[lo..=hi];
            window.iter().sum::<f64>() / window.len() as f64
        })
        .collect()
}

/// Assigns catalog models to `n` vehicles in market-share proportion.
///
/// Counts follow largest-remainder apportionment of the shares, then the
/// resulting multiset is shuffled with the seeded generator, so the realised
/// proportions deviate from the shares by at most `1/n` per model and the
/// seed only affects ordering.
pub fn assign_models(
    n: usize,
    catalog: &[EvModel],
    seed: u64,
) -> Result<Vec<EvModel>, ModelError> {
    if n == 0 {
        return Err(ModelError::ZeroCount);
    }
    validate_catalog(catalog)?;
    let counts = largest_remainder_counts(n, catalog);
    let mut assigned = Vec::with_capacity(n);
    for (model, count) in catalog.iter().zip(&counts) {
        for _ in 0..*count {
            assigned.push(model.clone());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    assigned.shuffle(&mut rng);
    Ok(assigned)
}

fn largest_remainder_counts(n: usize, catalog: &[EvModel]) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(catalog.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(catalog.len());
    let mut assigned = 0usize;
    for (idx, model) in catalog.iter().enumerate() {
        let quota = n as f64 * model.market_share;
        let floor = quota.floor() as usize;
        counts.push(floor);
        assigned += floor;
        remainders.push((idx, quota - floor as f64));
    }
    // Larger remainder wins; ties go to the earlier catalog entry.
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (idx, _) in remainders.iter().take(n - assigned) {
        counts[*idx] += 1;
    }
    counts
}
