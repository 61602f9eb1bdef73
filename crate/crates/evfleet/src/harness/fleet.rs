//! Fleet construction: trip ingestion and commute-pattern synthesis.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    assign_models, build_soc_profile, usage_likelihood, Destination, EvModel, SocSignal,
    TripRecord, UsageLikelihood,
};
use crate::seed::{mix, streams};

use super::io::read_trips;
use super::HarnessError;

/// Timestep resolution used throughout the harness, minutes.
pub const RESOLUTION_MIN: u32 = 1;

const MINUTES_PER_DAY: usize = 1440;

/// One vehicle with its derived signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: String,
    pub model: EvModel,
    pub signal: SocSignal,
    pub likelihood: UsageLikelihood,
    pub trips: Vec<TripRecord>,
}

/// A fleet ready for planning, agents sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetScenario {
    pub agents: Vec<AgentRecord>,
    /// Data horizon in timesteps.
    pub horizon: usize,
    pub resolution_min: u32,
    /// Agents equipped with the planning software; defaults to everyone.
    pub participants: Vec<String>,
}

impl FleetScenario {
    pub fn agent_ids(&self) -> Vec<String> {
        self.agents.iter().map(|a| a.id.clone()).collect()
    }

    pub fn agent(&self, id: &str) -> Option<&AgentRecord> {
        self.agents.iter().find(|a| a.id == id)
    }
}

/// Knobs shared by ingestion and synthesis.
#[derive(Debug, Clone, Copy)]
pub struct FleetParams {
    pub initial_soc: f64,
    pub kwh_per_gallon: f64,
    pub smoothing_width: usize,
}

impl Default for FleetParams {
    fn default() -> Self {
        Self {
            initial_soc: 1.0,
            kwh_per_gallon: crate::model::KWH_PER_GALLON,
            smoothing_width: crate::model::DEFAULT_SMOOTHING_WIDTH,
        }
    }
}

/// Builds a fleet from a trip CSV and a catalog.
///
/// Vehicles are sorted by id, models are assigned in market-share
/// proportion, and each vehicle gets a control state-of-charge profile and
/// a usage likelihood. Schema violations name the offending row; infeasible
/// trips name the vehicle.
pub fn ingest_fleet(
    trips_path: &Path,
    catalog: &[EvModel],
    horizon: usize,
    seed: u64,
    params: &FleetParams,
) -> Result<FleetScenario, HarnessError> {
    let rows = read_trips(trips_path)?;
    if rows.is_empty() {
        return Err(HarnessError::EmptyTrips {
            path: trips_path.to_path_buf(),
        });
    }
    let mut by_vehicle: BTreeMap<String, Vec<TripRecord>> = BTreeMap::new();
    for (_, trip) in rows {
        by_vehicle.entry(trip.vehicle_id.clone()).or_default().push(trip);
    }
    let ids: Vec<String> = by_vehicle.keys().cloned().collect();
    let models = assign_models(ids.len(), catalog, mix(seed, streams::MODELS))?;

    let mut agents = Vec::with_capacity(ids.len());
    for (id, model) in ids.into_iter().zip(models) {
        let trips = by_vehicle.remove(&id).unwrap();
        let agent = build_agent(id.clone(), model, trips, horizon, params)
            .map_err(|source| HarnessError::Vehicle { vehicle: id, source })?;
        agents.push(agent);
    }
    let participants = agents.iter().map(|a| a.id.clone()).collect();
    Ok(FleetScenario {
        agents,
        horizon,
        resolution_min: RESOLUTION_MIN,
        participants,
    })
}

fn build_agent(
    id: String,
    model: EvModel,
    trips: Vec<TripRecord>,
    horizon: usize,
    params: &FleetParams,
) -> Result<AgentRecord, crate::model::ModelError> {
    let signal = build_soc_profile(
        &trips,
        &model,
        horizon,
        RESOLUTION_MIN,
        params.initial_soc,
        params.kwh_per_gallon,
    )?;
    let likelihood = usage_likelihood(&trips, horizon, horizon, params.smoothing_width)?;
    Ok(AgentRecord {
        id,
        model,
        signal,
        likelihood,
        trips,
    })
}

/// Synthesizes a commute-like fleet: weekday morning and evening trips plus
/// occasional midday weekend outings, jittered per seed. Trip times scale
/// with the day length so small horizons stay usable.
pub fn synthesize_fleet(
    n: usize,
    horizon: usize,
    seed: u64,
    catalog: &[EvModel],
    params: &FleetParams,
) -> Result<FleetScenario, HarnessError> {
    if n == 0 {
        return Err(HarnessError::BadConfig("fleet size must be >= 1".into()));
    }
    if horizon < 8 {
        return Err(HarnessError::BadConfig(
            "horizon too short to place a trip pattern".into(),
        ));
    }
    let models = assign_models(n, catalog, mix(seed, streams::MODELS))?;
    let width = format!("{}", n - 1).len().max(3);

    let mut agents = Vec::with_capacity(n);
    for (index, model) in models.into_iter().enumerate() {
        let id = format!("ev-{index:0width$}");
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, streams::SYNTH + index as u64));
        let trips = synth_trips(&id, horizon, &mut rng);
        let agent = build_agent(id.clone(), model, trips, horizon, params)
            .map_err(|source| HarnessError::Vehicle { vehicle: id, source })?;
        agents.push(agent);
    }
    let participants = agents.iter().map(|a| a.id.clone()).collect();
    Ok(FleetScenario {
        agents,
        horizon,
        resolution_min: RESOLUTION_MIN,
        participants,
    })
}

fn synth_trips(vehicle_id: &str, horizon: usize, rng: &mut ChaCha8Rng) -> Vec<TripRecord> {
    let day_len = horizon.min(MINUTES_PER_DAY);
    let days = horizon / day_len;
    let frac = |f: f64| (f * day_len as f64) as usize;
    let mut trips = Vec::new();

    // The commute schedule is a property of the driver: the morning
    // departure and trip length repeat every weekday, while the workday
    // length (and with it the evening departure) varies day to day. Evening
    // and weekend trips are short errand-scale drives.
    let morning_depart = frac(0.264 + rng.random_range(0.0..0.083)); // 6:20-8:20
    let morning_duration = frac(0.0264 + rng.random_range(0.0..0.0118)).max(1); // 38-55 min
    let highway_commuter = rng.random_range(0.0..1.0) < 0.1;
    let morning_speed_base = if highway_commuter {
        rng.random_range(62.0..68.0)
    } else {
        rng.random_range(36.0..52.0)
    };

    for day in 0..days {
        let day_start = day * day_len;
        // Monday-aligned week: days 5 and 6 are the weekend.
        let weekend = days >= 7 && day % 7 >= 5;
        if !weekend {
            let speed = if highway_commuter {
                (morning_speed_base + rng.random_range(-2.0f64..2.0)).clamp(61.0, 70.0)
            } else {
                (morning_speed_base + rng.random_range(-3.0f64..3.0)).clamp(22.0, 58.0)
            };
            push_trip(
                &mut trips,
                vehicle_id,
                day_start + morning_depart,
                morning_duration,
                speed,
                Destination::Work,
                horizon,
            );
            // Work runs 8-10.5 scaled hours before the drive home.
            let work_len = frac(0.333 + rng.random_range(0.0..0.105));
            let back = day_start + morning_depart + morning_duration + work_len;
            let duration = frac(0.0055 + rng.random_range(0.0..0.0049)).max(1); // 8-15 min
            let speed = rng.random_range(20.0..35.0);
            push_trip(&mut trips, vehicle_id, back, duration, speed, Destination::Home, horizon);
        } else if rng.random_range(0.0..1.0) < 0.75 {
            // Midday weekend outing and return.
            let out = day_start + frac(0.458 + rng.random_range(0.0..0.083));
            let duration = frac(0.0055 + rng.random_range(0.0..0.0049)).max(1);
            let speed = rng.random_range(20.0..35.0);
            push_trip(&mut trips, vehicle_id, out, duration, speed, Destination::Other, horizon);
            let back = out + duration + frac(0.0625 + rng.random_range(0.0..0.0625));
            let duration = frac(0.0055 + rng.random_range(0.0..0.0049)).max(1);
            let speed = rng.random_range(20.0..35.0);
            push_trip(&mut trips, vehicle_id, back, duration, speed, Destination::Home, horizon);
        }
    }
    trips
}

fn push_trip(
    trips: &mut Vec<TripRecord>,
    vehicle_id: &str,
    start: usize,
    duration: usize,
    speed: f64,
    destination: Destination,
    horizon: usize,
) {
    let last_end = trips.last().map_or(0, |t: &TripRecord| t.end);
    let start = start.max(last_end);
    let end = (start + duration).min(horizon);
    if end <= start {
        return;
    }
    trips.push(TripRecord {
        vehicle_id: vehicle_id.to_string(),
        start,
        end,
        avg_speed_mph: speed,
        destination,
    });
}
