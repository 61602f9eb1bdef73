//! Per-vehicle generation of alternative charging plans from a
//! state-of-charge seed signal.
//!
//! A flexibility window is a maximal parked period — the state of charge
//! stops falling and rises (or holds) until the vehicle is used again — long
//! enough to complete a full charge. Each window is divided into equal
//! charging slots, slots are ranked by usage likelihood, and plan `j`
//! redistributes the charging intervals over the `j` lowest-likelihood
//! slots. Plan demand is the charger power wherever the planned
//! state-of-charge trajectory strictly increases, zero elsewhere.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{EvModel, ModelError, SocSignal, UsageLikelihood};
use crate::seed;

/// A maximal parked period long enough for a full charge.
///
/// `start`/`end` index demand timesteps: charging may happen at any
/// `t` in `[start, end)`. Windows of one vehicle are disjoint and ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexibilityWindow {
    pub start: usize,
    /// Exclusive end timestep.
    pub end: usize,
    /// State of charge at the window start.
    pub soc_at_start: f64,
    /// 1-based ordinal among the kept windows.
    pub index: usize,
}

impl FlexibilityWindow {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Slot count and size for one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpec {
    pub count: usize,
    /// Slot length in timesteps; the last slot absorbs the remainder.
    pub slot_size: usize,
}

/// An equal-sized subdivision of a flexibility window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargingSlot {
    /// Window ordinal this slot belongs to.
    pub window: usize,
    /// 1-based position within the window.
    pub ordinal: usize,
    pub start: usize,
    pub end: usize,
    pub size: usize,
    /// 1-based position after the likelihood ranking (1 = least likely to
    /// be interrupted).
    pub rank: usize,
}

/// One candidate per-timestep power schedule with its discomfort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandPlan {
    /// Power per timestep, kW; each value is 0 or the charger power.
    pub values: Vec<f64>,
    /// 1-based plan index `j`.
    pub plan_index: usize,
    /// Likelihood-weighted exposure to low charge over the plan trajectory.
    pub discomfort: f64,
    /// The planned state-of-charge trajectory.
    pub planned_soc: SocSignal,
}

/// The alternative plans of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSet {
    pub agent_id: String,
    pub plans: Vec<DemandPlan>,
}

impl PlanSet {
    /// Number of plans `v` (the maximum slot count across windows).
    pub fn v(&self) -> usize {
        self.plans.len()
    }

    /// Runs the full pipeline: window detection, slot computation and
    /// ranking, then plan generation. Returns an empty plan list when the
    /// signal offers no flexibility window.
    pub fn generate(
        agent_id: impl Into<String>,
        signal: &SocSignal,
        likelihood: &UsageLikelihood,
        model: &EvModel,
        interval_m: usize,
        v_max: usize,
        seed: u64,
    ) -> Result<Self, PlanError> {
        let windows = compute_windows(signal, model);
        let specs = slot_counts(&windows, model, v_max, signal.resolution_min());
        let ranked: Vec<Vec<ChargingSlot>> = windows
            .iter()
            .zip(&specs)
            .map(|(w, s)| rank_slots(compute_slots(w, s.count, s.slot_size), likelihood))
            .collect();
        let plans = generate_plans(signal, likelihood, &windows, &ranked, model, interval_m, seed)?;
        Ok(Self {
            agent_id: agent_id.into(),
            plans,
        })
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("window {window}: {needed} charging intervals do not fit the available cells ({available})")]
    InsufficientSlotCapacity {
        window: usize,
        needed: usize,
        available: usize,
    },
    #[error("horizon mismatch: state of charge covers {soc} timesteps, likelihood {likelihood}")]
    HorizonMismatch { soc: usize, likelihood: usize },
    #[error("charging interval length must be positive")]
    ZeroInterval,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Timesteps needed for a full charge from `soc_at_start`:
/// `(1 - soc) * capacity / rate`, converted to timesteps and rounded up.
pub fn charge_time(model: &EvModel, soc_at_start: f64, resolution_min: u32) -> usize {
    let hours = (1.0 - soc_at_start) * model.battery_capacity_kwh / model.charge_rate_kw;
    let steps = hours * 60.0 / f64::from(resolution_min);
    // Snap representation error before rounding up so a nominally whole
    // number of steps does not gain a spurious extra one.
    let nearest = steps.round();
    if (steps - nearest).abs() < 1e-9 {
        nearest as usize
    } else {
        steps.ceil() as usize
    }
}

/// Detects flexibility windows on a state-of-charge signal.
///
/// A window opens at a strict local minimum (the charge was falling and
/// starts rising) and extends while the signal is non-decreasing; a plateau
/// inside the rise continues the window. Windows shorter than the full
/// charging time are discarded. Out-of-range neighbours never open or extend
/// a window, so a constant or monotone signal yields none.
pub fn compute_windows(signal: &SocSignal, model: &EvModel) -> Vec<FlexibilityWindow> {
    let x = signal.values();
    let horizon = signal.horizon();
    let mut windows = Vec::new();
    let mut t = 1;
    while t < horizon {
        if x[t] < x[t - 1] && x[t] < x[t + 1] {
            let start = t;
            let mut end = t + 1;
            while end < horizon && x[end + 1] >= x[end] {
                end += 1;
            }
            let needed = charge_time(model, x[start], signal.resolution_min());
            if end - start >= needed {
                windows.push(FlexibilityWindow {
                    start,
                    end,
                    soc_at_start: x[start],
                    index: windows.len() + 1,
                });
            }
            t = end;
        } else {
            t += 1;
        }
    }
    windows
}

/// Slot count and size per window: `count = len / charge_time`, capped at
/// `v_max`; when the cap applies the slot size is recomputed as
/// `len / v_max`, otherwise it is the charging time itself.
pub fn slot_counts(
    windows: &[FlexibilityWindow],
    model: &EvModel,
    v_max: usize,
    resolution_min: u32,
) -> Vec<SlotSpec> {
    windows
        .iter()
        .map(|w| {
            let needed = charge_time(model, w.soc_at_start, resolution_min).max(1);
            let count = w.len() / needed;
            if count >= v_max {
                SlotSpec {
                    count: v_max,
                    slot_size: w.len() / v_max,
                }
            } else {
                SlotSpec {
                    count,
                    slot_size: needed,
                }
            }
        })
        .collect()
}

/// Cuts a window into `count` slots of `slot_size` timesteps; the trailing
/// remainder is appended to the last slot.
pub fn compute_slots(window: &FlexibilityWindow, count: usize, slot_size: usize) -> Vec<ChargingSlot> {
    (1..=count)
        .map(|ordinal| {
            let start = window.start + (ordinal - 1) * slot_size;
            let end = if ordinal == count {
                window.end
            } else {
                window.start + ordinal * slot_size
            };
            ChargingSlot {
                window: window.index,
                ordinal,
                start,
                end,
                size: end - start,
                rank: 0,
            }
        })
        .collect()
}

/// Sorts the slots of one window ascending by mean usage likelihood, ties
/// broken by the earlier start, and assigns 1-based ranks.
pub fn rank_slots(mut slots: Vec<ChargingSlot>, likelihood: &UsageLikelihood) -> Vec<ChargingSlot> {
    let lam = likelihood.values();
    let mean = |slot: &ChargingSlot| -> f64 {
        debug_assert!(slot.end <= lam.len());
        let window = &lam[slot.start..slot.end];
        window.iter().sum::<f64>() / window.len() as f64
    };
    slots.sort_by(|a, b| {
        mean(a)
            .partial_cmp(&mean(b))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.start.cmp(&b.start))
    });
    for (position, slot) in slots.iter_mut().enumerate() {
        slot.rank = position + 1;
    }
    slots
}

/// Charging runs `(start, len)` for one window when `c` slots are in use.
///
/// The full charge is split into `ceil(charge_steps / m)` intervals (the
/// last one truncated so the total is exactly `charge_steps`), the interval
/// counts are spread evenly over the `c` lowest-ranked slots with extras to
/// the lowest ranks, and each slot's intervals are placed uniformly at
/// random, without replacement, on its grid of `m`-aligned cells. When a
/// slot's grid is one cell short the truncated interval takes the grid tail;
/// the slot-size bounds from the slot computation make this always fit.
fn place_intervals(
    rng: &mut ChaCha8Rng,
    slots: &[ChargingSlot],
    charge_steps: usize,
    interval_m: usize,
) -> Result<Vec<(usize, usize)>, PlanError> {
    let c = slots.len();
    debug_assert!(c > 0 && charge_steps > 0);
    let n = charge_steps.div_ceil(interval_m);
    let partial = charge_steps - (n - 1) * interval_m;
    let base = n / c;
    let extra = n % c;
    let last_used = if base == 0 { extra - 1 } else { c - 1 };

    let mut runs = Vec::with_capacity(n);
    for (position, slot) in slots.iter().enumerate() {
        let k = base + usize::from(position < extra);
        if k == 0 {
            continue;
        }
        let cells = slot.size / interval_m;
        let carries_partial = position == last_used && partial < interval_m;
        let mut positions: Vec<usize>;
        let mut tail_run = None;
        if cells >= k {
            positions = rand::seq::index::sample(rng, cells, k)
                .into_iter()
                .map(|q| slot.start + q * interval_m)
                .collect();
            positions.sort_unstable();
        } else if carries_partial && cells + 1 == k && slot.size - cells * interval_m >= partial {
            positions = (0..cells).map(|q| slot.start + q * interval_m).collect();
            tail_run = Some((slot.start + cells * interval_m, partial));
        } else {
            return Err(PlanError::InsufficientSlotCapacity {
                window: slot.window,
                needed: k,
                available: cells,
            });
        }
        let full_until = if carries_partial && tail_run.is_none() {
            positions.len() - 1
        } else {
            positions.len()
        };
        for (i, &pos) in positions.iter().enumerate() {
            let len = if i < full_until { interval_m } else { partial };
            runs.push((pos, len));
        }
        if let Some(run) = tail_run {
            runs.push(run);
        }
    }
    runs.sort_unstable();
    Ok(runs)
}

/// Generates the plan sequence for one agent.
///
/// `ranked_slots[i]` holds the ranked slots of `windows[i]`. Plan `j` uses
/// the `min(j, count)` lowest-ranked slots in every window; plans that use
/// the same slot count in a window share the same interval placement, so a
/// single-slot window leaves no freedom and all plans coincide there. The
/// planned trajectory replays the seed signal's discharges, drops any
/// charging outside the flexibility windows, and charges at the full rate
/// inside the placed intervals, clamped to `[0, 1]`.
pub fn generate_plans(
    signal: &SocSignal,
    likelihood: &UsageLikelihood,
    windows: &[FlexibilityWindow],
    ranked_slots: &[Vec<ChargingSlot>],
    model: &EvModel,
    interval_m: usize,
    seed: u64,
) -> Result<Vec<DemandPlan>, PlanError> {
    if interval_m == 0 {
        return Err(PlanError::ZeroInterval);
    }
    let horizon = signal.horizon();
    if likelihood.horizon() != horizon {
        return Err(PlanError::HorizonMismatch {
            soc: horizon,
            likelihood: likelihood.horizon(),
        });
    }
    debug_assert_eq!(windows.len(), ranked_slots.len());

    let v = ranked_slots.iter().map(Vec::len).max().unwrap_or(0);
    if v == 0 {
        return Ok(Vec::new());
    }

    let resolution = signal.resolution_min();
    let hours_per_step = f64::from(resolution) / 60.0;
    let charge_per_step = model.charge_rate_kw * hours_per_step / model.battery_capacity_kwh;

    let mut in_window = vec![false; horizon];
    for window in windows {
        for flag in &mut in_window[window.start..window.end] {
            *flag = true;
        }
    }

    // Placements keyed by (window position, slots in use); plans with the
    // same effective slot count reuse them.
    let mut placements: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for (position, (window, slots)) in windows.iter().zip(ranked_slots).enumerate() {
        let steps = charge_time(model, window.soc_at_start, resolution);
        for c in 1..=slots.len() {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed::mix(seed, (position as u64) * 256 + c as u64));
            let runs = place_intervals(&mut rng, &slots[..c], steps, interval_m)?;
            placements.insert((position, c), runs);
        }
    }

    let x = signal.values();
    let mut plans = Vec::with_capacity(v);
    for j in 1..=v {
        let mut charging = vec![false; horizon];
        for (position, slots) in ranked_slots.iter().enumerate() {
            let c = j.min(slots.len());
            for &(start, len) in &placements[&(position, c)] {
                for flag in &mut charging[start..start + len] {
                    *flag = true;
                }
            }
        }

        let mut trajectory = Vec::with_capacity(horizon + 1);
        let mut current = x[0];
        trajectory.push(current);
        for t in 0..horizon {
            if in_window[t] {
                if charging[t] {
                    current = (current + charge_per_step).min(1.0);
                }
            } else {
                let delta = x[t + 1] - x[t];
                if delta < 0.0 {
                    current = (current + delta).max(0.0);
                }
            }
            trajectory.push(current);
        }

        let planned_soc = SocSignal::new(trajectory, resolution)?;
        let values = demand_from_soc(&planned_soc, model.charge_power_kw);
        let discomfort = plan_discomfort(&planned_soc, likelihood)?;
        plans.push(DemandPlan {
            values,
            plan_index: j,
            discomfort,
            planned_soc,
        });
    }
    Ok(plans)
}

/// Demand implied by a state-of-charge trajectory: the charger power where
/// the trajectory strictly increases, zero elsewhere.
pub fn demand_from_soc(soc: &SocSignal, charge_power_kw: f64) -> Vec<f64> {
    soc.values()
        .windows(2)
        .map(|pair| if pair[1] > pair[0] { charge_power_kw } else { 0.0 })
        .collect()
}

/// Likelihood-weighted exposure to low charge:
/// `(1/T) * sum_t (1 - soc_t) * likelihood_t`.
pub fn plan_discomfort(
    planned_soc: &SocSignal,
    likelihood: &UsageLikelihood,
) -> Result<f64, PlanError> {
    let horizon = likelihood.horizon();
    if planned_soc.values().len() < horizon {
        return Err(PlanError::HorizonMismatch {
            soc: planned_soc.horizon(),
            likelihood: horizon,
        });
    }
    let x = planned_soc.values();
    let lam = likelihood.values();
    let total: f64 = (0..horizon).map(|t| (1.0 - x[t]) * lam[t]).sum();
    Ok(total / horizon as f64)
}
