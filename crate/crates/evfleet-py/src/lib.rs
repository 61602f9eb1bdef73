//! Python bindings: fleets, plan generation, cooperative optimization and
//! adoption forecasting driven from Python in-process.
//!
//! Usage from Python:
//!
//!     import evfleet_py as ev
//!     fleet = ev.Fleet.synthesize(n=130, horizon=10080, seed=42)
//!     result = ev.run_experiment(fleet, objective="min-dev", horizon=1440,
//!                                repetitions=10, seed=42)
//!     print(result.mean_sigma_reduction())

use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

use evfleet::engine::Objective;
use evfleet::forecast;
use evfleet::harness::{self, ExperimentConfig, FleetParams, FleetScenario};
use evfleet::model;
use evfleet::plangen;

fn value_err(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

/// A production EV model.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct EvModel {
    inner: model::EvModel,
}

#[pymethods]
impl EvModel {
    #[new]
    fn new(
        name: String,
        mpg_city: f64,
        mpg_highway: f64,
        battery_kwh: f64,
        charge_rate_kw: f64,
        market_share: f64,
    ) -> Self {
        Self {
            inner: model::EvModel::new(
                name,
                mpg_city,
                mpg_highway,
                battery_kwh,
                charge_rate_kw,
                market_share,
            ),
        }
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn mpg_city(&self) -> f64 {
        self.inner.mpg_city
    }

    #[getter]
    fn mpg_highway(&self) -> f64 {
        self.inner.mpg_highway
    }

    #[getter]
    fn battery_kwh(&self) -> f64 {
        self.inner.battery_capacity_kwh
    }

    #[getter]
    fn charge_rate_kw(&self) -> f64 {
        self.inner.charge_rate_kw
    }

    #[getter]
    fn market_share(&self) -> f64 {
        self.inner.market_share
    }

    fn __repr__(&self) -> String {
        format!(
            "EvModel({:?}, {} kWh, {} kW)",
            self.inner.name, self.inner.battery_capacity_kwh, self.inner.charge_rate_kw
        )
    }
}

/// The built-in five-model catalog.
#[pyfunction]
fn default_catalog() -> Vec<EvModel> {
    model::default_catalog()
        .into_iter()
        .map(|inner| EvModel { inner })
        .collect()
}

/// Energy drawn by one trip, kWh.
#[pyfunction]
fn trip_energy(speed_mph: f64, duration_h: f64, model: &EvModel) -> PyResult<f64> {
    model::trip_energy_kwh(speed_mph, duration_h, &model.inner).map_err(value_err)
}

/// A fleet of vehicles with their state-of-charge and usage signals.
#[pyclass]
struct Fleet {
    inner: FleetScenario,
}

impl Fleet {
    fn agent(&self, agent_id: &str) -> PyResult<&harness::AgentRecord> {
        self.inner
            .agent(agent_id)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown agent {agent_id:?}")))
    }
}

#[pymethods]
impl Fleet {
    /// Synthesize a commute-pattern fleet.
    #[staticmethod]
    #[pyo3(signature = (n, horizon, seed, catalog=None))]
    fn synthesize(
        n: usize,
        horizon: usize,
        seed: u64,
        catalog: Option<Vec<EvModel>>,
    ) -> PyResult<Self> {
        let catalog = catalog
            .map(|c| c.into_iter().map(|m| m.inner).collect())
            .unwrap_or_else(model::default_catalog);
        let inner =
            harness::synthesize_fleet(n, horizon, seed, &catalog, &FleetParams::default())
                .map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Ingest a trip CSV (`vehicle_id,start_min,end_min,avg_speed_mph,destination`).
    #[staticmethod]
    #[pyo3(signature = (trips_path, horizon, seed, catalog=None))]
    fn from_csv(
        trips_path: PathBuf,
        horizon: usize,
        seed: u64,
        catalog: Option<Vec<EvModel>>,
    ) -> PyResult<Self> {
        let catalog = catalog
            .map(|c| c.into_iter().map(|m| m.inner).collect())
            .unwrap_or_else(model::default_catalog);
        let inner = harness::ingest_fleet(
            &trips_path,
            &catalog,
            horizon,
            seed,
            &FleetParams::default(),
        )
        .map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon
    }

    fn agent_ids(&self) -> Vec<String> {
        self.inner.agent_ids()
    }

    fn model_name(&self, agent_id: &str) -> PyResult<String> {
        Ok(self.agent(agent_id)?.model.name.clone())
    }

    /// State-of-charge values of one agent (length horizon + 1).
    fn soc(&self, agent_id: &str) -> PyResult<Vec<f64>> {
        Ok(self.agent(agent_id)?.signal.values().to_vec())
    }

    /// Usage likelihood of one agent over the data horizon.
    fn likelihood(&self, agent_id: &str) -> PyResult<Vec<f64>> {
        Ok(self.agent(agent_id)?.likelihood.values().to_vec())
    }

    /// Flexibility windows of one agent as `(start, end, soc_at_start)`.
    fn windows(&self, agent_id: &str) -> PyResult<Vec<(usize, usize, f64)>> {
        let agent = self.agent(agent_id)?;
        Ok(plangen::compute_windows(&agent.signal, &agent.model)
            .into_iter()
            .map(|w| (w.start, w.end, w.soc_at_start))
            .collect())
    }

    /// Fleet demand when every vehicle charges immediately on parking, kW.
    fn control_curve(&self) -> Vec<f64> {
        let mut curve = vec![0.0; self.inner.horizon];
        for agent in &self.inner.agents {
            let demand = plangen::demand_from_soc(&agent.signal, agent.model.charge_power_kw);
            for (acc, v) in curve.iter_mut().zip(&demand) {
                *acc += v;
            }
        }
        curve
    }

    fn __len__(&self) -> usize {
        self.inner.agents.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Fleet({} agents, horizon {})",
            self.inner.agents.len(),
            self.inner.horizon
        )
    }
}

/// The alternative charging plans of one agent.
#[pyclass]
struct PlanSet {
    inner: plangen::PlanSet,
}

#[pymethods]
impl PlanSet {
    #[getter]
    fn agent_id(&self) -> String {
        self.inner.agent_id.clone()
    }

    /// Number of plans.
    #[getter]
    fn v(&self) -> usize {
        self.inner.v()
    }

    /// Demand values of plan `j` (1-based), kW per timestep.
    fn values(&self, j: usize) -> PyResult<Vec<f64>> {
        self.plan(j).map(|p| p.values.clone())
    }

    fn discomfort(&self, j: usize) -> PyResult<f64> {
        self.plan(j).map(|p| p.discomfort)
    }

    fn planned_soc(&self, j: usize) -> PyResult<Vec<f64>> {
        self.plan(j).map(|p| p.planned_soc.values().to_vec())
    }
}

impl PlanSet {
    fn plan(&self, j: usize) -> PyResult<&plangen::DemandPlan> {
        if j == 0 || j > self.inner.plans.len() {
            return Err(PyValueError::new_err(format!(
                "plan index {j} outside 1..={}",
                self.inner.plans.len()
            )));
        }
        Ok(&self.inner.plans[j - 1])
    }
}

/// Generate the charging plans of one agent.
#[pyfunction]
#[pyo3(signature = (fleet, agent_id, seed, interval_m=30, v_max=4))]
fn generate_plans(
    fleet: &Fleet,
    agent_id: &str,
    seed: u64,
    interval_m: usize,
    v_max: usize,
) -> PyResult<PlanSet> {
    let agent = fleet.agent(agent_id)?;
    let inner = plangen::PlanSet::generate(
        agent_id,
        &agent.signal,
        &agent.likelihood,
        &agent.model,
        interval_m,
        v_max,
        seed,
    )
    .map_err(value_err)?;
    Ok(PlanSet { inner })
}

/// Per-repetition metrics of one experiment.
#[pyclass]
struct ExperimentSummary {
    #[pyo3(get)]
    control_sigma_kw: f64,
    #[pyo3(get)]
    control_cost_usd: f64,
    #[pyo3(get)]
    control_peak_kw: f64,
    #[pyo3(get)]
    sigma_kw: Vec<f64>,
    #[pyo3(get)]
    cost_usd: Vec<f64>,
    #[pyo3(get)]
    peak_kw: Vec<f64>,
    #[pyo3(get)]
    mean_discomfort: Vec<f64>,
    #[pyo3(get)]
    fairness: Vec<f64>,
    #[pyo3(get)]
    rel_sigma_reduction: Vec<f64>,
    #[pyo3(get)]
    rel_cost_reduction: Vec<f64>,
    #[pyo3(get)]
    selection_distribution: Vec<f64>,
    #[pyo3(get)]
    participants: Vec<String>,
    #[pyo3(get)]
    control_curve: Vec<f64>,
    curves: Vec<Vec<f64>>,
}

#[pymethods]
impl ExperimentSummary {
    fn mean_sigma_reduction(&self) -> f64 {
        self.rel_sigma_reduction.iter().sum::<f64>() / self.rel_sigma_reduction.len() as f64
    }

    /// Demand curve of repetition `rep`, kW.
    fn curve(&self, rep: usize) -> PyResult<Vec<f64>> {
        self.curves
            .get(rep)
            .cloned()
            .ok_or_else(|| PyValueError::new_err(format!("repetition {rep} out of range")))
    }

    fn __repr__(&self) -> String {
        format!(
            "ExperimentSummary({} repetitions, mean sigma reduction {:.3})",
            self.sigma_kw.len(),
            self.mean_sigma_reduction()
        )
    }
}

/// Run the cooperative optimization experiment over a fleet.
#[pyfunction]
#[pyo3(signature = (fleet, seed, objective="min-dev", horizon=None, participation=1.0,
                    repetitions=10, v_max=4, interval_m=30, price_path=None))]
#[allow(clippy::too_many_arguments)]
fn run_experiment(
    fleet: &Fleet,
    seed: u64,
    objective: &str,
    horizon: Option<usize>,
    participation: f64,
    repetitions: usize,
    v_max: usize,
    interval_m: usize,
    price_path: Option<PathBuf>,
) -> PyResult<ExperimentSummary> {
    let objective: Objective = objective.parse().map_err(PyValueError::new_err)?;
    let config = ExperimentConfig {
        horizon: horizon.unwrap_or(fleet.inner.horizon),
        objective,
        participation,
        repetitions,
        v_max,
        interval_m,
        seed,
        price_path,
        ..ExperimentConfig::default()
    };
    let result = harness::run_experiment(&config, &fleet.inner).map_err(value_err)?;
    let take = |f: &dyn Fn(&harness::RepetitionResult) -> f64| -> Vec<f64> {
        result.repetitions.iter().map(f).collect()
    };
    Ok(ExperimentSummary {
        control_sigma_kw: result.control_metrics.sigma_kw,
        control_cost_usd: result.control_metrics.cost_usd,
        control_peak_kw: result.control_metrics.peak_kw,
        sigma_kw: take(&|r| r.metrics.sigma_kw),
        cost_usd: take(&|r| r.metrics.cost_usd),
        peak_kw: take(&|r| r.metrics.peak_kw),
        mean_discomfort: take(&|r| r.metrics.mean_discomfort),
        fairness: take(&|r| r.metrics.fairness),
        rel_sigma_reduction: take(&|r| r.metrics.relative_sigma_reduction),
        rel_cost_reduction: take(&|r| r.metrics.relative_cost_reduction),
        selection_distribution: result.selection_distribution.clone(),
        participants: result.participants.clone(),
        control_curve: result.control_curve.clone(),
        curves: result.repetitions.iter().map(|r| r.curve.clone()).collect(),
    })
}

/// Fit the logistic adoption curve to `(year, cumulative_sales)` pairs.
/// Returns `(cap, rate_per_year, midpoint_year, residual_rms)`.
#[pyfunction]
fn fit_adoption(observations: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64, f64)> {
    let report = forecast::fit_adoption(&observations).map_err(value_err)?;
    Ok((
        report.curve.cap,
        report.curve.rate_per_year,
        report.curve.midpoint_year,
        report.residual_rms,
    ))
}

/// Bundled California sales and policy anchors.
#[pyfunction]
fn default_sales_observations() -> Vec<(f64, f64)> {
    forecast::default_sales_observations()
}

/// Cumulative adoption at `year` under a logistic curve.
#[pyfunction]
fn logistic_sales(cap: f64, rate_per_year: f64, midpoint_year: f64, year: f64) -> f64 {
    forecast::logistic_sales(
        &forecast::AdoptionCurve {
            cap,
            rate_per_year,
            midpoint_year,
        },
        year,
    )
}

/// Projected fleet peak power in MW.
#[pyfunction]
fn project_peak_power(
    cap: f64,
    rate_per_year: f64,
    midpoint_year: f64,
    per_ev_peak_kw: f64,
    year: f64,
) -> PyResult<f64> {
    let contribution =
        forecast::ParadigmContribution::new("custom", per_ev_peak_kw).map_err(value_err)?;
    Ok(forecast::project_peak_power(
        &forecast::AdoptionCurve {
            cap,
            rate_per_year,
            midpoint_year,
        },
        &contribution,
        year,
    ))
}

/// Mean per-agent discomfort.
#[pyfunction]
fn system_discomfort(discomforts: Vec<f64>) -> PyResult<f64> {
    evfleet::metrics::system_discomfort(&discomforts).map_err(value_err)
}

/// `1 - sigma` of the per-agent discomforts.
#[pyfunction]
fn fairness(discomforts: Vec<f64>) -> PyResult<f64> {
    evfleet::metrics::fairness(&discomforts).map_err(value_err)
}

#[pymodule]
fn evfleet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<EvModel>()?;
    m.add_class::<Fleet>()?;
    m.add_class::<PlanSet>()?;
    m.add_class::<ExperimentSummary>()?;
    m.add_function(wrap_pyfunction!(default_catalog, m)?)?;
    m.add_function(wrap_pyfunction!(trip_energy, m)?)?;
    m.add_function(wrap_pyfunction!(generate_plans, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(fit_adoption, m)?)?;
    m.add_function(wrap_pyfunction!(default_sales_observations, m)?)?;
    m.add_function(wrap_pyfunction!(logistic_sales, m)?)?;
    m.add_function(wrap_pyfunction!(project_peak_power, m)?)?;
    m.add_function(wrap_pyfunction!(system_discomfort, m)?)?;
    m.add_function(wrap_pyfunction!(fairness, m)?)?;
    Ok(())
}
