//! File formats: trip and catalog CSVs, the plan interchange file, price
//! signals and experiment outputs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::PriceSignal;
use crate::model::{Destination, EvModel, TripRecord};
use crate::plangen::PlanSet;

use super::experiment::ExperimentResult;
use super::fleet::FleetScenario;
use super::HarnessError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn schema_err(path: &Path, row: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Schema {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

/// Reads `vehicle_id,start_min,end_min,avg_speed_mph,destination` rows.
/// Returns `(row_number, trip)` pairs; row numbers count from 1 after the
/// header, and every violation names its row.
pub fn read_trips(path: &Path) -> Result<Vec<(usize, TripRecord)>, HarnessError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| schema_err(path, 0, e.to_string()))?
        .clone();
    let expected = ["vehicle_id", "start_min", "end_min", "avg_speed_mph", "destination"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(schema_err(
            path,
            0,
            format!("expected header {expected:?}, got {headers:?}"),
        ));
    }
    let mut trips = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let row = index + 1;
        let record = record.map_err(|e| schema_err(path, row, e.to_string()))?;
        if record.len() != expected.len() {
            return Err(schema_err(
                path,
                row,
                format!("expected {} fields, got {}", expected.len(), record.len()),
            ));
        }
        let field = |i: usize| record.get(i).unwrap_or_default();
        let start: usize = field(1)
            .parse()
            .map_err(|_| schema_err(path, row, format!("bad start_min {:?}", field(1))))?;
        let end: usize = field(2)
            .parse()
            .map_err(|_| schema_err(path, row, format!("bad end_min {:?}", field(2))))?;
        let speed: f64 = field(3)
            .parse()
            .map_err(|_| schema_err(path, row, format!("bad avg_speed_mph {:?}", field(3))))?;
        let destination: Destination = field(4)
            .parse()
            .map_err(|message: String| schema_err(path, row, message))?;
        if field(0).is_empty() {
            return Err(schema_err(path, row, "empty vehicle_id"));
        }
        if end <= start {
            return Err(schema_err(path, row, format!("end_min {end} <= start_min {start}")));
        }
        if !(speed.is_finite() && speed >= 0.0) {
            return Err(schema_err(path, row, format!("negative or non-finite speed {speed}")));
        }
        trips.push((
            row,
            TripRecord {
                vehicle_id: field(0).to_string(),
                start,
                end,
                avg_speed_mph: speed,
                destination,
            },
        ));
    }
    Ok(trips)
}

pub fn write_trips(path: &Path, trips: &[TripRecord]) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    writer
        .write_record(["vehicle_id", "start_min", "end_min", "avg_speed_mph", "destination"])
        .map_err(|e| schema_err(path, 0, e.to_string()))?;
    for trip in trips {
        writer
            .write_record([
                trip.vehicle_id.as_str(),
                &trip.start.to_string(),
                &trip.end.to_string(),
                &trip.avg_speed_mph.to_string(),
                &trip.destination.to_string(),
            ])
            .map_err(|e| schema_err(path, 0, e.to_string()))?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads `name,mpg_city,mpg_highway,battery_kwh,charge_rate_kw,market_share`.
pub fn read_catalog(path: &Path) -> Result<Vec<EvModel>, HarnessError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut catalog = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let row = index + 1;
        let record = record.map_err(|e| schema_err(path, row, e.to_string()))?;
        if record.len() != 6 {
            return Err(schema_err(path, row, format!("expected 6 fields, got {}", record.len())));
        }
        let field = |i: usize| record.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64, HarnessError> {
            field(i)
                .parse()
                .map_err(|_| schema_err(path, row, format!("bad number {:?}", field(i))))
        };
        catalog.push(EvModel::new(
            field(0),
            num(1)?,
            num(2)?,
            num(3)?,
            num(4)?,
            num(5)?,
        ));
    }
    crate::model::validate_catalog(&catalog)?;
    Ok(catalog)
}

pub fn write_catalog(path: &Path, catalog: &[EvModel]) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    writer
        .write_record(["name", "mpg_city", "mpg_highway", "battery_kwh", "charge_rate_kw", "market_share"])
        .map_err(|e| schema_err(path, 0, e.to_string()))?;
    for model in catalog {
        writer
            .write_record([
                model.name.as_str(),
                &model.mpg_city.to_string(),
                &model.mpg_highway.to_string(),
                &model.battery_capacity_kwh.to_string(),
                &model.charge_rate_kw.to_string(),
                &model.market_share.to_string(),
            ])
            .map_err(|e| schema_err(path, 0, e.to_string()))?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

/// Reads a `t,usd_per_kwh` price CSV covering `horizon` timesteps.
pub fn read_price(path: &Path, horizon: usize) -> Result<PriceSignal, HarnessError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut values = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let row = index + 1;
        let record = record.map_err(|e| schema_err(path, row, e.to_string()))?;
        let value: f64 = record
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|_| schema_err(path, row, "bad usd_per_kwh"))?;
        values.push(value);
    }
    if values.len() != horizon {
        return Err(HarnessError::Format {
            path: path.to_path_buf(),
            message: format!("price covers {} timesteps, fleet horizon is {horizon}", values.len()),
        });
    }
    Ok(PriceSignal::new(values)?)
}

/// Synthetic two-peak diurnal spot price, USD/kWh, tiled over the horizon.
pub fn default_price(horizon: usize, resolution_min: u32) -> PriceSignal {
    let values = (0..horizon)
        .map(|t| {
            let hour = (t as f64 * f64::from(resolution_min) / 60.0) % 24.0;
            let bump = |center: f64, width: f64, height: f64| {
                height * (-((hour - center) / width).powi(2)).exp()
            };
            0.08 + bump(8.5, 1.5, 0.05) + bump(19.0, 2.0, 0.07)
        })
        .collect();
    PriceSignal::new(values).expect("synthetic prices are non-negative")
}

/// Plan interchange between the plan-generation and optimization stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStore {
    /// Optimization horizon (chunk length), timesteps.
    pub horizon: usize,
    /// Number of consecutive chunks covering the data horizon.
    pub chunks: usize,
    pub resolution_min: u32,
    pub v_max: usize,
    pub interval_m: usize,
    pub seed: u64,
    pub entries: Vec<PlanStoreEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStoreEntry {
    pub chunk: usize,
    pub set: PlanSet,
}

pub fn write_plans(path: &Path, store: &PlanStore) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    serde_json::to_writer(BufWriter::new(file), store).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_plans(path: &Path) -> Result<PlanStore, HarnessError> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_fleet(path: &Path, fleet: &FleetScenario) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    serde_json::to_writer(BufWriter::new(file), fleet).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_fleet(path: &Path) -> Result<FleetScenario, HarnessError> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| HarnessError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes metrics.csv, distribution.csv, selections.csv, curves.csv,
/// control_curve.csv and metadata.txt under `out_dir`.
pub fn write_experiment_outputs(
    out_dir: &Path,
    result: &ExperimentResult,
) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let metrics_path = out_dir.join("metrics.csv");
    {
        let file = File::create(&metrics_path).map_err(io_err(&metrics_path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record([
            "rep",
            "sigma_kw",
            "cost_usd",
            "peak_kw",
            "mean_discomfort",
            "fairness",
            "rel_sigma_reduction",
            "rel_cost_reduction",
            "env_discomfort_lo",
            "env_discomfort_hi",
            "env_fairness_lo",
            "env_fairness_hi",
        ])
        .map_err(|e| schema_err(&metrics_path, 0, e.to_string()))?;
        for rep in &result.repetitions {
            let m = &rep.metrics;
            w.write_record([
                rep.rep.to_string(),
                m.sigma_kw.to_string(),
                m.cost_usd.to_string(),
                m.peak_kw.to_string(),
                m.mean_discomfort.to_string(),
                m.fairness.to_string(),
                m.relative_sigma_reduction.to_string(),
                m.relative_cost_reduction.to_string(),
                rep.envelope_discomfort_lo.to_string(),
                rep.envelope_discomfort_hi.to_string(),
                rep.envelope_fairness_lo.to_string(),
                rep.envelope_fairness_hi.to_string(),
            ])
            .map_err(|e| schema_err(&metrics_path, 0, e.to_string()))?;
        }
        w.flush().map_err(io_err(&metrics_path))?;
    }

    let dist_path = out_dir.join("distribution.csv");
    {
        let file = File::create(&dist_path).map_err(io_err(&dist_path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["plan_index", "probability"])
            .map_err(|e| schema_err(&dist_path, 0, e.to_string()))?;
        for (index, p) in result.selection_distribution.iter().enumerate() {
            w.write_record([(index + 1).to_string(), p.to_string()])
                .map_err(|e| schema_err(&dist_path, 0, e.to_string()))?;
        }
        w.flush().map_err(io_err(&dist_path))?;
    }

    let sel_path = out_dir.join("selections.csv");
    {
        let file = File::create(&sel_path).map_err(io_err(&sel_path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["rep", "chunk", "agent_id", "plan_index"])
            .map_err(|e| schema_err(&sel_path, 0, e.to_string()))?;
        for rep in &result.repetitions {
            for ((chunk, agent), index) in &rep.selections {
                w.write_record([
                    rep.rep.to_string(),
                    chunk.to_string(),
                    agent.clone(),
                    index.to_string(),
                ])
                .map_err(|e| schema_err(&sel_path, 0, e.to_string()))?;
            }
        }
        w.flush().map_err(io_err(&sel_path))?;
    }

    let curves_path = out_dir.join("curves.csv");
    {
        let file = File::create(&curves_path).map_err(io_err(&curves_path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["rep", "t", "kw"])
            .map_err(|e| schema_err(&curves_path, 0, e.to_string()))?;
        for rep in &result.repetitions {
            for (t, kw) in rep.curve.iter().enumerate() {
                w.write_record([rep.rep.to_string(), t.to_string(), kw.to_string()])
                    .map_err(|e| schema_err(&curves_path, 0, e.to_string()))?;
            }
        }
        w.flush().map_err(io_err(&curves_path))?;
    }

    let control_path = out_dir.join("control_curve.csv");
    {
        let file = File::create(&control_path).map_err(io_err(&control_path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["t", "kw"])
            .map_err(|e| schema_err(&control_path, 0, e.to_string()))?;
        for (t, kw) in result.control_curve.iter().enumerate() {
            w.write_record([t.to_string(), kw.to_string()])
                .map_err(|e| schema_err(&control_path, 0, e.to_string()))?;
        }
        w.flush().map_err(io_err(&control_path))?;
    }

    let meta_path = out_dir.join("metadata.txt");
    {
        let file = File::create(&meta_path).map_err(io_err(&meta_path))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "evfleet {}", env!("CARGO_PKG_VERSION")).map_err(io_err(&meta_path))?;
        writeln!(w, "objective = {}", result.config.objective).map_err(io_err(&meta_path))?;
        writeln!(w, "horizon = {}", result.config.horizon).map_err(io_err(&meta_path))?;
        writeln!(w, "participation = {}", result.config.participation)
            .map_err(io_err(&meta_path))?;
        writeln!(w, "repetitions = {}", result.config.repetitions).map_err(io_err(&meta_path))?;
        writeln!(w, "v_max = {}", result.config.v_max).map_err(io_err(&meta_path))?;
        writeln!(w, "interval_m = {}", result.config.interval_m).map_err(io_err(&meta_path))?;
        writeln!(w, "seed = {}", result.config.seed).map_err(io_err(&meta_path))?;
        writeln!(
            w,
            "resample_participants = {}",
            result.config.resample_participants
        )
        .map_err(io_err(&meta_path))?;
        writeln!(
            w,
            "seed derivation: splitmix64(seed + stream * 0x9E3779B97F4A7C15); \
             streams: repetition 1<<40 + rep, agent plans 2<<40 + agent_index*16 + chunk, \
             participants 3<<40 (+ rep when resampling), synthesis 4<<40 + agent_index, \
             model assignment 5<<40"
        )
        .map_err(io_err(&meta_path))?;
        writeln!(w, "participants = {}", result.participants.join(","))
            .map_err(io_err(&meta_path))?;
        writeln!(
            w,
            "control: sigma_kw = {}, cost_usd = {}, peak_kw = {}",
            result.control_metrics.sigma_kw,
            result.control_metrics.cost_usd,
            result.control_metrics.peak_kw
        )
        .map_err(io_err(&meta_path))?;
        w.flush().map_err(io_err(&meta_path))?;
    }
    Ok(())
}

/// Reads `year,cumulative_sales` observation rows.
pub fn read_observations(path: &Path) -> Result<Vec<(f64, f64)>, HarnessError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut observations = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let row = index + 1;
        let record = record.map_err(|e| schema_err(path, row, e.to_string()))?;
        let year: f64 = record
            .get(0)
            .unwrap_or_default()
            .parse()
            .map_err(|_| schema_err(path, row, "bad year"))?;
        let sales: f64 = record
            .get(1)
            .unwrap_or_default()
            .parse()
            .map_err(|_| schema_err(path, row, "bad cumulative_sales"))?;
        observations.push((year, sales));
    }
    Ok(observations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_catalog;

    #[test]
    fn trips_round_trip_and_row_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trips.csv");
        let trips = vec![TripRecord {
            vehicle_id: "v1".into(),
            start: 100,
            end: 160,
            avg_speed_mph: 31.5,
            destination: Destination::Work,
        }];
        write_trips(&path, &trips).unwrap();
        let read = read_trips(&path).unwrap();
        assert_eq!(read.len(), 1);
        assert_eq!(read[0].1, trips[0]);

        std::fs::write(
            &path,
            "vehicle_id,start_min,end_min,avg_speed_mph,destination\nv1,100,90,30,work\n",
        )
        .unwrap();
        let err = read_trips(&path).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("row 1"), "{text}");
    }

    #[test]
    fn catalog_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.csv");
        let catalog = default_catalog();
        write_catalog(&path, &catalog).unwrap();
        let read = read_catalog(&path).unwrap();
        assert_eq!(read, catalog);
    }

    #[test]
    fn default_price_is_diurnal_and_non_negative() {
        let price = default_price(2880, 1);
        assert_eq!(price.horizon(), 2880);
        let values = price.values();
        // Same shape on both days.
        assert_eq!(values[100], values[1540]);
        let evening = values[19 * 60];
        let night = values[3 * 60];
        assert!(evening > night);
    }
}
