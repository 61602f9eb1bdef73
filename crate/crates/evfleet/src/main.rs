//! Command-line surface: synthesis, ingestion, plan generation, cooperative
//! optimization, adoption forecasting and report summaries.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use evfleet::engine::Objective;
use evfleet::forecast;
use evfleet::harness::{self, config::ExperimentConfig, experiment, io};
use evfleet::model;

#[derive(Parser)]
#[command(name = "evfleet", version, about = "Decentralized EV fleet charge planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Generate a synthetic commute-pattern trip file.
    Synth(SynthArgs),
    /// Build a fleet from a trip CSV and write it as JSON.
    Ingest(IngestArgs),
    /// Generate charging plans for every agent of a fleet.
    Plangen(PlangenArgs),
    /// Run the cooperative optimization experiment.
    Optimize(OptimizeArgs),
    /// Fit the adoption curve and project fleet peak power.
    Forecast(ForecastArgs),
    /// Summarise a metrics CSV as mean +- deviation lines.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Fleet size.
    #[arg(long)]
    n: usize,
    /// Data horizon in minutes (1440 daily, 10080 weekly).
    #[arg(long, default_value_t = 10080)]
    horizon: usize,
    #[arg(long)]
    seed: u64,
    /// Catalog CSV; the built-in five-model catalog when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Output trip CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    trips: PathBuf,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long, default_value_t = 10080)]
    horizon: usize,
    #[arg(long)]
    seed: u64,
    /// State of charge at the horizon start.
    #[arg(long, default_value_t = 1.0)]
    initial_soc: f64,
    /// Output fleet JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlangenArgs {
    /// Fleet JSON from `ingest`.
    #[arg(long)]
    fleet: PathBuf,
    /// Optimization horizon (chunk length); the fleet horizon when omitted.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 4)]
    v_max: usize,
    #[arg(long, default_value_t = 30)]
    interval_m: usize,
    #[arg(long)]
    seed: u64,
    /// Output plan JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Flat key-value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fleet JSON from `ingest` (alternative to --trips).
    #[arg(long)]
    fleet: Option<PathBuf>,
    /// Trip CSV to ingest on the fly.
    #[arg(long)]
    trips: Option<PathBuf>,
    /// Pre-generated plan JSON from `plangen`.
    #[arg(long)]
    plans: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    objective: Option<Objective>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    participation: Option<f64>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    v_max: Option<usize>,
    #[arg(long)]
    interval_m: Option<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    price: Option<PathBuf>,
    /// Redraw the participating subset every repetition.
    #[arg(long)]
    resample_participants: bool,
    /// Gasoline energy content override, kWh/gallon.
    #[arg(long)]
    kwh_per_gallon: Option<f64>,
    /// Usage-likelihood smoothing width, timesteps.
    #[arg(long)]
    smoothing_width: Option<usize>,
    /// State of charge at the horizon start.
    #[arg(long)]
    initial_soc: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    /// `year,cumulative_sales` CSV; bundled California data when omitted.
    #[arg(long)]
    observations: Option<PathBuf>,
    /// Paradigm contribution as `label=per_ev_kw`; repeatable.
    #[arg(long = "contribution")]
    contributions: Vec<String>,
    #[arg(long, default_value_t = 2016)]
    from_year: i32,
    #[arg(long, default_value_t = 2030)]
    to_year: i32,
    /// Output projection CSV (`year,paradigm,peak_mw`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// metrics.csv produced by `optimize`.
    #[arg(long)]
    metrics: PathBuf,
    /// distribution.csv produced by `optimize`.
    #[arg(long)]
    distribution: Option<PathBuf>,
    /// Output text file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(args) => synth(args),
        Command::Ingest(args) => ingest(args),
        Command::Plangen(args) => plangen(args),
        Command::Optimize(args) => optimize(args),
        Command::Forecast(args) => run_forecast(args),
        Command::Report(args) => report(args),
    }
}

fn load_catalog(path: &Option<PathBuf>) -> Result<Vec<model::EvModel>> {
    match path {
        Some(path) => Ok(io::read_catalog(path)?),
        None => Ok(model::default_catalog()),
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let catalog = load_catalog(&args.catalog)?;
    let fleet = harness::synthesize_fleet(
        args.n,
        args.horizon,
        args.seed,
        &catalog,
        &harness::FleetParams::default(),
    )?;
    let trips: Vec<model::TripRecord> = fleet
        .agents
        .iter()
        .flat_map(|a| a.trips.iter().cloned())
        .collect();
    io::write_trips(&args.out, &trips)?;
    println!(
        "wrote {} trips for {} vehicles to {}",
        trips.len(),
        fleet.agents.len(),
        args.out.display()
    );
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<()> {
    let catalog = load_catalog(&args.catalog)?;
    let params = harness::FleetParams {
        initial_soc: args.initial_soc,
        ..harness::FleetParams::default()
    };
    let fleet = harness::ingest_fleet(&args.trips, &catalog, args.horizon, args.seed, &params)?;
    io::write_fleet(&args.out, &fleet)?;
    println!(
        "ingested {} vehicles over {} timesteps into {}",
        fleet.agents.len(),
        fleet.horizon,
        args.out.display()
    );
    Ok(())
}

fn plangen(args: PlangenArgs) -> Result<()> {
    let fleet = io::read_fleet(&args.fleet)?;
    let horizon = args.horizon.unwrap_or(fleet.horizon);
    if horizon == 0 || fleet.horizon % horizon != 0 {
        bail!(
            "horizon {horizon} does not divide the fleet horizon {}",
            fleet.horizon
        );
    }
    let config = ExperimentConfig {
        horizon,
        v_max: args.v_max,
        interval_m: args.interval_m,
        seed: args.seed,
        ..ExperimentConfig::default()
    };
    let participants = fleet.agent_ids();
    let inputs = experiment::prepare_chunks(&fleet, &config, &participants)?;
    let mut entries = Vec::new();
    for input in inputs {
        for set in input.plan_sets.into_values() {
            entries.push(io::PlanStoreEntry {
                chunk: input.chunk,
                set,
            });
        }
    }
    let store = io::PlanStore {
        horizon,
        chunks: fleet.horizon / horizon,
        resolution_min: fleet.resolution_min,
        v_max: args.v_max,
        interval_m: args.interval_m,
        seed: args.seed,
        entries,
    };
    io::write_plans(&args.out, &store)?;
    println!(
        "wrote {} plan sets ({} chunks) to {}",
        store.entries.len(),
        store.chunks,
        args.out.display()
    );
    Ok(())
}

fn optimize(args: OptimizeArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    config.seed = args.seed;
    if let Some(v) = args.objective {
        config.objective = v;
    }
    if let Some(v) = args.horizon {
        config.horizon = v;
    }
    if let Some(v) = args.participation {
        config.participation = v;
    }
    if let Some(v) = args.repetitions {
        config.repetitions = v;
    }
    if let Some(v) = args.v_max {
        config.v_max = v;
    }
    if let Some(v) = args.interval_m {
        config.interval_m = v;
    }
    if let Some(v) = &args.price {
        config.price_path = Some(v.clone());
    }
    if let Some(v) = &args.trips {
        config.trips_path = Some(v.clone());
    }
    if let Some(v) = &args.catalog {
        config.catalog_path = Some(v.clone());
    }
    if args.resample_participants {
        config.resample_participants = true;
    }
    if let Some(v) = args.kwh_per_gallon {
        config.kwh_per_gallon = v;
    }
    if let Some(v) = args.smoothing_width {
        config.smoothing_width = v;
    }
    if let Some(v) = args.initial_soc {
        config.initial_soc = v;
    }

    let fleet = match (&args.fleet, &config.trips_path) {
        (Some(path), _) => io::read_fleet(path)?,
        (None, Some(trips)) => {
            let catalog = load_catalog(&config.catalog_path)?;
            let params = harness::FleetParams {
                initial_soc: config.initial_soc,
                kwh_per_gallon: config.kwh_per_gallon,
                smoothing_width: config.smoothing_width,
            };
            let horizon = fleet_horizon_hint(trips)?.max(config.horizon);
            harness::ingest_fleet(trips, &catalog, horizon, config.seed, &params)?
        }
        (None, None) => bail!("either --fleet or --trips (or trips_path in the config) is required"),
    };

    let store = match &args.plans {
        Some(path) => Some(io::read_plans(path)?),
        None => None,
    };
    let result = match &store {
        Some(s) => {
            let participants = experiment::select_participants(
                &fleet,
                config.participation,
                config.seed,
                None,
            );
            // Surface store/fleet mismatches before the run.
            experiment::prepare_chunks_from_store(&fleet, &config, &participants, s)?;
            harness::run_experiment_with_plans(&config, &fleet, Some(s))?
        }
        None => harness::run_experiment(&config, &fleet)?,
    };
    io::write_experiment_outputs(&args.out_dir, &result)?;
    print!("{}", result.summary());
    println!("outputs written to {}", args.out_dir.display());
    Ok(())
}

/// Smallest multiple of the daily horizon covering every trip in the file.
fn fleet_horizon_hint(path: &Path) -> Result<usize> {
    let rows = io::read_trips(path)?;
    let max_end = rows.iter().map(|(_, t)| t.end).max().unwrap_or(0);
    Ok(max_end.div_ceil(1440).max(1) * 1440)
}

fn run_forecast(args: ForecastArgs) -> Result<()> {
    let observations = match &args.observations {
        Some(path) => io::read_observations(path)?,
        None => forecast::default_sales_observations(),
    };
    let report = forecast::fit_adoption(&observations)?;
    println!(
        "fitted adoption curve: cap = {:.4e} vehicles, rate = {:.4} per year, midpoint = {:.2} \
         (rms residual {:.3e}, {} iterations)",
        report.curve.cap,
        report.curve.rate_per_year,
        report.curve.midpoint_year,
        report.residual_rms,
        report.iterations
    );

    let mut contributions = Vec::new();
    for spec in &args.contributions {
        let (label, value) = spec
            .split_once('=')
            .with_context(|| format!("expected label=per_ev_kw, got {spec:?}"))?;
        let per_ev: f64 = value
            .parse()
            .with_context(|| format!("bad per-EV contribution {value:?}"))?;
        contributions.push(forecast::ParadigmContribution::new(label, per_ev)?);
    }
    if contributions.is_empty() {
        println!("no --contribution given; skipping projections");
        return Ok(());
    }
    if args.to_year < args.from_year {
        bail!("--to-year precedes --from-year");
    }

    let mut lines = vec!["year,paradigm,peak_mw".to_string()];
    for year in args.from_year..=args.to_year {
        for contribution in &contributions {
            let mw = forecast::project_peak_power(&report.curve, contribution, f64::from(year));
            lines.push(format!("{year},{},{mw}", contribution.paradigm));
        }
    }
    let text = lines.join("\n") + "\n";
    match &args.out {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            println!("projections written to {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut reader = csv::Reader::from_path(&args.metrics)
        .with_context(|| format!("opening {}", args.metrics.display()))?;
    let headers = reader.headers()?.clone();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record?;
        for (column, field) in columns.iter_mut().zip(record.iter()) {
            column.push(field.parse().unwrap_or(f64::NAN));
        }
    }
    if columns.first().is_none_or(Vec::is_empty) {
        bail!("{} holds no repetition rows", args.metrics.display());
    }
    let mut out = String::new();
    out.push_str(&format!("repetitions: {}\n", columns[0].len()));
    for (name, values) in headers.iter().zip(&columns).skip(1) {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let sigma = evfleet::metrics::population_std(values);
        out.push_str(&format!("{name}: mean {mean:.6} +- {sigma:.6}\n"));
    }
    if let Some(path) = &args.distribution {
        let mut reader =
            csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        out.push_str("plan selection probabilities:\n");
        for record in reader.records() {
            let record = record?;
            out.push_str(&format!(
                "  plan {}: {}\n",
                record.get(0).unwrap_or("?"),
                record.get(1).unwrap_or("?")
            ));
        }
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, &out).with_context(|| format!("writing {}", path.display()))?;
            println!("report written to {}", path.display());
        }
        None => print!("{out}"),
    }
    Ok(())
}
