//! Acceptance gate: one test per criterion, each printing a pass/fail line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see every line.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evfleet::engine::{
    build_tree, run_optimization, Objective, OptimizationOutcome, PriceSignal, TreeTopology,
};
use evfleet::forecast::{
    default_sales_observations, fit_adoption, project_peak_power, ParadigmContribution,
};
use evfleet::harness::{
    prepare_chunks, run_experiment, synthesize_fleet, ExperimentConfig, ExperimentResult,
    FleetParams,
};
use evfleet::metrics::fairness;
use evfleet::model::{default_catalog, SocSignal};
use evfleet::plangen::{charge_time, compute_windows, DemandPlan, PlanSet};

fn report(criterion: &str, passed: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// Criterion 1: per-parent brute-force oracle equivalence
// ---------------------------------------------------------------------------

/// Independent population deviation via the moment formula.
fn oracle_sigma(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sq = values.iter().map(|v| v * v).sum::<f64>() / n;
    (sq - mean * mean).max(0.0).sqrt()
}

fn oracle_objective(values: &[f64], price: Option<&[f64]>) -> f64 {
    match price {
        None => oracle_sigma(values),
        Some(p) => values.iter().zip(p).map(|(d, pr)| d * pr).sum(),
    }
}

/// Recomputes every parent decision of `outcome` by exhaustive enumeration,
/// returning the number of mismatching parents.
fn verify_parents(
    topology: &TreeTopology,
    plans: &BTreeMap<String, PlanSet>,
    outcome: &OptimizationOutcome,
    price: Option<&[f64]>,
    horizon: usize,
) -> usize {
    let by_node: BTreeMap<usize, &evfleet::engine::DecisionRecord> =
        outcome.decisions.iter().map(|d| (d.node, d)).collect();
    let mut mismatches = 0;
    fn candidates(
        node: usize,
        topology: &TreeTopology,
        plans: &BTreeMap<String, PlanSet>,
        by_node: &BTreeMap<usize, &evfleet::engine::DecisionRecord>,
        price: Option<&[f64]>,
        horizon: usize,
        mismatches: &mut usize,
    ) -> Vec<Vec<f64>> {
        let children = topology.children(node);
        let child_candidates: Vec<Vec<Vec<f64>>> = children
            .iter()
            .map(|&c| candidates(c, topology, plans, by_node, price, horizon, mismatches))
            .collect();
        let own: Vec<Vec<f64>> = plans[topology.agent(node)]
            .plans
            .iter()
            .map(|p| p.values.clone())
            .collect();

        // Exhaustive enumeration, first-child-major, own plan innermost.
        let mut best = f64::INFINITY;
        let mut best_choice: Vec<usize> = Vec::new();
        let mut best_own = 0usize;
        let mut indices = vec![0usize; children.len()];
        loop {
            let mut combo = vec![0.0f64; horizon];
            for (u, cands) in child_candidates.iter().enumerate() {
                for (acc, v) in combo.iter_mut().zip(&cands[indices[u]]) {
                    *acc += v;
                }
            }
            for (own_index, own_plan) in own.iter().enumerate() {
                let summed: Vec<f64> = combo.iter().zip(own_plan).map(|(a, b)| a + b).collect();
                let value = oracle_objective(&summed, price);
                if value < best {
                    best = value;
                    best_choice = indices.clone();
                    best_own = own_index;
                }
            }
            // Odometer: last child fastest.
            let mut pos = children.len();
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                indices[pos] += 1;
                if indices[pos] < child_candidates[pos].len() {
                    break;
                }
                indices[pos] = 0;
            }
            if children.is_empty() || indices.iter().all(|&i| i == 0) {
                break;
            }
        }

        let record = by_node[&node];
        if record.selection.choice != best_choice
            || record.selection.own_plan != best_own
            || (record.selection.objective - best).abs() > 1e-9 * best.abs().max(1.0)
        {
            *mismatches += 1;
        }

        // Candidates forwarded upward: selected combination plus each own plan.
        let mut chosen = vec![0.0f64; horizon];
        for (u, cands) in child_candidates.iter().enumerate() {
            for (acc, v) in chosen.iter_mut().zip(&cands[record.selection.choice[u]]) {
                *acc += v;
            }
        }
        own.iter()
            .map(|p| chosen.iter().zip(p).map(|(a, b)| a + b).collect())
            .collect()
    }
    candidates(
        topology.root(),
        topology,
        plans,
        &by_node,
        price,
        horizon,
        &mut mismatches,
    );
    mismatches
}

#[test]
fn criterion_1_per_parent_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE5501);
    let mut parents_checked = 0usize;
    let mut mismatches = 0usize;
    for instance in 0..200 {
        let n = rng.random_range(1..=7);
        let v = rng.random_range(1..=4);
        let horizon = rng.random_range(2..=24);
        let ids: Vec<String> = (0..n).map(|i| format!("a{i}")).collect();
        let mut plans = BTreeMap::new();
        for id in &ids {
            let set = PlanSet {
                agent_id: id.clone(),
                plans: (0..v)
                    .map(|j| DemandPlan {
                        values: (0..horizon).map(|_| rng.random_range(0.0..5.0)).collect(),
                        plan_index: j + 1,
                        discomfort: 0.0,
                        planned_soc: SocSignal::new(vec![0.5; horizon + 1], 1).unwrap(),
                    })
                    .collect(),
            };
            plans.insert(id.clone(), set);
        }
        let topology = build_tree(&ids, rng.random()).unwrap();
        let price_values: Vec<f64> = (0..horizon).map(|_| rng.random_range(0.0..2.0)).collect();
        let price = PriceSignal::new(price_values.clone()).unwrap();

        let objective = if instance % 2 == 0 {
            Objective::MinDev
        } else {
            Objective::MinCost
        };
        let outcome =
            run_optimization(&plans, &BTreeMap::new(), &topology, objective, Some(&price))
                .unwrap();
        let price_opt = match objective {
            Objective::MinDev => None,
            Objective::MinCost => Some(price_values.as_slice()),
        };
        mismatches += verify_parents(&topology, &plans, &outcome, price_opt, horizon);
        parents_checked += outcome.decisions.len();
    }
    let elapsed = started.elapsed();
    report(
        "1 (per-parent brute-force oracle)",
        mismatches == 0 && elapsed.as_secs_f64() < 5.0,
        &format!(
            "200 instances, {parents_checked} parent decisions, {mismatches} mismatches, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criteria 2 and 3: energy conservation and plan structure over a generated
// plan corpus
// ---------------------------------------------------------------------------

struct PlanCorpusEntry {
    set: PlanSet,
    charge_power_kw: f64,
    battery_kwh: f64,
    windows: Vec<evfleet::plangen::FlexibilityWindow>,
    interval_m: usize,
}

fn plan_corpus() -> &'static Vec<PlanCorpusEntry> {
    static CORPUS: OnceLock<Vec<PlanCorpusEntry>> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let catalog = default_catalog();
        let mut corpus = Vec::new();
        let mut fleet_seed = 0xC0FFEE;
        while corpus.len() < 1000 {
            let fleet =
                synthesize_fleet(80, 10080, fleet_seed, &catalog, &FleetParams::default())
                    .unwrap();
            let config = ExperimentConfig {
                horizon: 1440,
                seed: fleet_seed,
                ..ExperimentConfig::default()
            };
            let participants = fleet.agent_ids();
            let inputs = prepare_chunks(&fleet, &config, &participants).unwrap();
            for input in inputs {
                let start = input.chunk * config.horizon;
                for (agent_id, set) in input.plan_sets {
                    if corpus.len() >= 1000 {
                        break;
                    }
                    let agent = fleet.agent(&agent_id).unwrap();
                    let signal = agent.signal.slice(start, config.horizon).unwrap();
                    let windows = compute_windows(&signal, &agent.model);
                    corpus.push(PlanCorpusEntry {
                        set,
                        charge_power_kw: agent.model.charge_power_kw,
                        battery_kwh: agent.model.battery_capacity_kwh,
                        windows,
                        interval_m: config.interval_m,
                    });
                }
            }
            fleet_seed += 1;
        }
        corpus
    })
}

#[test]
fn criterion_2_energy_conservation_per_window() {
    let corpus = plan_corpus();
    let mut violations = 0usize;
    let mut windows_checked = 0usize;
    for entry in corpus.iter() {
        let hours_per_step = 1.0 / 60.0;
        let quantum = entry.interval_m as f64 * entry.charge_power_kw * hours_per_step;
        for plan in &entry.set.plans {
            for window in &entry.windows {
                let delivered: f64 = plan.values[window.start..window.end]
                    .iter()
                    .sum::<f64>()
                    * hours_per_step;
                let deficit = (1.0 - window.soc_at_start) * entry.battery_kwh;
                if (delivered - deficit).abs() > quantum + 1e-9 {
                    violations += 1;
                }
                windows_checked += 1;
            }
        }
    }
    report(
        "2 (window energy conservation)",
        violations == 0,
        &format!(
            "{} plan sets, {windows_checked} plan-window pairs, {violations} violations",
            corpus.len()
        ),
    );
}

#[test]
fn criterion_3_plan_structure_matches_soc_transitions() {
    let corpus = plan_corpus();
    let mut violations = 0usize;
    let mut values_checked = 0usize;
    for entry in corpus.iter() {
        for plan in &entry.set.plans {
            let soc = plan.planned_soc.values();
            for (t, &value) in plan.values.iter().enumerate() {
                let rising = soc[t + 1] > soc[t];
                let ok = if rising {
                    value == entry.charge_power_kw
                } else {
                    value == 0.0
                };
                if !ok {
                    violations += 1;
                }
                values_checked += 1;
            }
            // Charging only inside flexibility windows.
            for (t, &value) in plan.values.iter().enumerate() {
                if value != 0.0
                    && !entry.windows.iter().any(|w| w.start <= t && t < w.end)
                {
                    violations += 1;
                }
            }
        }
    }
    report(
        "3 (plan values 0 or charger power, exactly at SoC rises)",
        violations == 0,
        &format!(
            "{} plan sets, {values_checked} values, {violations} violations",
            corpus.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criteria 4 and 5: statistical robustness and envelope containment on the
// 130-agent synthetic fleet
// ---------------------------------------------------------------------------

fn robustness_run() -> &'static (ExperimentResult, f64) {
    static RUN: OnceLock<(ExperimentResult, f64)> = OnceLock::new();
    RUN.get_or_init(|| {
        let started = Instant::now();
        let fleet = synthesize_fleet(
            130,
            10080,
            2026,
            &default_catalog(),
            &FleetParams::default(),
        )
        .unwrap();
        let config = ExperimentConfig {
            horizon: 1440,
            objective: Objective::MinDev,
            participation: 1.0,
            repetitions: 50,
            v_max: 4,
            interval_m: 30,
            seed: 2026,
            ..ExperimentConfig::default()
        };
        let result = run_experiment(&config, &fleet).unwrap();
        (result, started.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_4_min_dev_beats_control_statistically() {
    let (result, elapsed) = robustness_run();
    let reps = result.repetitions.len();
    let below = result
        .repetitions
        .iter()
        .filter(|r| r.metrics.sigma_kw < result.control_metrics.sigma_kw)
        .count();
    let mean_reduction: f64 = result
        .repetitions
        .iter()
        .map(|r| r.metrics.relative_sigma_reduction)
        .sum::<f64>()
        / reps as f64;
    let passed =
        below as f64 >= 0.95 * reps as f64 && mean_reduction > 0.10 && *elapsed < 300.0;
    report(
        "4 (MIN-DEV sigma below control, mean reduction > 10%)",
        passed,
        &format!(
            "{below}/{reps} repetitions below control, mean reduction {:.1}%, {:.1}s",
            100.0 * mean_reduction,
            elapsed
        ),
    );
}

#[test]
fn criterion_5_discomfort_and_fairness_envelopes() {
    let (result, _) = robustness_run();
    let mut discomfort_violations = Vec::new();
    let mut fairness_violations = Vec::new();
    for rep in &result.repetitions {
        let md = rep.metrics.mean_discomfort;
        if !(rep.envelope_discomfort_lo - 1e-12 <= md
            && md <= rep.envelope_discomfort_hi + 1e-12)
        {
            discomfort_violations.push(rep.rep);
        }
        let f = rep.metrics.fairness;
        if !(rep.envelope_fairness_lo - 1e-12 <= f && f <= rep.envelope_fairness_hi + 1e-12) {
            fairness_violations.push(rep.rep);
        }
    }
    if !discomfort_violations.is_empty() {
        println!("  discomfort envelope violated in repetitions {discomfort_violations:?}");
    }
    if !fairness_violations.is_empty() {
        println!("  fairness envelope violated in repetitions {fairness_violations:?}");
    }
    report(
        "5 (envelope containment, plan-1/plan-4 bounds)",
        discomfort_violations.is_empty() && fairness_violations.is_empty(),
        &format!(
            "{} repetitions, {} discomfort violations, {} fairness violations",
            result.repetitions.len(),
            discomfort_violations.len(),
            fairness_violations.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: fairness identity
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_fairness_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xFA1A);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=200);
        let discomforts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let f = fairness(&discomforts).unwrap();
        let sigma = oracle_sigma(&discomforts);
        worst = worst.max((f + sigma - 1.0).abs());
    }
    report(
        "6 (fairness(D) + sigma(D) = 1)",
        worst < 1e-12,
        &format!("1000 vectors, worst deviation {worst:.3e}"),
    );
}

// ---------------------------------------------------------------------------
// Criteria 7 and 8: adoption fit and peak projections
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_adoption_fit_reproduction() {
    let started = Instant::now();
    let fit = fit_adoption(&default_sales_observations()).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    let curve = fit.curve;
    let rate_ok = (curve.rate_per_year - 0.653).abs() <= 0.05;
    let cap_ok = (curve.cap - 1.53e6).abs() <= 0.05 * 1.53e6;
    let mid_ok = (curve.midpoint_year - 2019.0).abs() <= 0.5;
    report(
        "7 (adoption fit: rate 0.653±0.05, cap 1.53e6±5%, midpoint 2019±0.5)",
        rate_ok && cap_ok && mid_ok && elapsed < 1.0,
        &format!(
            "rate {:.4}, cap {:.4e}, midpoint {:.2}, {:.3}s",
            curve.rate_per_year, curve.cap, curve.midpoint_year, elapsed
        ),
    );
}

#[test]
fn criterion_8_peak_projection_reproduction() {
    let started = Instant::now();
    let fit = fit_adoption(&default_sales_observations()).unwrap();
    let control = ParadigmContribution::from_fleet("control", 223.0, 130).unwrap();
    let min_dev = ParadigmContribution::from_fleet("min-dev-100-daily", 119.43, 130).unwrap();
    let control_2025 = project_peak_power(&fit.curve, &control, 2025.0);
    let reduced_2025 = project_peak_power(&fit.curve, &min_dev, 2025.0);
    let reduction = 1.0 - reduced_2025 / control_2025;
    let elapsed = started.elapsed().as_secs_f64();
    let passed = (control_2025 - 2573.0).abs() <= 0.02 * 2573.0
        && reduced_2025 < 1378.0 * 1.02
        && reduction > 0.46
        && elapsed < 1.0;
    report(
        "8 (peak projection: 2573 MW ±2%, cut below 1378 MW × 1.02, > 46%)",
        passed,
        &format!(
            "control {control_2025:.1} MW, min-dev {reduced_2025:.1} MW, reduction {:.1}%, {:.3}s",
            100.0 * reduction,
            elapsed
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: byte-identical optimize reruns
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_optimize_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let trips = dir.path().join("trips.csv");
    let binary = env!("CARGO_BIN_EXE_evfleet");
    let run = |args: &[&str]| {
        let output = std::process::Command::new(binary)
            .args(args)
            .output()
            .expect("binary runs");
        assert!(
            output.status.success(),
            "evfleet {args:?} failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    };
    run(&[
        "synth",
        "--n",
        "12",
        "--horizon",
        "10080",
        "--seed",
        "11",
        "--out",
        trips.to_str().unwrap(),
    ]);
    for out in ["a", "b"] {
        run(&[
            "optimize",
            "--trips",
            trips.to_str().unwrap(),
            "--objective",
            "min-cost",
            "--horizon",
            "1440",
            "--participation",
            "0.75",
            "--repetitions",
            "3",
            "--seed",
            "11",
            "--out-dir",
            dir.path().join(out).to_str().unwrap(),
        ]);
    }
    let mut compared = 0usize;
    let mut identical = true;
    for name in [
        "metrics.csv",
        "distribution.csv",
        "selections.csv",
        "curves.csv",
        "control_curve.csv",
    ] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        identical &= a == b;
        compared += 1;
    }
    report(
        "9 (optimize reruns byte-identical)",
        identical,
        &format!("{compared} output files compared"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: window-algorithm unit suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_window_algorithm_hand_traces() {
    // Model whose full charge from SoC 0.6 takes exactly 3 one-minute steps.
    let model = evfleet::model::EvModel::new("toy", 100.0, 90.0, 1.0, 8.0, 1.0);
    let signal = |values: &[f64]| SocSignal::new(values.to_vec(), 1).unwrap();
    let mut checks = Vec::new();

    let s = signal(&[1.0, 0.8, 0.6, 0.7, 0.8, 0.9, 1.0, 1.0, 0.9]);
    let windows = compute_windows(&s, &model);
    checks.push((
        "hand-traced signal opens one window [2, 7)",
        windows.len() == 1 && windows[0].start == 2 && windows[0].end == 7,
    ));

    let falling = signal(&[1.0, 0.9, 0.8, 0.7, 0.6]);
    checks.push((
        "monotone-decreasing signal has no window",
        compute_windows(&falling, &model).is_empty(),
    ));
    let constant = signal(&[0.5; 10]);
    checks.push((
        "constant signal has no window",
        compute_windows(&constant, &model).is_empty(),
    ));

    // Second rise lasts 2 steps, below the 3-step charge time: excluded.
    let short = signal(&[1.0, 0.8, 0.6, 0.7, 0.8, 0.9, 1.0, 0.8, 0.6, 0.7, 0.75, 0.5]);
    let kept = compute_windows(&short, &model);
    checks.push((
        "sub-charge-time window excluded, ordinals unchanged",
        kept.len() == 1 && kept[0].start == 2 && kept[0].index == 1,
    ));

    checks.push((
        "charge time: full battery 0 steps, Leaf empty 219, half 110",
        charge_time(&model, 1.0, 1) == 0 && {
            let leaf = &default_catalog()[0];
            charge_time(leaf, 0.0, 1) == 219 && charge_time(leaf, 0.5, 1) == 110
        },
    ));

    let failed: Vec<&str> = checks
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(name, _)| *name)
        .collect();
    report(
        "10 (window-algorithm hand traces)",
        failed.is_empty(),
        &format!("{} checks, failed: {failed:?}", checks.len()),
    );
}
