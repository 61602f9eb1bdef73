//! Tree-structured bottom-up cooperative plan selection.
//!
//! Agents sit in a binary tree. Decision-making runs bottom-up and
//! level-by-level: every parent enumerates the Cartesian product of the
//! aggregate plans offered by its children, picks the product element and
//! own plan that minimise the objective, finalises its children's choices,
//! and forwards one candidate aggregate per own plan so that its own choice
//! is settled one level up (at the root, on the spot). Only the accumulated
//! subtree demand enters the objective; no global state is consulted.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::population_std;
use crate::plangen::{DemandPlan, PlanSet};

/// Selection objective: load uniformity or price-weighted cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    MinDev,
    MinCost,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::MinDev => f.write_str("min-dev"),
            Self::MinCost => f.write_str("min-cost"),
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "min-dev" | "mindev" | "dev" => Ok(Self::MinDev),
            "min-cost" | "mincost" | "cost" => Ok(Self::MinCost),
            other => Err(format!("unknown objective {other:?}")),
        }
    }
}

/// Spot price per timestep, USD/kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSignal {
    values: Vec<f64>,
}

impl PriceSignal {
    pub fn new(values: Vec<f64>) -> Result<Self, EngineError> {
        for (index, &value) in values.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(EngineError::NegativePrice { index, value });
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

    pub fn slice(&self, start: usize, len: usize) -> Result<Self, EngineError> {
        if start + len > self.values.len() {
            return Err(EngineError::HorizonMismatch {
                expected: start + len,
                got: self.values.len(),
            });
        }
        Ok(Self {
            values: self.values[start..start + len].to_vec(),
        })
    }
}

/// Agents arranged in a complete binary tree, level order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeTopology {
    order: Vec<String>,
}

impl TreeTopology {
    pub fn node_count(&self) -> usize {
        self.order.len()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn agent(&self, node: usize) -> &str {
        &self.order[node]
    }

    pub fn agents(&self) -> &[String] {
        &self.order
    }

    pub fn children(&self, node: usize) -> Vec<usize> {
        [2 * node + 1, 2 * node + 2]
            .into_iter()
            .filter(|&c| c < self.order.len())
            .collect()
    }
}

/// Shuffles the agents into a complete binary tree, level order.
pub fn build_tree(agent_ids: &[String], seed: u64) -> Result<TreeTopology, EngineError> {
    if agent_ids.is_empty() {
        return Err(EngineError::EmptyAgents);
    }
    let mut seen = BTreeSet::new();
    for id in agent_ids {
        if !seen.insert(id) {
            return Err(EngineError::DuplicateAgent(id.clone()));
        }
    }
    let mut order = agent_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(TreeTopology { order })
}

/// Demand of a subtree: one selected plan per agent in `provenance`, summed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatePlan {
    pub values: Vec<f64>,
    pub provenance: BTreeSet<String>,
}

/// One element of the Cartesian product of the children's aggregate plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationalPlan {
    pub values: Vec<f64>,
    /// Chosen aggregate index per child, in child order.
    pub choice: Vec<usize>,
}

/// All combinations of the children's aggregate plans, summed elementwise.
///
/// Enumeration is first-child-major: the first child's index varies slowest.
/// With no children the product is a single all-zero combination over
/// `horizon` timesteps.
pub fn combine(
    children: &[Vec<AggregatePlan>],
    horizon: usize,
) -> Result<Vec<CombinationalPlan>, EngineError> {
    for list in children {
        if list.is_empty() {
            return Err(EngineError::EmptyPlans);
        }
        for aggregate in list {
            if aggregate.values.len() != horizon {
                return Err(EngineError::HorizonMismatch {
                    expected: horizon,
                    got: aggregate.values.len(),
                });
            }
        }
    }
    let total: usize = children.iter().map(Vec::len).product();
    let mut combos = Vec::with_capacity(total);
    for flat in 0..total {
        let mut choice = vec![0usize; children.len()];
        let mut rem = flat;
        for (u, list) in children.iter().enumerate().rev() {
            choice[u] = rem % list.len();
            rem /= list.len();
        }
        let mut values = vec![0.0; horizon];
        for (u, list) in children.iter().enumerate() {
            for (acc, v) in values.iter_mut().zip(&list[choice[u]].values) {
                *acc += v;
            }
        }
        combos.push(CombinationalPlan { values, choice });
    }
    Ok(combos)
}

/// The pair picked by a parent: a combination of its children's aggregates
/// plus one of its own plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Index of the winning combination in enumeration order.
    pub combo_index: usize,
    /// Per-child aggregate indices of that combination.
    pub choice: Vec<usize>,
    /// 0-based index of the parent's own plan in the pair.
    pub own_plan: usize,
    /// Objective value attained by the pair.
    pub objective: f64,
}

fn select(
    combos: &[CombinationalPlan],
    parent_plans: &[DemandPlan],
    objective: Objective,
    price: Option<&PriceSignal>,
) -> Result<Selection, EngineError> {
    if combos.is_empty() || parent_plans.is_empty() {
        return Err(EngineError::EmptyPlans);
    }
    let horizon = combos[0].values.len();
    let price_values = match objective {
        Objective::MinDev => None,
        Objective::MinCost => {
            let p = price.ok_or(EngineError::MissingPrice)?;
            if p.horizon() != horizon {
                return Err(EngineError::HorizonMismatch {
                    expected: horizon,
                    got: p.horizon(),
                });
            }
            Some(p.values())
        }
    };

    let mut best: Option<Selection> = None;
    let mut summed = vec![0.0; horizon];
    for (combo_index, combo) in combos.iter().enumerate() {
        for (own_plan, plan) in parent_plans.iter().enumerate() {
            if plan.values.len() != horizon {
                return Err(EngineError::HorizonMismatch {
                    expected: horizon,
                    got: plan.values.len(),
                });
            }
            for ((acc, &a), &b) in summed.iter_mut().zip(&combo.values).zip(&plan.values) {
                *acc = a + b;
            }
            let value = match price_values {
                None => population_std(&summed),
                Some(p) => summed.iter().zip(p).map(|(d, pr)| d * pr).sum(),
            };
            // Strict improvement only: ties resolve to the lowest
            // enumeration index (first-child-major, then own plan).
            if best.as_ref().is_none_or(|b| value < b.objective) {
                best = Some(Selection {
                    combo_index,
                    choice: combo.choice.clone(),
                    own_plan,
                    objective: value,
                });
            }
        }
    }
    Ok(best.expect("non-empty inputs yield a selection"))
}

/// Picks the (combination, own plan) pair minimising the standard deviation
/// of the summed demand.
pub fn select_min_dev(
    combos: &[CombinationalPlan],
    parent_plans: &[DemandPlan],
) -> Result<Selection, EngineError> {
    select(combos, parent_plans, Objective::MinDev, None)
}

/// Picks the (combination, own plan) pair minimising the price-weighted
/// demand sum.
pub fn select_min_cost(
    combos: &[CombinationalPlan],
    parent_plans: &[DemandPlan],
    price: &PriceSignal,
) -> Result<Selection, EngineError> {
    select(combos, parent_plans, Objective::MinCost, Some(price))
}

/// What one parent decided, for replay against an exhaustive enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    /// Level-order node index of the parent.
    pub node: usize,
    pub agent_id: String,
    /// Child node indices, in child order.
    pub child_nodes: Vec<usize>,
    pub selection: Selection,
}

/// Result of one bottom-up pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    /// 1-based selected plan index per agent (non-participants report 1).
    pub selections: BTreeMap<String, usize>,
    /// Sum of every agent's selected plan, in ascending agent-id order.
    pub curve: Vec<f64>,
    /// Per-parent decisions in bottom-up processing order.
    pub decisions: Vec<DecisionRecord>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("agent list is empty")]
    EmptyAgents,
    #[error("duplicate agent id {0}")]
    DuplicateAgent(String),
    #[error("empty plan list")]
    EmptyPlans,
    #[error("horizon mismatch: expected {expected} timesteps, got {got}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error("price signal required for the min-cost objective")]
    MissingPrice,
    #[error("price {value} at index {index} is not a finite non-negative number")]
    NegativePrice { index: usize, value: f64 },
    #[error("agent {0} appears in the topology but has no plan set or control plan")]
    MissingPlans(String),
    #[error("agent {0} has both a plan set and a control plan")]
    AmbiguousPlans(String),
    #[error("agents not in the topology: {0:?}")]
    ExtraPlans(Vec<String>),
}

/// Runs the bottom-up pass over a tree.
///
/// Every agent must carry either a plan set (participants) or a fixed
/// control plan treated as a single-plan set (non-participants). Leaves
/// submit their plans upward; each parent combines, selects, notifies its
/// children of their finalised indices and forwards one candidate aggregate
/// per own plan; the root settles its own plan directly. The returned curve
/// is recomputed as the sum of every agent's selected plan in ascending
/// agent-id order, so it can be reproduced exactly from the selection map.
pub fn run_optimization(
    plan_sets: &BTreeMap<String, PlanSet>,
    control_plans: &BTreeMap<String, DemandPlan>,
    topology: &TreeTopology,
    objective: Objective,
    price: Option<&PriceSignal>,
) -> Result<OptimizationOutcome, EngineError> {
    let mut horizon = None;
    let mut plans_of = BTreeMap::new();
    for (id, set) in plan_sets {
        if set.plans.is_empty() {
            return Err(EngineError::EmptyPlans);
        }
        plans_of.insert(id.as_str(), set.plans.as_slice());
    }
    let mut control_storage: BTreeMap<&str, [DemandPlan; 1]> = BTreeMap::new();
    for (id, plan) in control_plans {
        if plans_of.contains_key(id.as_str()) {
            return Err(EngineError::AmbiguousPlans(id.clone()));
        }
        control_storage.insert(id.as_str(), [plan.clone()]);
    }
    for (id, storage) in &control_storage {
        plans_of.insert(id, storage.as_slice());
    }

    let tree_agents: BTreeSet<&str> = topology.agents().iter().map(String::as_str).collect();
    for id in plans_of.keys() {
        if !tree_agents.contains(id) {
            return Err(EngineError::ExtraPlans(vec![id.to_string()]));
        }
    }
    for agent in &tree_agents {
        let plans = plans_of
            .get(agent)
            .ok_or_else(|| EngineError::MissingPlans(agent.to_string()))?;
        for plan in *plans {
            match horizon {
                None => horizon = Some(plan.values.len()),
                Some(h) if h != plan.values.len() => {
                    return Err(EngineError::HorizonMismatch {
                        expected: h,
                        got: plan.values.len(),
                    })
                }
                _ => {}
            }
        }
    }
    let horizon = horizon.ok_or(EngineError::EmptyPlans)?;

    let mut selections: BTreeMap<String, usize> = BTreeMap::new();
    let mut decisions = Vec::new();
    let root_candidates = process_node(
        topology.root(),
        topology,
        &plans_of,
        objective,
        price,
        horizon,
        &mut selections,
        &mut decisions,
    )?;
    debug_assert_eq!(root_candidates.len(), plans_of[topology.agent(0)].len());

    // The root's own plan was settled by its own selection step.
    let root_agent = topology.agent(topology.root());
    debug_assert!(selections.contains_key(root_agent));

    let mut curve = vec![0.0; horizon];
    for (agent, &index) in &selections {
        let plan = &plans_of[agent.as_str()][index - 1];
        for (acc, v) in curve.iter_mut().zip(&plan.values) {
            *acc += v;
        }
    }
    Ok(OptimizationOutcome {
        selections,
        curve,
        decisions,
    })
}

#[allow(clippy::too_many_arguments)]
fn process_node(
    node: usize,
    topology: &TreeTopology,
    plans_of: &BTreeMap<&str, &[DemandPlan]>,
    objective: Objective,
    price: Option<&PriceSignal>,
    horizon: usize,
    selections: &mut BTreeMap<String, usize>,
    decisions: &mut Vec<DecisionRecord>,
) -> Result<Vec<AggregatePlan>, EngineError> {
    let agent = topology.agent(node);
    let own_plans = plans_of[agent];
    let child_nodes = topology.children(node);

    let mut child_candidates = Vec::with_capacity(child_nodes.len());
    for &child in &child_nodes {
        child_candidates.push(process_node(
            child, topology, plans_of, objective, price, horizon, selections, decisions,
        )?);
    }

    let combos = combine(&child_candidates, horizon)?;
    let selection = select(&combos, own_plans, objective, price)?;

    // The children's aggregate index is their own plan index; their
    // descendants were finalised when the children ran this step.
    for (&child, &candidate) in child_nodes.iter().zip(&selection.choice) {
        selections.insert(topology.agent(child).to_string(), candidate + 1);
    }
    if node == topology.root() {
        selections.insert(agent.to_string(), selection.own_plan + 1);
    }
    decisions.push(DecisionRecord {
        node,
        agent_id: agent.to_string(),
        child_nodes: child_nodes.clone(),
        selection: selection.clone(),
    });

    let chosen_combo = &combos[selection.combo_index];
    let mut provenance: BTreeSet<String> = BTreeSet::new();
    for candidates in &child_candidates {
        provenance.extend(candidates[0].provenance.iter().cloned());
    }
    provenance.insert(agent.to_string());

    let candidates = own_plans
        .iter()
        .map(|plan| {
            let values = chosen_combo
                .values
                .iter()
                .zip(&plan.values)
                .map(|(a, b)| a + b)
                .collect();
            AggregatePlan {
                values,
                provenance: provenance.clone(),
            }
        })
        .collect();
    Ok(candidates)
}
