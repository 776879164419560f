//! Suite compaction: the minimum-total-time subset of a suite that covers
//! exactly the same elements, per kind, as the whole suite.

mod bnb;
mod brute;
mod greedy;
mod instance;
mod problem;

use serde::{Deserialize, Serialize};

pub use brute::BRUTE_FORCE_MAX_TESTS;
pub use instance::{CompactionInstance, InstanceFile, InstanceFileTest, InstanceTest};

use crate::coverage::{CoverageRatio, PerKind};
use instance::to_ms;
use problem::{Objective, Problem};

/// Default cap on explored branch-and-bound nodes.
pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompactionError {
    #[error("compaction instance has no tests")]
    EmptyInstance,
    #[error("invalid compaction instance: {0}")]
    InvalidInstance(String),
    #[error("brute force is limited to {max} tests, instance has {tests}")]
    TooLarge { tests: usize, max: usize },
    #[error("compaction rate is undefined for a zero-time suite")]
    DivisionUndefined,
}

/// Result of compacting one suite. Doubles as `compaction-solution.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactionSolution {
    /// Selected test ids, ascending.
    pub selected: Vec<String>,
    pub tests_before: usize,
    pub total_time_ms: f64,
    pub full_time_ms: f64,
    pub rate: f64,
    pub coverage: PerKind<Option<CoverageRatio>>,
    /// `false` when the node budget ran out and `selected` is only the best
    /// subset found so far.
    pub optimal: bool,
    pub nodes_explored: u64,
}

pub fn compaction_rate(full_time_ms: f64, opt_time_ms: f64) -> Result<f64, CompactionError> {
    if opt_time_ms <= 0.0 {
        return Err(CompactionError::DivisionUndefined);
    }
    Ok(full_time_ms / opt_time_ms)
}

fn solution(
    instance: &CompactionInstance,
    selected: Vec<String>,
    micros: u64,
    optimal: bool,
    nodes: u64,
) -> Result<CompactionSolution, CompactionError> {
    let full = instance.full_time_ms();
    let total = to_ms(micros);
    Ok(CompactionSolution {
        coverage: instance.coverage_of(selected.iter().map(String::as_str)),
        tests_before: instance.tests.len(),
        rate: compaction_rate(full, total)?,
        selected,
        total_time_ms: total,
        full_time_ms: full,
        optimal,
        nodes_explored: nodes,
    })
}

/// A feasible, possibly suboptimal subset (sorted ids) used as the initial
/// incumbent.
pub fn greedy_seed(instance: &CompactionInstance) -> Result<Vec<String>, CompactionError> {
    instance.validate()?;
    let problem = Problem::new(instance);
    Ok(greedy::greedy_indices(&problem)
        .into_iter()
        .map(|i| problem.ids[i].to_string())
        .collect())
}

pub fn branch_and_bound(instance: &CompactionInstance) -> Result<CompactionSolution, CompactionError> {
    branch_and_bound_with_budget(instance, DEFAULT_NODE_BUDGET)
}

/// Provably optimal unless `node_budget` is exhausted, in which case the
/// incumbent is returned with `optimal == false`.
///
/// Among subsets of minimum total time the one with the fewest tests wins,
/// then the lexicographically smallest sorted id sequence.
pub fn branch_and_bound_with_budget(
    instance: &CompactionInstance,
    node_budget: u64,
) -> Result<CompactionSolution, CompactionError> {
    instance.validate()?;
    let problem = Problem::new(instance);
    let seed = Objective::new(&problem, greedy::greedy_indices(&problem));
    let result = bnb::solve(&problem, seed, node_budget);
    if !result.complete {
        log::warn!("compaction node budget of {node_budget} exhausted; returning best subset found");
    }
    let ids = result.best.tests.iter().map(|&i| problem.ids[i].to_string()).collect();
    solution(instance, ids, result.best.time, result.complete, result.nodes)
}

/// Enumerates the whole power set. At most [`BRUTE_FORCE_MAX_TESTS`] tests.
pub fn brute_force_opt(instance: &CompactionInstance) -> Result<CompactionSolution, CompactionError> {
    instance.validate()?;
    let (ids, micros) = brute::brute_force(instance)?;
    let nodes = 1u64 << instance.tests.len();
    solution(instance, ids, micros, true, nodes)
}
