use std::cmp::Ordering;

use super::problem::{denser, Problem};

/// Greedy set cover: repeatedly take the test with the most newly covered
/// elements per unit of time (ties to the smaller id) until every element of
/// the full suite is covered. Feasible, not necessarily optimal.
pub(crate) fn greedy_indices(problem: &Problem<'_>) -> Vec<usize> {
    let mut uncovered = problem.all_elements();
    let mut chosen = vec![false; problem.len()];
    let mut out = Vec::new();
    while !uncovered.is_clear() {
        let mut best: Option<(usize, usize)> = None;
        for t in (0..problem.len()).filter(|&t| !chosen[t]) {
            let gain = problem.covers[t].intersection(&uncovered).count();
            if gain == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((b, bg)) => denser(gain, problem.times[t], bg, problem.times[b]) == Ordering::Greater,
            };
            if better {
                best = Some((t, gain));
            }
        }
        let (t, _) = best.expect("every element is covered by some test");
        chosen[t] = true;
        uncovered.difference_with(&problem.covers[t]);
        out.push(t);
    }
    out.sort_unstable();
    out
}
