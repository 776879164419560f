//! Exact depth-first branch and bound for the minimum-time cover.
//!
//! Branching picks the uncovered element with the fewest remaining
//! candidate tests and tries each candidate in order of decreasing
//! gain/time density. Sibling `i` forbids candidates `0..i`, so no subset is
//! visited twice. A node is pruned when some uncovered element has no
//! allowed candidate left, or when its partial time plus an admissible
//! lower bound exceeds the incumbent.

use std::cmp::Ordering;

use fixedbitset::FixedBitSet;

use super::problem::{denser, Objective, Problem};

pub(crate) struct SearchResult {
    pub best: Objective,
    pub nodes: u64,
    pub complete: bool,
}

struct Search<'p, 'a> {
    problem: &'p Problem<'a>,
    allowed: Vec<bool>,
    selected: Vec<usize>,
    best: Objective,
    nodes: u64,
    budget: u64,
    exhausted: bool,
}

pub(crate) fn solve(problem: &Problem<'_>, incumbent: Objective, budget: u64) -> SearchResult {
    let mut uncovered = problem.all_elements();
    let mut selected = Vec::new();
    let mut partial = 0u64;

    // Sole coverers belong to every feasible subset.
    let mut mandatory = vec![false; problem.len()];
    for cov in &problem.coverers {
        if let [only] = cov.as_slice() {
            mandatory[*only] = true;
        }
    }
    for (t, _) in mandatory.iter().enumerate().filter(|(_, m)| **m) {
        selected.push(t);
        partial += problem.times[t];
        uncovered.difference_with(&problem.covers[t]);
    }

    let mut search = Search {
        problem,
        allowed: mandatory.iter().map(|m| !m).collect(),
        selected,
        best: incumbent,
        nodes: 0,
        budget,
        exhausted: false,
    };
    search.visit(&uncovered, partial);
    SearchResult {
        best: search.best,
        nodes: search.nodes,
        complete: !search.exhausted,
    }
}

impl Search<'_, '_> {
    fn visit(&mut self, uncovered: &FixedBitSet, partial: u64) {
        if self.exhausted {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.exhausted = true;
            return;
        }
        if uncovered.is_clear() {
            let candidate = Objective::new(self.problem, self.selected.clone());
            if candidate < self.best {
                self.best = candidate;
            }
            return;
        }

        let p = self.problem;
        let gains: Vec<usize> = (0..p.len())
            .map(|t| {
                if self.allowed[t] {
                    p.covers[t].intersection(uncovered).count()
                } else {
                    0
                }
            })
            .collect();

        // Each uncovered element is charged its cheapest per-element share
        // among the tests that could still cover it; the sum never exceeds
        // the time of any completion. The cheapest single coverer of any one
        // element is a second valid bound.
        let mut bound = 0f64;
        let mut single = 0u64;
        let mut branch_on: Option<(usize, usize)> = None;
        for e in uncovered.ones() {
            let mut share = f64::INFINITY;
            let mut cheapest = u64::MAX;
            let mut count = 0;
            for &t in &p.coverers[e] {
                if gains[t] == 0 {
                    continue;
                }
                count += 1;
                share = share.min(p.times[t] as f64 / gains[t] as f64);
                cheapest = cheapest.min(p.times[t]);
            }
            if count == 0 {
                return;
            }
            bound += share;
            single = single.max(cheapest);
            if branch_on.is_none_or(|(_, c)| count < c) {
                branch_on = Some((e, count));
            }
        }
        let lower = (partial as f64 + bound).max((partial + single) as f64);
        let slack = 1e-9 * (1.0 + self.best.time as f64);
        if lower > self.best.time as f64 + slack {
            return;
        }

        let (element, _) = branch_on.expect("uncovered is non-empty");
        let mut candidates: Vec<usize> = p.coverers[element].iter().copied().filter(|&t| gains[t] > 0).collect();
        candidates.sort_by(|&a, &b| match denser(gains[a], p.times[a], gains[b], p.times[b]) {
            Ordering::Equal => a.cmp(&b),
            o => o.reverse(),
        });

        for &t in &candidates {
            let mut next = uncovered.clone();
            next.difference_with(&p.covers[t]);
            self.selected.push(t);
            self.allowed[t] = false;
            self.visit(&next, partial + p.times[t]);
            self.selected.pop();
            if self.exhausted {
                break;
            }
            // Stays forbidden for the remaining siblings.
        }
        for &t in &candidates {
            self.allowed[t] = true;
        }
    }
}
