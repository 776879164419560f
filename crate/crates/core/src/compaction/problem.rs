//! Index-based view of an instance shared by the solvers.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use fixedbitset::FixedBitSet;

use super::instance::{to_micros, CompactionInstance};

/// Tests are re-indexed in ascending id order, so comparing sorted index
/// vectors is the same as comparing sorted id sequences.
pub(crate) struct Problem<'a> {
    pub ids: Vec<&'a str>,
    pub times: Vec<u64>,
    pub covers: Vec<FixedBitSet>,
    /// For each element, the tests covering it (ascending).
    pub coverers: Vec<Vec<usize>>,
    pub n_elements: usize,
}

impl<'a> Problem<'a> {
    pub fn new(instance: &'a CompactionInstance) -> Self {
        let mut order: Vec<usize> = (0..instance.tests.len()).collect();
        order.sort_by(|&a, &b| instance.tests[a].id.cmp(&instance.tests[b].id));

        let mut index = BTreeMap::new();
        for t in &instance.tests {
            for e in &t.covered {
                let next = index.len();
                index.entry(e).or_insert(next);
            }
        }
        // Renumber in element order for determinism.
        for (i, v) in index.values_mut().enumerate() {
            *v = i;
        }
        let n_elements = index.len();

        let mut ids = Vec::with_capacity(order.len());
        let mut times = Vec::with_capacity(order.len());
        let mut covers = Vec::with_capacity(order.len());
        let mut coverers = vec![Vec::new(); n_elements];
        for (ti, &orig) in order.iter().enumerate() {
            let t = &instance.tests[orig];
            ids.push(t.id.as_str());
            times.push(to_micros(t.time_ms));
            let mut bits = FixedBitSet::with_capacity(n_elements);
            for e in &t.covered {
                let ei = index[e];
                bits.insert(ei);
                coverers[ei].push(ti);
            }
            covers.push(bits);
        }
        Problem {
            ids,
            times,
            covers,
            coverers,
            n_elements,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn all_elements(&self) -> FixedBitSet {
        let mut all = FixedBitSet::with_capacity(self.n_elements);
        all.insert_range(..);
        all
    }
}

/// Objective of a candidate subset: total time, then cardinality, then the
/// sorted id sequence. Smaller is better.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Objective {
    pub time: u64,
    pub tests: Vec<usize>,
}

impl Objective {
    pub fn new(problem: &Problem<'_>, mut tests: Vec<usize>) -> Self {
        tests.sort_unstable();
        let time = tests.iter().map(|&t| problem.times[t]).sum();
        Objective { time, tests }
    }
}

impl Ord for Objective {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .cmp(&other.time)
            .then(self.tests.len().cmp(&other.tests.len()))
            .then_with(|| self.tests.cmp(&other.tests))
    }
}

impl PartialOrd for Objective {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// `a_gain / a_time > b_gain / b_time`, by cross multiplication.
pub(crate) fn denser(a_gain: usize, a_time: u64, b_gain: usize, b_time: u64) -> Ordering {
    (a_gain as u128 * b_time as u128).cmp(&(b_gain as u128 * a_time as u128))
}
