//! Literal power-set evaluation of the compaction objective. Used as a test
//! oracle; shares no code with the branch-and-bound path.

use std::collections::BTreeMap;

use super::instance::to_micros;
use super::{CompactionError, CompactionInstance};

pub const BRUTE_FORCE_MAX_TESTS: usize = 20;

/// Returns the optimal subset as sorted ids plus its time in microseconds.
pub(crate) fn brute_force(instance: &CompactionInstance) -> Result<(Vec<String>, u64), CompactionError> {
    let n = instance.tests.len();
    if n > BRUTE_FORCE_MAX_TESTS {
        return Err(CompactionError::TooLarge {
            tests: n,
            max: BRUTE_FORCE_MAX_TESTS,
        });
    }
    let mut element_index = BTreeMap::new();
    for t in &instance.tests {
        for e in &t.covered {
            let next = element_index.len();
            element_index.entry(e.clone()).or_insert(next);
        }
    }
    let words = element_index.len().div_ceil(64).max(1);
    let masks: Vec<Vec<u64>> = instance
        .tests
        .iter()
        .map(|t| {
            let mut m = vec![0u64; words];
            for e in &t.covered {
                let i = element_index[e];
                m[i / 64] |= 1 << (i % 64);
            }
            m
        })
        .collect();
    let full: Vec<u64> = masks.iter().fold(vec![0u64; words], |mut acc, m| {
        acc.iter_mut().zip(m).for_each(|(a, b)| *a |= b);
        acc
    });
    let times: Vec<u64> = instance.tests.iter().map(|t| to_micros(t.time_ms)).collect();

    // union[s] = union[s without its lowest bit] | masks[lowest bit]
    let subsets = 1usize << n;
    let mut union = vec![0u64; subsets * words];
    let mut time = vec![0u64; subsets];
    let mut best: Option<(u64, Vec<String>)> = None;
    for s in 0..subsets {
        if s > 0 {
            let low = s.trailing_zeros() as usize;
            let rest = s & (s - 1);
            time[s] = time[rest] + times[low];
            for w in 0..words {
                union[s * words + w] = union[rest * words + w] | masks[low][w];
            }
        }
        if union[s * words..(s + 1) * words] != full[..] {
            continue;
        }
        let mut ids: Vec<String> = (0..n)
            .filter(|i| s & (1 << i) != 0)
            .map(|i| instance.tests[i].id.clone())
            .collect();
        ids.sort();
        let better = match &best {
            None => true,
            Some((bt, bids)) => (time[s], ids.len(), &ids) < (*bt, bids.len(), bids),
        };
        if better {
            best = Some((time[s], ids));
        }
    }
    let (t, ids) = best.expect("the full suite is always feasible");
    Ok((ids, t))
}
