use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DependentResult, Outcome};
use crate::coverage::include_test;
use crate::coverage::{CoverageKind, CoverageRatio, ElementId, ElementUniverse, PerKind, TestRecord};
use crate::registry::PackageRef;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub rank: usize,
    pub dependent: PackageRef,
    pub outcome: Outcome,
    /// Included dependents with rank up to this one.
    pub cumulative: PerKind<Option<CoverageRatio>>,
    /// The same plus the preloaded original tests.
    pub cumulative_combined: PerKind<Option<CoverageRatio>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    /// Coverage of the preloaded tests alone (rank 0 of the combined curve).
    pub baseline: Option<PerKind<Option<CoverageRatio>>>,
    pub entries: Vec<TraceEntry>,
}

fn ratios(universe: &ElementUniverse, union: &PerKind<BTreeSet<ElementId>>) -> PerKind<Option<CoverageRatio>> {
    PerKind::from_fn(|k| {
        let total = universe.len(k) as u64;
        (total > 0).then(|| CoverageRatio::new(union[k].len() as u64, total))
    })
}

fn absorb(union: &mut PerKind<BTreeSet<ElementId>>, record: &TestRecord) {
    if let Some(r) = &record.report {
        for k in CoverageKind::ALL {
            union[k].extend(r.covered(k).iter().cloned());
        }
    }
}

/// Cumulative coverage after each rank, over included results only.
pub fn cumulative_trace(
    universe: &Arc<ElementUniverse>,
    preloaded: &[TestRecord],
    results: &[DependentResult],
) -> SearchTrace {
    let mut deps: PerKind<BTreeSet<ElementId>> = PerKind::default();
    let mut combined: PerKind<BTreeSet<ElementId>> = PerKind::default();
    for r in preloaded.iter().filter(|r| include_test(r)) {
        absorb(&mut combined, r);
    }
    let baseline = (!preloaded.is_empty()).then(|| ratios(universe, &combined));
    let mut entries = Vec::with_capacity(results.len());
    for (i, res) in results.iter().enumerate() {
        if res.outcome == Outcome::Included {
            if let Some(rec) = &res.record {
                absorb(&mut deps, rec);
                absorb(&mut combined, rec);
            }
        }
        entries.push(TraceEntry {
            rank: i + 1,
            dependent: res.dependent.clone(),
            outcome: res.outcome.clone(),
            cumulative: ratios(universe, &deps),
            cumulative_combined: ratios(universe, &combined),
        });
    }
    SearchTrace { baseline, entries }
}

fn pct(r: &Option<CoverageRatio>) -> String {
    r.map_or_else(|| "n/a".into(), |r| r.percent())
}

impl SearchTrace {
    /// Index of the first entry whose combined statement coverage reaches
    /// `goal` (a fraction).
    pub fn first_reaching(&self, goal: f64) -> Option<usize> {
        self.entries.iter().position(|e| {
            e.cumulative_combined
                .statement
                .is_some_and(|r| r.as_f64() + 1e-12 >= goal)
        })
    }

    pub fn is_monotone(&self) -> bool {
        let le = |a: &Option<CoverageRatio>, b: &Option<CoverageRatio>| match (a, b) {
            (Some(a), Some(b)) => a <= b,
            (None, None) => true,
            _ => false,
        };
        self.entries.windows(2).all(|w| {
            CoverageKind::ALL.into_iter().all(|k| {
                le(&w[0].cumulative[k], &w[1].cumulative[k])
                    && le(&w[0].cumulative_combined[k], &w[1].cumulative_combined[k])
            })
        })
    }

    /// `dependents-report.csv`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "rank,name,version,outcome,statement_pct,function_pct,branch_pct,\
             combined_statement_pct,combined_function_pct,combined_branch_pct\n",
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                e.rank,
                e.dependent.name,
                e.dependent.version,
                e.outcome.label(),
                pct(&e.cumulative.statement),
                pct(&e.cumulative.function),
                pct(&e.cumulative.branch),
                pct(&e.cumulative_combined.statement),
                pct(&e.cumulative_combined.function),
                pct(&e.cumulative_combined.branch),
            );
        }
        out
    }
}
