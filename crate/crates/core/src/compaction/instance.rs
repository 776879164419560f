use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::CompactionError;
use crate::coverage::{CoverageKind, CoverageRatio, CoverageReport, ElementId, ElementUniverse, PerKind};

/// One suite member as seen by the solver.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceTest {
    pub id: String,
    pub covered: BTreeSet<ElementId>,
    /// Median bare-run duration in milliseconds, `> 0`.
    pub time_ms: f64,
}

/// A suite to compact: tests with their coverage and time.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactionInstance {
    pub tests: Vec<InstanceTest>,
    pub universe: Arc<ElementUniverse>,
}

impl CompactionInstance {
    pub fn new(tests: Vec<InstanceTest>, universe: Arc<ElementUniverse>) -> Result<Self, CompactionError> {
        let inst = CompactionInstance { tests, universe };
        inst.validate()?;
        Ok(inst)
    }

    pub fn from_reports<'a>(
        universe: Arc<ElementUniverse>,
        tests: impl IntoIterator<Item = (&'a str, &'a CoverageReport, f64)>,
    ) -> Result<Self, CompactionError> {
        let tests = tests
            .into_iter()
            .map(|(id, report, time_ms)| InstanceTest {
                id: id.to_string(),
                covered: report.all_covered().cloned().collect(),
                time_ms,
            })
            .collect();
        Self::new(tests, universe)
    }

    pub fn validate(&self) -> Result<(), CompactionError> {
        if self.tests.is_empty() {
            return Err(CompactionError::EmptyInstance);
        }
        let mut seen = HashSet::new();
        for t in &self.tests {
            if !seen.insert(t.id.as_str()) {
                return Err(CompactionError::InvalidInstance(format!(
                    "duplicate test id `{}`",
                    t.id
                )));
            }
            if !(t.time_ms.is_finite() && t.time_ms > 0.0) {
                return Err(CompactionError::InvalidInstance(format!(
                    "test `{}` has non-positive time {}",
                    t.id, t.time_ms
                )));
            }
            if let Some(e) = t.covered.iter().find(|e| !self.universe.contains(e)) {
                return Err(CompactionError::InvalidInstance(format!(
                    "test `{}` covers {e}, which is outside the universe",
                    t.id
                )));
            }
        }
        Ok(())
    }

    pub fn full_time_ms(&self) -> f64 {
        to_ms(self.tests.iter().map(|t| to_micros(t.time_ms)).sum())
    }

    /// Per-kind coverage of the tests whose ids are in `selected`.
    pub fn coverage_of<'a>(&self, selected: impl IntoIterator<Item = &'a str>) -> PerKind<Option<CoverageRatio>> {
        let selected: HashSet<&str> = selected.into_iter().collect();
        let mut union: PerKind<BTreeSet<&ElementId>> = PerKind::default();
        for t in self.tests.iter().filter(|t| selected.contains(t.id.as_str())) {
            for e in &t.covered {
                union[e.kind].insert(e);
            }
        }
        PerKind::from_fn(|k| {
            let total = self.universe.len(k) as u64;
            (total > 0).then(|| CoverageRatio::new(union[k].len() as u64, total))
        })
    }

    /// Per-kind covered-element unions of the selected tests.
    pub fn covered_union<'a>(&self, selected: impl IntoIterator<Item = &'a str>) -> PerKind<BTreeSet<ElementId>> {
        let selected: HashSet<&str> = selected.into_iter().collect();
        let mut union: PerKind<BTreeSet<ElementId>> = PerKind::default();
        for t in self.tests.iter().filter(|t| selected.contains(t.id.as_str())) {
            for e in &t.covered {
                union[e.kind].insert(e.clone());
            }
        }
        union
    }

    /// Scales every test time by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.tests {
            t.time_ms *= factor;
        }
        out
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            universe: self.universe.elements().map(|_, s| s.iter().cloned().collect()),
            tests: self
                .tests
                .iter()
                .map(|t| InstanceFileTest {
                    id: t.id.clone(),
                    time_ms: t.time_ms,
                    covered: t.covered.iter().cloned().collect(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: InstanceFile) -> Result<Self, CompactionError> {
        for k in CoverageKind::ALL {
            if let Some(e) = file.universe[k].iter().find(|e| e.kind != k) {
                return Err(CompactionError::InvalidInstance(format!("{e} listed under {k}")));
            }
        }
        let universe = Arc::new(ElementUniverse::from_elements(
            CoverageKind::ALL.iter().flat_map(|&k| file.universe[k].iter().cloned()),
        ));
        let tests = file
            .tests
            .into_iter()
            .map(|t| InstanceTest {
                id: t.id,
                covered: t.covered.into_iter().collect(),
                time_ms: t.time_ms,
            })
            .collect();
        Self::new(tests, universe)
    }
}

/// `compaction-instance.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub universe: PerKind<Vec<ElementId>>,
    pub tests: Vec<InstanceFileTest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFileTest {
    pub id: String,
    pub time_ms: f64,
    pub covered: Vec<ElementId>,
}

/// Solver arithmetic runs on integer microseconds so that sums are exact.
pub(crate) fn to_micros(ms: f64) -> u64 {
    ((ms * 1000.0).round() as u64).max(1)
}

pub(crate) fn to_ms(micros: u64) -> f64 {
    micros as f64 / 1000.0
}
