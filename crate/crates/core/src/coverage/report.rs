use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{CoverageError, CoverageKind, CoverageRatio, ElementId, PerKind};
use crate::hash::sha256_hex;
use crate::registry::PackageRef;

/// Every coverage element of a release, per kind.
///
/// Built from the full release file manifest, so files that no test loads
/// still count towards the denominator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElementUniverse {
    elements: PerKind<BTreeSet<ElementId>>,
    digest: String,
}

impl ElementUniverse {
    pub fn new(elements: PerKind<BTreeSet<ElementId>>) -> Self {
        let mut canon = String::new();
        for (_, set) in elements.iter() {
            for id in set {
                canon.push_str(&id.to_string());
                canon.push('\n');
            }
        }
        let digest = sha256_hex(canon.as_bytes());
        ElementUniverse { elements, digest }
    }

    /// Builds a universe from a flat list, routing each id by its kind.
    pub fn from_elements(ids: impl IntoIterator<Item = ElementId>) -> Self {
        let mut elements: PerKind<BTreeSet<ElementId>> = PerKind::default();
        for id in ids {
            elements[id.kind].insert(id);
        }
        Self::new(elements)
    }

    pub fn get(&self, kind: CoverageKind) -> &BTreeSet<ElementId> {
        &self.elements[kind]
    }

    pub fn len(&self, kind: CoverageKind) -> usize {
        self.elements[kind].len()
    }

    pub fn total_len(&self) -> usize {
        CoverageKind::ALL.iter().map(|&k| self.len(k)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    pub fn contains(&self, id: &ElementId) -> bool {
        self.elements[id.kind].contains(id)
    }

    /// SHA-256 over the canonical element listing.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn elements(&self) -> &PerKind<BTreeSet<ElementId>> {
        &self.elements
    }
}

/// Elements one test covered, against the universe of its package.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoverageReport {
    pub package: PackageRef,
    pub universe: Arc<ElementUniverse>,
    covered: PerKind<BTreeSet<ElementId>>,
}

impl CoverageReport {
    /// Elements outside `universe` are discarded, so `covered ⊆ universe`
    /// always holds.
    pub fn new(
        package: PackageRef,
        universe: Arc<ElementUniverse>,
        covered: impl IntoIterator<Item = ElementId>,
    ) -> Self {
        let mut sets: PerKind<BTreeSet<ElementId>> = PerKind::default();
        for id in covered {
            if universe.contains(&id) {
                sets[id.kind].insert(id);
            }
        }
        CoverageReport {
            package,
            universe,
            covered: sets,
        }
    }

    pub fn covered(&self, kind: CoverageKind) -> &BTreeSet<ElementId> {
        &self.covered[kind]
    }

    pub fn all_covered(&self) -> impl Iterator<Item = &ElementId> {
        CoverageKind::ALL.into_iter().flat_map(move |k| self.covered[k].iter())
    }

    pub fn same_universe(&self, universe: &ElementUniverse) -> bool {
        std::ptr::eq(Arc::as_ptr(&self.universe), universe) || self.universe.digest == universe.digest
    }

    /// Serializable form; the universe is referenced by digest.
    pub fn to_file(&self) -> ReportFile {
        ReportFile {
            package: self.package.to_string(),
            universe_sha256: self.universe.digest.clone(),
            totals: PerKind::from_fn(|k| self.universe.len(k)),
            covered: self.covered.map(|_, s| s.iter().cloned().collect()),
        }
    }

    pub fn from_file(file: &ReportFile, universe: Arc<ElementUniverse>) -> Result<Self, CoverageError> {
        if file.universe_sha256 != universe.digest {
            return Err(CoverageError::UniverseMismatch);
        }
        let package: PackageRef = file
            .package
            .parse()
            .map_err(|e| CoverageError::MalformedReport(format!("{e}")))?;
        let ids = CoverageKind::ALL
            .iter()
            .flat_map(|&k| file.covered[k].iter().cloned())
            .collect::<Vec<_>>();
        if let Some(id) = ids.iter().find(|id| !universe.contains(id)) {
            return Err(CoverageError::MalformedReport(format!("{id} is not in the universe")));
        }
        Ok(CoverageReport::new(package, universe, ids))
    }
}

/// On-disk shape of a [`CoverageReport`] (`coverage.json` per test).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportFile {
    pub package: String,
    pub universe_sha256: String,
    pub totals: PerKind<usize>,
    pub covered: PerKind<Vec<ElementId>>,
}

/// Fraction of `universe[kind]` covered by the union of `tests`.
///
/// An empty test set has coverage 0. A kind with no elements has no defined
/// coverage and yields [`CoverageError::DivisionUndefined`].
pub fn cov<'a>(
    kind: CoverageKind,
    universe: &ElementUniverse,
    tests: impl IntoIterator<Item = &'a CoverageReport>,
) -> Result<CoverageRatio, CoverageError> {
    let total = universe.len(kind);
    if total == 0 {
        return Err(CoverageError::DivisionUndefined(kind));
    }
    let mut union: BTreeSet<&ElementId> = BTreeSet::new();
    for t in tests {
        if !t.same_universe(universe) {
            return Err(CoverageError::UniverseMismatch);
        }
        union.extend(t.covered[kind].iter());
    }
    Ok(CoverageRatio::new(union.len() as u64, total as u64))
}

/// Coverage of every kind, `None` where the kind has no elements.
pub fn cov_all<'a, I>(universe: &ElementUniverse, tests: I) -> Result<PerKind<Option<CoverageRatio>>, CoverageError>
where
    I: IntoIterator<Item = &'a CoverageReport>,
    I::IntoIter: Clone,
{
    let tests = tests.into_iter();
    PerKind::default().try_map(|k, _: &()| match cov(k, universe, tests.clone()) {
        Ok(r) => Ok(Some(r)),
        Err(CoverageError::DivisionUndefined(_)) => Ok(None),
        Err(e) => Err(e),
    })
}

/// Per-kind union of the inputs as a single report.
pub fn merge<'a>(reports: impl IntoIterator<Item = &'a CoverageReport>) -> Result<CoverageReport, CoverageError> {
    let mut iter = reports.into_iter();
    let first = iter.next().ok_or(CoverageError::EmptyMerge)?;
    let mut merged = first.clone();
    for r in iter {
        if !r.same_universe(&merged.universe) {
            return Err(CoverageError::UniverseMismatch);
        }
        for k in CoverageKind::ALL {
            merged.covered[k].extend(r.covered[k].iter().cloned());
        }
    }
    Ok(merged)
}

/// Where a harvested test came from.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    /// Tests shipped inside the registry release itself.
    NpmRelease,
    OriginalRepo {
        revision: String,
    },
    Dependent {
        package: PackageRef,
        revision: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestStatus {
    Pass,
    Fail,
    Flaky,
}

/// One harvested test at package granularity (one `test` script run).
#[derive(Clone, Debug, PartialEq)]
pub struct TestRecord {
    pub id: String,
    pub provenance: Provenance,
    pub status: TestStatus,
    pub median_time_ms: f64,
    pub report: Option<CoverageReport>,
    pub stderr_tail: String,
}

/// The inclusion rule: the test passed and covers at least one element of at
/// least one kind.
pub fn include_test(t: &TestRecord) -> bool {
    if t.status != TestStatus::Pass {
        return false;
    }
    let Some(report) = &t.report else {
        return false;
    };
    CoverageKind::ALL
        .into_iter()
        .any(|k| matches!(cov(k, &report.universe, [report]), Ok(r) if !r.is_zero()))
}

/// Serializable form of a [`TestRecord`]; the report is stored against the
/// release universe and re-attached on load.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRecordFile {
    pub id: String,
    pub provenance: Provenance,
    pub status: TestStatus,
    pub median_time_ms: f64,
    pub report: Option<ReportFile>,
    pub stderr_tail: String,
}

impl TestRecord {
    pub fn to_file(&self) -> TestRecordFile {
        TestRecordFile {
            id: self.id.clone(),
            provenance: self.provenance.clone(),
            status: self.status,
            median_time_ms: self.median_time_ms,
            report: self.report.as_ref().map(CoverageReport::to_file),
            stderr_tail: self.stderr_tail.clone(),
        }
    }

    pub fn from_file(file: &TestRecordFile, universe: &Arc<ElementUniverse>) -> Result<Self, CoverageError> {
        Ok(TestRecord {
            id: file.id.clone(),
            provenance: file.provenance.clone(),
            status: file.status,
            median_time_ms: file.median_time_ms,
            report: file
                .report
                .as_ref()
                .map(|r| CoverageReport::from_file(r, universe.clone()))
                .transpose()?,
            stderr_tail: file.stderr_tail.clone(),
        })
    }
}
