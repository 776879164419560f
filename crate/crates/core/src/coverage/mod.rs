//! Coverage data model: element identities, per-test reports, the coverage
//! ratio of a test set, report merging and the suite inclusion rule.

mod element;
mod ratio;
mod raw;
mod report;

pub use element::{normalize_rel_path, CoverageKind, ElementId, ElementParseError, PerKind};
pub use ratio::CoverageRatio;
pub use raw::{normalize_raw, NormalizeScope, Normalizer, RawArm, RawCoverage, RawFile, RawPoint};
pub use report::{
    cov, cov_all, include_test, merge, CoverageReport, ElementUniverse, Provenance, ReportFile, TestRecord,
    TestRecordFile, TestStatus,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoverageError {
    #[error("malformed coverage report: {0}")]
    MalformedReport(String),
    #[error("release declares no coverage elements")]
    EmptyUniverse,
    #[error("reports refer to different element universes")]
    UniverseMismatch,
    #[error("{0} coverage is not applicable: the release has no {0} elements")]
    DivisionUndefined(CoverageKind),
    #[error("nothing to merge")]
    EmptyMerge,
}

#[cfg(test)]
mod tests;
