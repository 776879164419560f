//! The normalized instrumenter JSON and its conversion into
//! [`CoverageReport`]s.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{normalize_rel_path, CoverageError, CoverageReport, ElementId, ElementUniverse};
use crate::hash::sha256_file;
use crate::registry::{FileManifest, PackageRef};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawCoverage {
    pub package: String,
    /// Instrumenter identification written by the shim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instrumenter: Option<String>,
    pub files: BTreeMap<String, RawFile>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawFile {
    /// Content hash of the file as instrumented, when the producer knows it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(default)]
    pub statements: Vec<RawPoint>,
    #[serde(default)]
    pub functions: Vec<RawPoint>,
    #[serde(default)]
    pub branches: Vec<RawArm>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPoint {
    pub line: u32,
    pub column: u32,
    pub hits: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawArm {
    pub line: u32,
    pub column: u32,
    pub arm: u32,
    pub hits: u64,
}

impl RawCoverage {
    pub fn parse(bytes: &[u8]) -> Result<Self, CoverageError> {
        let raw: RawCoverage =
            serde_json::from_slice(bytes).map_err(|e| CoverageError::MalformedReport(e.to_string()))?;
        for (path, file) in &raw.files {
            let zero_line = file.statements.iter().chain(&file.functions).any(|p| p.line == 0)
                || file.branches.iter().any(|b| b.line == 0);
            if zero_line {
                return Err(CoverageError::MalformedReport(format!(
                    "{path}: line numbers are 1-based"
                )));
            }
        }
        Ok(raw)
    }

    /// Every element the file declares, regardless of hits, tagged with the
    /// hit count.
    pub fn elements<'a>(file: &'a str, raw: &'a RawFile) -> impl Iterator<Item = (ElementId, u64)> + 'a {
        let stmts = raw
            .statements
            .iter()
            .map(move |p| (ElementId::statement(file, p.line, p.column), p.hits));
        let fns = raw
            .functions
            .iter()
            .map(move |p| (ElementId::function(file, p.line, p.column), p.hits));
        let arms = raw
            .branches
            .iter()
            .map(move |b| (ElementId::branch(file, b.line, b.column, b.arm), b.hits));
        stmts.chain(fns).chain(arms)
    }
}

/// How raw paths relate to the release being measured.
#[derive(Clone, Debug, Default)]
pub struct NormalizeScope {
    /// Directory, relative to the test workspace, holding the release files.
    /// Empty for tests that run inside the package itself; the installed
    /// location (e.g. `node_modules/<name>`) for dependent tests.
    pub prefix: String,
    /// Content hashes of release files as found on disk, keyed by
    /// release-relative path. Take precedence over hashes in the raw report.
    pub observed_hashes: BTreeMap<String, String>,
}

impl NormalizeScope {
    pub fn with_prefix(prefix: impl Into<String>) -> Self {
        NormalizeScope {
            prefix: prefix.into(),
            ..Default::default()
        }
    }

    /// Hashes every manifest file present under `workspace/prefix`.
    pub fn observe(workspace: &Path, prefix: &str, manifest: &FileManifest) -> Self {
        let base = workspace.join(prefix);
        let observed_hashes = manifest
            .files
            .keys()
            .filter_map(|rel| sha256_file(&base.join(rel)).ok().map(|h| (rel.clone(), h)))
            .collect();
        NormalizeScope {
            prefix: prefix.to_string(),
            observed_hashes,
        }
    }

    fn release_path(&self, raw_path: &str) -> Option<String> {
        let path = normalize_rel_path(raw_path)?;
        if self.prefix.is_empty() {
            return Some(path);
        }
        let prefix = normalize_rel_path(&self.prefix)?;
        let rest = path.strip_prefix(&prefix)?.strip_prefix('/')?;
        Some(rest.to_string())
    }
}

/// Converts raw instrumenter output into reports over one release.
#[derive(Clone, Debug)]
pub struct Normalizer {
    package: PackageRef,
    manifest: FileManifest,
    universe: Arc<ElementUniverse>,
}

impl Normalizer {
    pub fn new(package: PackageRef, manifest: &FileManifest) -> Result<Self, CoverageError> {
        let universe = Arc::new(manifest.universe()?);
        Ok(Normalizer {
            package,
            manifest: manifest.clone(),
            universe,
        })
    }

    pub fn universe(&self) -> &Arc<ElementUniverse> {
        &self.universe
    }

    pub fn package(&self) -> &PackageRef {
        &self.package
    }

    /// Files outside the release, and release files whose content differs
    /// from the published copy, contribute nothing to `covered`.
    pub fn normalize(&self, raw: &[u8], scope: &NormalizeScope) -> Result<CoverageReport, CoverageError> {
        let raw = RawCoverage::parse(raw)?;
        let mut covered = Vec::new();
        for (raw_path, file) in &raw.files {
            let Some(rel) = scope.release_path(raw_path) else {
                continue;
            };
            let Some(entry) = self.manifest.files.get(&rel) else {
                continue;
            };
            let actual = scope.observed_hashes.get(&rel).or(file.sha256.as_ref());
            if actual.is_some_and(|h| !h.eq_ignore_ascii_case(&entry.sha256)) {
                log::debug!("{rel}: content differs from release, coverage dropped");
                continue;
            }
            covered.extend(
                RawCoverage::elements(&rel, file)
                    .filter(|(_, hits)| *hits > 0)
                    .map(|(id, _)| id),
            );
        }
        Ok(CoverageReport::new(
            self.package.clone(),
            self.universe.clone(),
            covered,
        ))
    }
}

/// One-shot form of [`Normalizer::normalize`].
pub fn normalize_raw(
    raw: &[u8],
    package: &PackageRef,
    manifest: &FileManifest,
    scope: &NormalizeScope,
) -> Result<CoverageReport, CoverageError> {
    Normalizer::new(package.clone(), manifest)?.normalize(raw, scope)
}
