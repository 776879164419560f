//! Running external dynamic analyses over assembled suites and summarizing
//! their findings per suite variant.


use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{normalize_rel_path, Provenance};
use crate::registry::{FileManifest, PackageRef};
use crate::sandbox::{run_command, shell, SandboxError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("analysis {analysis} exited with {exit_code}: {stderr}")]
    AnalysisCrashed {
        analysis: String,
        exit_code: i32,
        stderr: String,
    },
    #[error("malformed findings: {0}")]
    MalformedFindings(String),
    #[error("bad analysis spec {0:?}: expected <id>=<command>")]
    BadSpec(String),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

/// `<id>=<command-template>`; the template may use `{workspace}`,
/// `{output}` and `{test}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisSpec {
    pub id: String,
    pub command: String,
}

impl FromStr for AnalysisSpec {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('=') {
            Some((id, cmd)) if !id.trim().is_empty() && !cmd.trim().is_empty() => Ok(AnalysisSpec {
                id: id.trim().to_string(),
                command: cmd.to_string(),
            }),
            _ => Err(AnalysisError::BadSpec(s.to_string())),
        }
    }
}

impl AnalysisSpec {
    pub fn render(&self, test: &str, workspace: &Path, output: &Path) -> String {
        self.command
            .replace("{test}", test)
            .replace("{workspace}", &workspace.display().to_string())
            .replace("{output}", &output.display().to_string())
    }
}

/// Suite variants, each containing the previous one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteVariant {
    Npm,
    Original,
    Final,
}

impl SuiteVariant {
    pub const ALL: [SuiteVariant; 3] = [SuiteVariant::Npm, SuiteVariant::Original, SuiteVariant::Final];

    pub fn as_str(self) -> &'static str {
        match self {
            SuiteVariant::Npm => "npm",
            SuiteVariant::Original => "original",
            SuiteVariant::Final => "final",
        }
    }

    /// Smallest variant containing tests of this provenance.
    pub fn of(provenance: &Provenance) -> SuiteVariant {
        match provenance {
            Provenance::NpmRelease => SuiteVariant::Npm,
            Provenance::OriginalRepo { .. } => SuiteVariant::Original,
            Provenance::Dependent { .. } => SuiteVariant::Final,
        }
    }

    pub fn contains(self, provenance: &Provenance) -> bool {
        Self::of(provenance) <= self
    }
}

impl fmt::Display for SuiteVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SuiteVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown suite {s:?}; expected npm, original or final"))
    }
}

/// One entry of the findings file an analysis writes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFinding {
    pub file: String,
    pub line: u32,
    pub column: u32,
    #[serde(default)]
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Location {
    pub file: String,
    pub line: u32,
    pub column: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub analysis: String,
    pub location: Location,
    pub test: String,
    pub message: String,
}

/// Keeps findings inside the target release, mapped to release-relative
/// paths. `prefix` is where the target lives inside the test workspace.
pub fn filter_findings(
    analysis: &str,
    test: &str,
    raw: Vec<RawFinding>,
    manifest: &FileManifest,
    prefix: &str,
) -> Vec<Finding> {
    let prefix = prefix.trim_matches('/');
    raw.into_iter()
        .filter_map(|f| {
            let path = normalize_rel_path(&f.file)?;
            let rel = if prefix.is_empty() {
                path
            } else {
                path.strip_prefix(prefix)?.strip_prefix('/')?.to_string()
            };
            manifest.contains(&rel).then(|| Finding {
                analysis: analysis.to_string(),
                location: Location {
                    file: rel,
                    line: f.line,
                    column: f.column,
                },
                test: test.to_string(),
                message: f.message,
            })
        })
        .collect()
}

/// Runs the analysis command for one test's workspace and reads the
/// findings JSON it writes to `output`.
pub fn run_analysis(
    spec: &AnalysisSpec,
    test: &str,
    workspace: &Path,
    output: &Path,
    manifest: &FileManifest,
    prefix: &str,
    timeout: Duration,
) -> Result<Vec<Finding>, AnalysisError> {
    let _ = fs::remove_file(output);
    let result = run_command(shell(&spec.render(test, workspace, output), workspace), timeout)?;
    if !result.succeeded() {
        return Err(AnalysisError::AnalysisCrashed {
            analysis: spec.id.clone(),
            exit_code: result.exit_code,
            stderr: result.stderr_tail.lines().last().unwrap_or_default().to_string(),
        });
    }
    let bytes = fs::read(output).map_err(|e| AnalysisError::MalformedFindings(format!("{}: {e}", output.display())))?;
    let raw: Vec<RawFinding> =
        serde_json::from_slice(&bytes).map_err(|e| AnalysisError::MalformedFindings(e.to_string()))?;
    Ok(filter_findings(&spec.id, test, raw, manifest, prefix))
}

/// A finding together with the package and the variant of the run that
/// produced it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedFinding {
    pub package: PackageRef,
    pub variant: SuiteVariant,
    pub finding: Finding,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub analysis: String,
    pub variant: SuiteVariant,
    /// Distinct (package, location) pairs.
    pub findings: usize,
    pub packages: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub rows: Vec<SummaryRow>,
}

/// Distinct-location counts per (analysis, variant). A variant counts the
/// findings tagged with it or with any variant it contains.
pub fn aggregate(findings: &[TaggedFinding], variants: &[SuiteVariant], analyses: &[String]) -> AnalysisSummary {
    let mut ids: BTreeSet<&str> = analyses.iter().map(String::as_str).collect();
    ids.extend(findings.iter().map(|f| f.finding.analysis.as_str()));
    let variants: BTreeSet<SuiteVariant> = variants.iter().copied().collect();
    let mut rows = Vec::new();
    for id in ids {
        for &variant in &variants {
            let locations: BTreeSet<(&PackageRef, &Location)> = findings
                .iter()
                .filter(|f| f.finding.analysis == id && f.variant <= variant)
                .map(|f| (&f.package, &f.finding.location))
                .collect();
            let packages: BTreeSet<&PackageRef> = locations.iter().map(|(p, _)| *p).collect();
            rows.push(SummaryRow {
                analysis: id.to_string(),
                variant,
                findings: locations.len(),
                packages: packages.len(),
            });
        }
    }
    AnalysisSummary { rows }
}

impl AnalysisSummary {
    /// One line per analysis with `# Findings` / `# Packages` per variant.
    pub fn to_csv(&self) -> String {
        let variants: BTreeSet<SuiteVariant> = self.rows.iter().map(|r| r.variant).collect();
        let mut out = String::from("Analysis");
        for v in &variants {
            let _ = write!(out, ",# Findings ({v}),# Packages ({v})");
        }
        out.push('\n');
        let mut by_id: BTreeMap<&str, BTreeMap<SuiteVariant, &SummaryRow>> = BTreeMap::new();
        for r in &self.rows {
            by_id.entry(&r.analysis).or_default().insert(r.variant, r);
        }
        for (id, row) in by_id {
            out.push_str(id);
            for v in &variants {
                match row.get(v) {
                    Some(r) => {
                        let _ = write!(out, ",{},{}", r.findings, r.packages);
                    }
                    None => out.push_str(",0,0"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn get(&self, analysis: &str, variant: SuiteVariant) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.analysis == analysis && r.variant == variant)
    }
}
