use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compaction::CompactionSolution;
use crate::coverage::{CoverageRatio, PerKind, Provenance, TestRecordFile};
use crate::registry::PackageRef;

/// Which part of the suite a test belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NpmRelease,
    Original,
    Dependent,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::NpmRelease, Variant::Original, Variant::Dependent];

    pub fn of(p: &Provenance) -> Variant {
        match p {
            Provenance::NpmRelease => Variant::NpmRelease,
            Provenance::OriginalRepo { .. } => Variant::Original,
            Provenance::Dependent { .. } => Variant::Dependent,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::NpmRelease => "npm",
            Variant::Original => "original",
            Variant::Dependent => "dependent",
        }
    }
}

/// A suite member and where its workspace lives, relative to the package
/// output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteTest {
    pub variant: Variant,
    pub workspace: PathBuf,
    /// Location of the target inside the workspace.
    pub coverage_prefix: String,
    pub record: TestRecordFile,
}

/// A test that was run but did not make it into the suite.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excluded {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantCoverage {
    pub npm: PerKind<Option<CoverageRatio>>,
    pub original: PerKind<Option<CoverageRatio>>,
    pub dependent: PerKind<Option<CoverageRatio>>,
    pub total: PerKind<Option<CoverageRatio>>,
}

impl VariantCoverage {
    pub fn rows(&self) -> [(&'static str, &PerKind<Option<CoverageRatio>>); 4] {
        [
            ("npm", &self.npm),
            ("original", &self.original),
            ("dependent", &self.dependent),
            ("total", &self.total),
        ]
    }
}

/// `manifest.json`: the assembled suite of one package.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub target: PackageRef,
    pub universe_sha256: String,
    pub universe_totals: PerKind<usize>,
    pub tests: Vec<SuiteTest>,
    pub excluded: Vec<Excluded>,
    pub coverage: VariantCoverage,
    pub compaction: Option<CompactionSolution>,
    pub diagnostics: Vec<String>,
}

impl SuiteManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(package_dir: &Path) -> std::io::Result<SuiteManifest> {
        let bytes = fs::read(package_dir.join(Self::FILE))?;
        serde_json::from_slice(&bytes).map_err(std::io::Error::other)
    }

    pub fn member_counts(&self) -> BTreeMap<Variant, usize> {
        let mut m: BTreeMap<Variant, usize> = Variant::ALL.iter().map(|v| (*v, 0)).collect();
        for t in &self.tests {
            *m.entry(t.variant).or_default() += 1;
        }
        m
    }
}

/// Solver wall time, kept apart from the deterministic outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub solver_seconds: Option<f64>,
}

impl Timing {
    pub const FILE: &'static str = "timing.json";

    pub fn load(package_dir: &Path) -> Timing {
        fs::read(package_dir.join(Self::FILE))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default()
    }
}

/// Pretty JSON with a trailing newline, written via a temporary file.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Directory name of a test id.
pub fn test_dir_name(id: &str) -> String {
    id.replace('/', "+")
}
