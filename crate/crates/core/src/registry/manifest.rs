use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::coverage::{
    normalize_rel_path, CoverageError, CoverageKind, ElementId, ElementUniverse, PerKind, RawCoverage,
};
use crate::hash::sha256_file;

/// Files of a release with their content hashes and, once instrumented, the
/// coverage elements each file declares.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileManifest {
    pub files: BTreeMap<String, ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elements: Option<FileElements>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileElements {
    #[serde(default)]
    pub statements: Vec<Position>,
    #[serde(default)]
    pub functions: Vec<Position>,
    #[serde(default)]
    pub branches: Vec<ArmPosition>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub line: u32,
    pub column: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArmPosition {
    pub line: u32,
    pub column: u32,
    pub arm: u32,
}

impl FileManifest {
    /// Hashes every regular file below `root`.
    pub fn from_dir(root: &Path) -> io::Result<FileManifest> {
        let mut files = BTreeMap::new();
        for entry in WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(io::Error::other)?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry
                .path()
                .strip_prefix(root)
                .expect("walkdir yields paths below its root");
            let rel = normalize_rel_path(&rel.to_string_lossy())
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "unrepresentable path"))?;
            files.insert(
                rel,
                ManifestEntry {
                    sha256: sha256_file(entry.path())?,
                    elements: None,
                },
            );
        }
        Ok(FileManifest { files })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn contains(&self, rel: &str) -> bool {
        self.files.contains_key(rel)
    }

    /// Records element declarations from an instrument-everything run over
    /// the release. Files not in the manifest, or whose reported hash differs
    /// from it, are ignored.
    pub fn attach_declarations(&mut self, raw: &RawCoverage) {
        for (path, file) in &raw.files {
            let Some(rel) = normalize_rel_path(path) else {
                continue;
            };
            let Some(entry) = self.files.get_mut(&rel) else {
                continue;
            };
            if file
                .sha256
                .as_ref()
                .is_some_and(|h| !h.eq_ignore_ascii_case(&entry.sha256))
            {
                continue;
            }
            let mut decl = FileElements {
                statements: file
                    .statements
                    .iter()
                    .map(|p| Position {
                        line: p.line,
                        column: p.column,
                    })
                    .collect(),
                functions: file
                    .functions
                    .iter()
                    .map(|p| Position {
                        line: p.line,
                        column: p.column,
                    })
                    .collect(),
                branches: file
                    .branches
                    .iter()
                    .map(|b| ArmPosition {
                        line: b.line,
                        column: b.column,
                        arm: b.arm,
                    })
                    .collect(),
            };
            decl.statements.sort();
            decl.statements.dedup();
            decl.functions.sort();
            decl.functions.dedup();
            decl.branches.sort();
            decl.branches.dedup();
            entry.elements = Some(decl);
        }
    }

    /// Element counts per declared file.
    pub fn element_counts(&self) -> BTreeMap<&str, PerKind<usize>> {
        self.files
            .iter()
            .filter_map(|(path, e)| {
                e.elements.as_ref().map(|d| {
                    (
                        path.as_str(),
                        PerKind {
                            statement: d.statements.len(),
                            function: d.functions.len(),
                            branch: d.branches.len(),
                        },
                    )
                })
            })
            .collect()
    }

    pub fn universe(&self) -> Result<ElementUniverse, CoverageError> {
        let mut ids = Vec::new();
        for (path, entry) in &self.files {
            let Some(d) = &entry.elements else { continue };
            ids.extend(
                d.statements
                    .iter()
                    .map(|p| ElementId::statement(path, p.line, p.column)),
            );
            ids.extend(d.functions.iter().map(|p| ElementId::function(path, p.line, p.column)));
            ids.extend(
                d.branches
                    .iter()
                    .map(|b| ElementId::branch(path, b.line, b.column, b.arm)),
            );
        }
        let universe = ElementUniverse::from_elements(ids);
        if universe.is_empty() {
            return Err(CoverageError::EmptyUniverse);
        }
        Ok(universe)
    }

    /// Manifest paths that are missing below `root` or differ in content.
    pub fn mismatches(&self, root: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|(rel, e)| sha256_file(&root.join(rel)).map_or(true, |h| h != e.sha256))
            .map(|(rel, _)| rel.clone())
            .collect()
    }

    pub fn declares(&self, kind: CoverageKind) -> bool {
        self.element_counts().values().any(|c| c[kind] > 0)
    }
}
