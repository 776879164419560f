use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The three element families that coverage is measured over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageKind {
    Statement,
    Function,
    Branch,
}

impl CoverageKind {
    pub const ALL: [CoverageKind; 3] = [CoverageKind::Statement, CoverageKind::Function, CoverageKind::Branch];

    pub fn as_str(self) -> &'static str {
        match self {
            CoverageKind::Statement => "statement",
            CoverageKind::Function => "function",
            CoverageKind::Branch => "branch",
        }
    }
}

impl fmt::Display for CoverageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoverageKind {
    type Err = ElementParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "statement" => Ok(CoverageKind::Statement),
            "function" => Ok(CoverageKind::Function),
            "branch" => Ok(CoverageKind::Branch),
            other => Err(ElementParseError(format!("unknown coverage kind `{other}`"))),
        }
    }
}

/// One value per coverage kind.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerKind<T> {
    pub statement: T,
    pub function: T,
    pub branch: T,
}

impl<T> PerKind<T> {
    pub fn from_fn(mut f: impl FnMut(CoverageKind) -> T) -> Self {
        PerKind {
            statement: f(CoverageKind::Statement),
            function: f(CoverageKind::Function),
            branch: f(CoverageKind::Branch),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (CoverageKind, &T)> {
        CoverageKind::ALL.into_iter().map(move |k| (k, &self[k]))
    }

    pub fn map<U>(&self, mut f: impl FnMut(CoverageKind, &T) -> U) -> PerKind<U> {
        PerKind::from_fn(|k| f(k, &self[k]))
    }

    pub fn try_map<U, E>(&self, mut f: impl FnMut(CoverageKind, &T) -> Result<U, E>) -> Result<PerKind<U>, E> {
        Ok(PerKind {
            statement: f(CoverageKind::Statement, &self.statement)?,
            function: f(CoverageKind::Function, &self.function)?,
            branch: f(CoverageKind::Branch, &self.branch)?,
        })
    }
}

impl<T> Index<CoverageKind> for PerKind<T> {
    type Output = T;

    fn index(&self, kind: CoverageKind) -> &T {
        match kind {
            CoverageKind::Statement => &self.statement,
            CoverageKind::Function => &self.function,
            CoverageKind::Branch => &self.branch,
        }
    }
}

impl<T> IndexMut<CoverageKind> for PerKind<T> {
    fn index_mut(&mut self, kind: CoverageKind) -> &mut T {
        match kind {
            CoverageKind::Statement => &mut self.statement,
            CoverageKind::Function => &mut self.function,
            CoverageKind::Branch => &mut self.branch,
        }
    }
}

/// Identity of one program element of a release.
///
/// Elements are located by their enclosing release-relative file and the
/// start position of their first token. Branch arms share the position of
/// the branch and are told apart by `arm`; statements and functions always
/// carry `arm == 0`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ElementId {
    pub file: String,
    pub kind: CoverageKind,
    /// 1-based.
    pub line: u32,
    /// 0-based.
    pub column: u32,
    pub arm: u32,
}

impl ElementId {
    pub fn statement(file: impl Into<String>, line: u32, column: u32) -> Self {
        Self::new(file, CoverageKind::Statement, line, column, 0)
    }

    pub fn function(file: impl Into<String>, line: u32, column: u32) -> Self {
        Self::new(file, CoverageKind::Function, line, column, 0)
    }

    pub fn branch(file: impl Into<String>, line: u32, column: u32, arm: u32) -> Self {
        Self::new(file, CoverageKind::Branch, line, column, arm)
    }

    pub fn new(file: impl Into<String>, kind: CoverageKind, line: u32, column: u32, arm: u32) -> Self {
        ElementId {
            file: file.into(),
            kind,
            line,
            column,
            arm,
        }
    }
}

/// `file:kind:line:column`, with a trailing `:arm` for branches.
impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}:{}", self.file, self.kind, self.line, self.column)?;
        if self.kind == CoverageKind::Branch {
            write!(f, ":{}", self.arm)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid element id: {0}")]
pub struct ElementParseError(pub String);

impl FromStr for ElementId {
    type Err = ElementParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ElementParseError(s.to_string());
        let num = |p: &str| p.parse::<u32>().map_err(|_| bad());

        // File paths may contain ':', so split from the right.
        let parts: Vec<&str> = s.rsplitn(5, ':').collect();
        if parts.len() == 5 && parts[3] == "branch" {
            let file = normalize_rel_path(parts[4]).ok_or_else(bad)?;
            return Ok(ElementId::branch(file, num(parts[2])?, num(parts[1])?, num(parts[0])?));
        }
        let parts: Vec<&str> = s.rsplitn(4, ':').collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        let kind: CoverageKind = parts[2].parse()?;
        if kind == CoverageKind::Branch {
            return Err(bad());
        }
        let file = normalize_rel_path(parts[3]).ok_or_else(bad)?;
        Ok(ElementId::new(file, kind, num(parts[1])?, num(parts[0])?, 0))
    }
}

impl Serialize for ElementId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ElementId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Normalizes a relative path to `/`-separated form without `.` segments.
///
/// Returns `None` for absolute paths, paths escaping their root via `..`,
/// and empty paths.
pub fn normalize_rel_path(path: &str) -> Option<String> {
    let path = path.replace('\\', "/");
    if path.starts_with('/') {
        return None;
    }
    let mut out: Vec<&str> = Vec::new();
    for seg in path.split('/') {
        match seg {
            "" | "." => {}
            ".." => return None,
            s => out.push(s),
        }
    }
    if out.is_empty() {
        None
    } else {
        Some(out.join("/"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_normalization() {
        assert_eq!(normalize_rel_path("./lib//a.js").as_deref(), Some("lib/a.js"));
        assert_eq!(normalize_rel_path("lib\\b.js").as_deref(), Some("lib/b.js"));
        assert_eq!(normalize_rel_path("/etc/passwd"), None);
        assert_eq!(normalize_rel_path("lib/../../x.js"), None);
        assert_eq!(normalize_rel_path("."), None);
    }

    #[test]
    fn element_id_text_form() {
        let s = ElementId::statement("lib/a.js", 3, 4);
        assert_eq!(s.to_string(), "lib/a.js:statement:3:4");
        let b = ElementId::branch("weird:name.js", 7, 0, 1);
        assert_eq!(b.to_string(), "weird:name.js:branch:7:0:1");
        assert_eq!("weird:name.js:branch:7:0:1".parse::<ElementId>().unwrap(), b);
        assert_eq!("lib/a.js:statement:3:4".parse::<ElementId>().unwrap(), s);
        assert!("lib/a.js:branch:3:4".parse::<ElementId>().is_err());
        assert!("lib/a.js:loop:3:4".parse::<ElementId>().is_err());
    }

    #[test]
    fn ordering_is_file_kind_line_column() {
        let mut ids = [
            ElementId::branch("b.js", 1, 0, 0),
            ElementId::statement("b.js", 2, 0),
            ElementId::function("a.js", 9, 9),
            ElementId::statement("b.js", 1, 5),
        ];
        ids.sort();
        assert_eq!(ids[0].file, "a.js");
        assert_eq!(ids[1], ElementId::statement("b.js", 1, 5));
        assert_eq!(ids[2], ElementId::statement("b.js", 2, 0));
        assert_eq!(ids[3].kind, CoverageKind::Branch);
    }
}
