use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::RegistryError;

/// `name@version` with a concrete (non-range) version.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PackageRef {
    pub name: String,
    pub version: String,
}

impl PackageRef {
    pub fn new(name: impl Into<String>, version: impl Into<String>) -> Result<Self, RegistryError> {
        let name = name.into();
        let version = version.into();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(RegistryError::InvalidPackageRef(format!("{name}@{version}")));
        }
        node_semver::Version::parse(&version)
            .map_err(|_| RegistryError::InvalidPackageRef(format!("{name}@{version}")))?;
        Ok(PackageRef { name, version })
    }

    /// File-system friendly rendering (`/` of scoped names becomes `+`).
    pub fn dir_name(&self) -> String {
        format!("{}@{}", self.name.replace('/', "+"), self.version)
    }
}

impl fmt::Display for PackageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.version)
    }
}

impl FromStr for PackageRef {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // Scoped names start with '@', so the separator is the last '@'.
        match s.rfind('@') {
            Some(i) if i > 0 => PackageRef::new(&s[..i], &s[i + 1..]),
            _ => Err(RegistryError::InvalidPackageRef(s.to_string())),
        }
    }
}

impl Serialize for PackageRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PackageRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Registry metadata for one published version.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageMetadata {
    pub package: PackageRef,
    pub release_date: DateTime<Utc>,
    #[serde(default)]
    pub repo_url: Option<String>,
    pub tarball_url: String,
    #[serde(default)]
    pub dependencies: BTreeMap<String, String>,
}

/// A direct dependent of some target, evaluated at its newest version whose
/// declared range admits the target version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependentInfo {
    pub name: String,
    pub version: String,
    pub declared_range: String,
    pub avg_daily_downloads: f64,
}

impl DependentInfo {
    pub fn package(&self) -> Result<PackageRef, RegistryError> {
        PackageRef::new(&self.name, &self.version)
    }
}

/// Whether exact version `version` satisfies the npm range `range`.
pub fn semver_compatible(range: &str, version: &str) -> Result<bool, RegistryError> {
    let range =
        node_semver::Range::parse(range.trim()).map_err(|e| RegistryError::MalformedRange(format!("{range}: {e}")))?;
    let version =
        node_semver::Version::parse(version).map_err(|_| RegistryError::InvalidPackageRef(version.to_string()))?;
    Ok(range.satisfies(&version))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn package_ref_parsing() {
        let p: PackageRef = "alpha@1.0.0".parse().unwrap();
        assert_eq!((p.name.as_str(), p.version.as_str()), ("alpha", "1.0.0"));
        let s: PackageRef = "@scope/pkg@2.1.0".parse().unwrap();
        assert_eq!(s.name, "@scope/pkg");
        assert_eq!(s.dir_name(), "@scope+pkg@2.1.0");
        assert!("alpha".parse::<PackageRef>().is_err());
        assert!("alpha@^1.0.0".parse::<PackageRef>().is_err());
        assert!("@1.0.0".parse::<PackageRef>().is_err());
    }

    #[test]
    fn compatibility_examples() {
        assert!(semver_compatible("^3.0.0", "3.0.0").unwrap());
        assert!(!semver_compatible("4.0.0", "3.0.0").unwrap());
        assert!(!semver_compatible("2.0.0", "3.0.0").unwrap());
        assert!(semver_compatible("~4.17.0", "4.17.15").unwrap());
        assert!(semver_compatible(">=1.0.0 <2.0.0 || ^3", "3.4.0").unwrap());
        assert!(semver_compatible("*", "0.1.0").unwrap());
        assert!(!semver_compatible("^1.2.0", "2.0.0").unwrap());
    }

    #[test]
    fn malformed_range() {
        assert!(matches!(
            semver_compatible("not a range !!", "1.0.0"),
            Err(RegistryError::MalformedRange(_))
        ));
    }
}
