//! Metadata, tarball, download-count, dependents and star-count sources.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::Deserialize;

use super::{PackageMetadata, PackageRef, RegistryError};

pub trait RegistryProvider: Send + Sync {
    fn metadata(&self, name: &str, version: &str) -> Result<PackageMetadata, RegistryError>;
    fn tarball(&self, meta: &PackageMetadata) -> Result<Vec<u8>, RegistryError>;
    /// Average daily downloads over the trailing year.
    fn avg_daily_downloads(&self, name: &str) -> Result<f64, RegistryError>;
    /// Normalized coverage JSON declaring every element of the release
    /// (all hits zero), if the provider has one on file.
    fn universe_declaration(&self, _package: &PackageRef) -> Result<Option<Vec<u8>>, RegistryError> {
        Ok(None)
    }
}

/// One known version of a dependent and its declared range on the target.
#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct DependentVersion {
    pub version: String,
    pub range: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
pub struct DependentEntry {
    pub name: String,
    pub versions: Vec<DependentVersion>,
}

/// Reverse-dependency listing. The registry API does not serve these, so
/// they come from a dump file.
pub trait DependentsProvider: Send + Sync {
    fn dependents_of(&self, target_name: &str) -> Result<Vec<DependentEntry>, RegistryError>;
}

pub trait StarsProvider: Send + Sync {
    fn stars(&self, name: &str) -> Result<Option<u64>, RegistryError>;
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RegistryError> {
    let bytes = fs::read(path).map_err(|e| RegistryError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| RegistryError::MalformedMetadata(format!("{}: {e}", path.display())))
}

fn read_json_or_default<T: for<'de> Deserialize<'de> + Default>(path: &Path) -> Result<T, RegistryError> {
    if path.exists() {
        read_json(path)
    } else {
        Ok(T::default())
    }
}

/// `dependents.json`: target name → dependents.
#[derive(Clone, Debug, Default)]
pub struct DependentsFile {
    entries: BTreeMap<String, Vec<DependentEntry>>,
}

impl DependentsFile {
    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        Ok(DependentsFile {
            entries: read_json_or_default(path)?,
        })
    }
}

impl DependentsProvider for DependentsFile {
    fn dependents_of(&self, target_name: &str) -> Result<Vec<DependentEntry>, RegistryError> {
        Ok(self.entries.get(target_name).cloned().unwrap_or_default())
    }
}

/// `stars.json`: package name → repository star count.
#[derive(Clone, Debug, Default)]
pub struct StarsFile {
    stars: BTreeMap<String, u64>,
}

impl StarsFile {
    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        Ok(StarsFile {
            stars: read_json_or_default(path)?,
        })
    }
}

impl StarsProvider for StarsFile {
    fn stars(&self, name: &str) -> Result<Option<u64>, RegistryError> {
        Ok(self.stars.get(name).copied())
    }
}

#[derive(Deserialize)]
struct MetadataFile {
    name: String,
    version: String,
    release_date: DateTime<Utc>,
    #[serde(default)]
    repository: Option<String>,
    #[serde(default)]
    tarball: Option<String>,
    #[serde(default)]
    dependencies: BTreeMap<String, String>,
}

/// Offline registry rooted at a fixture directory:
///
/// ```text
/// registry/<name>/<version>/{metadata.json, package.tgz, universe.json?}
/// dependents.json  downloads.json  stars.json
/// ```
#[derive(Clone, Debug)]
pub struct FixtureRegistry {
    root: PathBuf,
    downloads: BTreeMap<String, f64>,
}

impl FixtureRegistry {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let root = root.into();
        if !root.join("registry").is_dir() {
            return Err(RegistryError::ProviderUnavailable(format!(
                "{} has no registry/ directory",
                root.display()
            )));
        }
        let downloads = read_json_or_default(&root.join("downloads.json"))?;
        Ok(FixtureRegistry { root, downloads })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn version_dir(&self, name: &str, version: &str) -> PathBuf {
        self.root.join("registry").join(name).join(version)
    }
}

impl RegistryProvider for FixtureRegistry {
    fn metadata(&self, name: &str, version: &str) -> Result<PackageMetadata, RegistryError> {
        let path = self.version_dir(name, version).join("metadata.json");
        if !path.is_file() {
            return Err(RegistryError::NotFound(format!("{name}@{version}")));
        }
        let m: MetadataFile = read_json(&path)?;
        if m.name != name || m.version != version {
            return Err(RegistryError::MalformedMetadata(format!(
                "{} describes {}@{}",
                path.display(),
                m.name,
                m.version
            )));
        }
        let tgz = self.version_dir(name, version).join("package.tgz");
        Ok(PackageMetadata {
            package: PackageRef::new(m.name, m.version)?,
            release_date: m.release_date,
            repo_url: m.repository,
            tarball_url: m.tarball.unwrap_or_else(|| format!("file://{}", tgz.display())),
            dependencies: m.dependencies,
        })
    }

    fn tarball(&self, meta: &PackageMetadata) -> Result<Vec<u8>, RegistryError> {
        let path = self
            .version_dir(&meta.package.name, &meta.package.version)
            .join("package.tgz");
        fs::read(&path).map_err(|e| RegistryError::Io(format!("{}: {e}", path.display())))
    }

    fn avg_daily_downloads(&self, name: &str) -> Result<f64, RegistryError> {
        Ok(self.downloads.get(name).copied().unwrap_or(0.0))
    }

    fn universe_declaration(&self, package: &PackageRef) -> Result<Option<Vec<u8>>, RegistryError> {
        let path = self.version_dir(&package.name, &package.version).join("universe.json");
        match fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(RegistryError::Io(format!("{}: {e}", path.display()))),
        }
    }
}

/// HTTP registry speaking the public npm registry protocol.
pub struct LiveRegistry {
    registry_url: String,
    downloads_url: String,
    agent: ureq::Agent,
}

impl LiveRegistry {
    pub const DEFAULT_REGISTRY: &'static str = "https://registry.npmjs.org";
    pub const DEFAULT_DOWNLOADS: &'static str = "https://api.npmjs.org/downloads";

    pub fn new(registry_url: impl Into<String>, downloads_url: impl Into<String>) -> Self {
        LiveRegistry {
            registry_url: registry_url.into().trim_end_matches('/').to_string(),
            downloads_url: downloads_url.into().trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build(),
        }
    }

    /// Reads `PKGCOV_REGISTRY_URL` and `PKGCOV_DOWNLOADS_URL`.
    pub fn from_env() -> Self {
        Self::new(
            std::env::var("PKGCOV_REGISTRY_URL").unwrap_or_else(|_| Self::DEFAULT_REGISTRY.into()),
            std::env::var("PKGCOV_DOWNLOADS_URL").unwrap_or_else(|_| Self::DEFAULT_DOWNLOADS.into()),
        )
    }

    fn get(&self, url: &str) -> Result<ureq::Response, RegistryError> {
        match self.agent.get(url).call() {
            Ok(r) => Ok(r),
            Err(ureq::Error::Status(404, _)) => Err(RegistryError::NotFound(url.to_string())),
            Err(ureq::Error::Status(code, _)) if code < 500 && code != 429 => {
                Err(RegistryError::MalformedMetadata(format!("{url}: HTTP {code}")))
            }
            Err(e) => Err(RegistryError::ProviderUnavailable(format!("{url}: {e}"))),
        }
    }

    fn get_json(&self, url: &str) -> Result<serde_json::Value, RegistryError> {
        self.get(url)?
            .into_json()
            .map_err(|e| RegistryError::ProviderUnavailable(format!("{url}: {e}")))
    }

    fn encoded(name: &str) -> String {
        name.replace('/', "%2F")
    }
}

/// Extracts one version from a registry packument document.
pub fn parse_packument(doc: &serde_json::Value, name: &str, version: &str) -> Result<PackageMetadata, RegistryError> {
    let not_found = || RegistryError::NotFound(format!("{name}@{version}"));
    let v = doc
        .get("versions")
        .and_then(|vs| vs.get(version))
        .ok_or_else(not_found)?;
    let date = doc
        .get("time")
        .and_then(|t| t.get(version))
        .and_then(|t| t.as_str())
        .ok_or_else(|| RegistryError::MalformedMetadata(format!("{name}@{version}: no release date")))?;
    let release_date = DateTime::parse_from_rfc3339(date)
        .map_err(|e| RegistryError::MalformedMetadata(format!("{name}@{version}: {e}")))?
        .with_timezone(&Utc);
    let repo_url = match v.get("repository") {
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        Some(r) => r.get("url").and_then(|u| u.as_str()).map(str::to_string),
        None => None,
    };
    let tarball_url = v
        .get("dist")
        .and_then(|d| d.get("tarball"))
        .and_then(|t| t.as_str())
        .ok_or_else(|| RegistryError::MalformedMetadata(format!("{name}@{version}: no tarball")))?
        .to_string();
    let dependencies = v
        .get("dependencies")
        .and_then(|d| d.as_object())
        .map(|o| {
            o.iter()
                .filter_map(|(k, v)| v.as_str().map(|s| (k.clone(), s.to_string())))
                .collect()
        })
        .unwrap_or_default();
    Ok(PackageMetadata {
        package: PackageRef::new(name, version)?,
        release_date,
        repo_url,
        tarball_url,
        dependencies,
    })
}

impl RegistryProvider for LiveRegistry {
    fn metadata(&self, name: &str, version: &str) -> Result<PackageMetadata, RegistryError> {
        let doc = self.get_json(&format!("{}/{}", self.registry_url, Self::encoded(name)))?;
        parse_packument(&doc, name, version)
    }

    fn tarball(&self, meta: &PackageMetadata) -> Result<Vec<u8>, RegistryError> {
        let url = if meta.tarball_url.is_empty() {
            let base = meta.package.name.rsplit('/').next().unwrap_or(&meta.package.name);
            format!(
                "{}/{}/-/{}-{}.tgz",
                self.registry_url, meta.package.name, base, meta.package.version
            )
        } else {
            meta.tarball_url.clone()
        };
        let mut buf = Vec::new();
        self.get(&url)?
            .into_reader()
            .read_to_end(&mut buf)
            .map_err(|e| RegistryError::ProviderUnavailable(format!("{url}: {e}")))?;
        Ok(buf)
    }

    fn avg_daily_downloads(&self, name: &str) -> Result<f64, RegistryError> {
        let url = format!("{}/point/last-year/{}", self.downloads_url, name);
        let doc = self.get_json(&url)?;
        let total = doc
            .get("downloads")
            .and_then(|d| d.as_f64())
            .ok_or_else(|| RegistryError::MalformedMetadata(format!("{url}: no downloads field")))?;
        Ok(total / 365.0)
    }
}
