//! Registry access: metadata, release tarballs, download statistics and the
//! ranked list of dependents of a package.

mod manifest;
mod package;
mod provider;

use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

pub use manifest::{ArmPosition, FileElements, FileManifest, ManifestEntry, Position};
pub use package::{semver_compatible, DependentInfo, PackageMetadata, PackageRef};
pub use provider::{
    parse_packument, DependentEntry, DependentVersion, DependentsFile, DependentsProvider, FixtureRegistry,
    LiveRegistry, RegistryProvider, StarsFile, StarsProvider,
};

use crate::hash::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("malformed version range {0}")]
    MalformedRange(String),
    #[error("invalid package reference `{0}`")]
    InvalidPackageRef(String),
    #[error("malformed metadata: {0}")]
    MalformedMetadata(String),
    #[error("corrupt tarball: {0}")]
    TarballCorrupt(String),
    #[error("i/o failure: {0}")]
    Io(String),
}

impl RegistryError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, RegistryError::ProviderUnavailable(_))
    }
}

impl From<io::Error> for RegistryError {
    fn from(e: io::Error) -> Self {
        RegistryError::Io(e.to_string())
    }
}

/// Retries [`RegistryError::ProviderUnavailable`] with exponential backoff.
#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, RegistryError>) -> Result<T, RegistryError> {
        let mut delay = self.initial_backoff;
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.attempts => {
                    log::warn!("attempt {attempt} failed: {e}; retrying in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Thresholds of the evaluation-set popularity filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityThresholds {
    /// Inclusive.
    pub min_daily_downloads: f64,
    /// Exclusive: a package needs strictly more stars than this.
    pub min_stars: u64,
    /// Inclusive.
    pub min_dependents: usize,
}

impl Default for PopularityThresholds {
    fn default() -> Self {
        PopularityThresholds {
            min_daily_downloads: 10_000.0,
            min_stars: 100,
            min_dependents: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularityCandidate {
    pub package: PackageRef,
    pub avg_daily_downloads: f64,
    pub stars: u64,
    pub dependents: usize,
}

pub fn popularity_filter(candidates: &[PopularityCandidate], t: &PopularityThresholds) -> Vec<PopularityCandidate> {
    candidates
        .iter()
        .filter(|c| {
            c.avg_daily_downloads >= t.min_daily_downloads && c.stars > t.min_stars && c.dependents >= t.min_dependents
        })
        .cloned()
        .collect()
}

/// An extracted release on disk.
#[derive(Clone, Debug)]
pub struct Release {
    pub dir: PathBuf,
    pub manifest: FileManifest,
}

pub struct RegistryClient {
    registry: Box<dyn RegistryProvider>,
    dependents: Box<dyn DependentsProvider>,
    stars: Box<dyn StarsProvider>,
    cache_dir: PathBuf,
    retry: RetryPolicy,
    // Serializes extraction into the content-addressed cache.
    cache_lock: Mutex<()>,
}

impl RegistryClient {
    pub fn new(
        registry: Box<dyn RegistryProvider>,
        dependents: Box<dyn DependentsProvider>,
        stars: Box<dyn StarsProvider>,
        cache_dir: impl Into<PathBuf>,
    ) -> Self {
        RegistryClient {
            registry,
            dependents,
            stars,
            cache_dir: cache_dir.into(),
            retry: RetryPolicy::default(),
            cache_lock: Mutex::new(()),
        }
    }

    /// All providers backed by one fixture directory.
    pub fn fixture(root: &Path, cache_dir: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        Ok(Self::new(
            Box::new(FixtureRegistry::open(root)?),
            Box::new(DependentsFile::load(&root.join("dependents.json"))?),
            Box::new(StarsFile::load(&root.join("stars.json"))?),
            cache_dir,
        ))
    }

    /// Live registry configured from `PKGCOV_*` environment variables.
    pub fn live_from_env(cache_dir: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let file_env = |var: &str| std::env::var_os(var).map(PathBuf::from);
        let dependents = match file_env("PKGCOV_DEPENDENTS_FILE") {
            Some(p) => DependentsFile::load(&p)?,
            None => DependentsFile::default(),
        };
        let stars = match file_env("PKGCOV_STARS_FILE") {
            Some(p) => StarsFile::load(&p)?,
            None => StarsFile::default(),
        };
        Ok(Self::new(
            Box::new(LiveRegistry::from_env()),
            Box::new(dependents),
            Box::new(stars),
            cache_dir,
        ))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn fetch_metadata(&self, name: &str, version: &str) -> Result<PackageMetadata, RegistryError> {
        self.retry.run(|| self.registry.metadata(name, version))
    }

    pub fn universe_declaration(&self, package: &PackageRef) -> Result<Option<Vec<u8>>, RegistryError> {
        self.retry.run(|| self.registry.universe_declaration(package))
    }

    /// Direct dependents whose declared range admits `target.version`, most
    /// downloaded first (ties by name), at most `max_scan` of them.
    pub fn list_dependents(&self, target: &PackageRef, max_scan: usize) -> Result<Vec<DependentInfo>, RegistryError> {
        let entries = self.retry.run(|| self.dependents.dependents_of(&target.name))?;
        let mut out = Vec::new();
        for entry in entries {
            let Some((version, range)) = latest_compatible(&entry, &target.version) else {
                continue;
            };
            let downloads = self.retry.run(|| self.registry.avg_daily_downloads(&entry.name))?;
            out.push(DependentInfo {
                name: entry.name,
                version,
                declared_range: range,
                avg_daily_downloads: downloads.max(0.0),
            });
        }
        out.sort_by(|a, b| {
            b.avg_daily_downloads
                .total_cmp(&a.avg_daily_downloads)
                .then_with(|| a.name.cmp(&b.name))
        });
        out.truncate(max_scan);
        Ok(out)
    }

    pub fn popularity_candidate(&self, package: &PackageRef) -> Result<PopularityCandidate, RegistryError> {
        let avg_daily_downloads = self.retry.run(|| self.registry.avg_daily_downloads(&package.name))?;
        let stars = self.retry.run(|| self.stars.stars(&package.name))?.unwrap_or(0);
        let dependents = self
            .retry
            .run(|| self.dependents.dependents_of(&package.name))?
            .iter()
            .filter(|e| latest_compatible(e, &package.version).is_some())
            .count();
        Ok(PopularityCandidate {
            package: package.clone(),
            avg_daily_downloads,
            stars,
            dependents,
        })
    }

    /// Downloads and extracts the release into the content-addressed cache.
    /// A second call for the same tarball reuses the extracted copy.
    pub fn download_release(&self, meta: &PackageMetadata) -> Result<Release, RegistryError> {
        let bytes = self.retry.run(|| self.registry.tarball(meta))?;
        let key = sha256_hex(&bytes);
        let dir = self.cache_dir.join("tarballs").join(&key);
        let files = dir.join("package");
        let manifest_path = dir.join("manifest.json");

        let _guard = self.cache_lock.lock().unwrap_or_else(|p| p.into_inner());
        if manifest_path.is_file() {
            let manifest: FileManifest = serde_json::from_slice(&fs::read(&manifest_path)?)
                .map_err(|e| RegistryError::Io(format!("{}: {e}", manifest_path.display())))?;
            return Ok(Release { dir: files, manifest });
        }
        let staging = self.cache_dir.join("tarballs").join(format!("{key}.partial"));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(staging.join("package"))?;
        extract_tgz(&bytes, &staging.join("package"))?;
        let manifest = FileManifest::from_dir(&staging.join("package"))?;
        if manifest.is_empty() {
            return Err(RegistryError::TarballCorrupt(format!("{}: no files", meta.package)));
        }
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        fs::write(staging.join("manifest.json"), json)?;
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::rename(&staging, &dir)?;
        Ok(Release { dir: files, manifest })
    }
}

fn latest_compatible(entry: &DependentEntry, target_version: &str) -> Option<(String, String)> {
    entry
        .versions
        .iter()
        .filter_map(|v| {
            let parsed = node_semver::Version::parse(&v.version).ok()?;
            match semver_compatible(&v.range, target_version) {
                Ok(true) => Some((parsed, v)),
                Ok(false) => None,
                Err(e) => {
                    log::debug!("{}@{}: {e}", entry.name, v.version);
                    None
                }
            }
        })
        .max_by(|a, b| a.0.cmp(&b.0))
        .map(|(_, v)| (v.version.clone(), v.range.clone()))
}

/// Extracts a gzipped tarball, dropping the leading `package/` style
/// directory that registry tarballs wrap their contents in.
pub fn extract_tgz(bytes: &[u8], dest: &Path) -> Result<(), RegistryError> {
    let corrupt = |e: io::Error| RegistryError::TarballCorrupt(e.to_string());
    let mut archive = tar::Archive::new(GzDecoder::new(bytes));
    for entry in archive.entries().map_err(corrupt)? {
        let mut entry = entry.map_err(corrupt)?;
        let path = entry.path().map_err(corrupt)?.into_owned();
        let mut comps = path.components();
        comps.next();
        let rel: PathBuf = comps.collect();
        if rel.as_os_str().is_empty() {
            continue;
        }
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(RegistryError::TarballCorrupt(format!("unsafe path {}", path.display())));
        }
        let kind = entry.header().entry_type();
        let out = dest.join(&rel);
        if kind.is_dir() {
            fs::create_dir_all(&out)?;
        } else if kind.is_file() {
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent)?;
            }
            entry.unpack(&out).map_err(corrupt)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
