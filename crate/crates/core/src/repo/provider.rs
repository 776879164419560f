use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use walkdir::WalkDir;

use super::{RepoError, Revision, RevisionKind};
use crate::hash::sha256_hex;

pub trait RepoProvider: Send + Sync {
    fn revisions(&self, url: &str) -> Result<Vec<Revision>, RepoError>;
    /// Writes the tree of `revision` into the empty directory `dest`.
    fn checkout(&self, url: &str, revision: &Revision, dest: &Path) -> Result<(), RepoError>;
}

/// `https://host/org/alpha.git` -> `alpha`.
pub fn repo_name(url: &str) -> &str {
    let trimmed = url.trim_end_matches('/');
    let last = trimmed.rsplit(['/', ':']).next().unwrap_or(trimmed);
    last.strip_suffix(".git").unwrap_or(last)
}

/// `repos/<name>/{revisions.json, trees/<revision-id>/...}`.
pub struct FixtureRepos {
    root: PathBuf,
}

impl FixtureRepos {
    pub fn new(fixture_root: &Path) -> Self {
        FixtureRepos {
            root: fixture_root.join("repos"),
        }
    }

    fn dir(&self, url: &str) -> Result<PathBuf, RepoError> {
        let dir = self.root.join(repo_name(url));
        if !dir.is_dir() {
            return Err(RepoError::CloneFailure {
                url: url.into(),
                reason: format!("no fixture repository at {}", dir.display()),
            });
        }
        Ok(dir)
    }
}

impl RepoProvider for FixtureRepos {
    fn revisions(&self, url: &str) -> Result<Vec<Revision>, RepoError> {
        let path = self.dir(url)?.join("revisions.json");
        let bytes = fs::read(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| RepoError::Io(format!("{}: {e}", path.display())))
    }

    fn checkout(&self, url: &str, revision: &Revision, dest: &Path) -> Result<(), RepoError> {
        let tree = self.dir(url)?.join("trees").join(&revision.id);
        if !tree.is_dir() {
            return Err(RepoError::UnknownRevision(revision.id.clone()));
        }
        for entry in WalkDir::new(&tree).sort_by_file_name() {
            let entry = entry.map_err(|e| RepoError::Io(e.to_string()))?;
            let rel = entry.path().strip_prefix(&tree).expect("walk stays below root");
            let target = dest.join(rel);
            if entry.file_type().is_dir() {
                fs::create_dir_all(&target)?;
            } else if entry.file_type().is_file() {
                fs::copy(entry.path(), &target)?;
            }
        }
        Ok(())
    }
}

/// Uses the system `git`. Each URL is cloned once (bare) below `cache_dir`;
/// checkouts are exported with `git archive`.
pub struct GitRepos {
    cache_dir: PathBuf,
    lock: Mutex<()>,
}

impl GitRepos {
    pub fn new(cache_dir: impl Into<PathBuf>) -> Self {
        GitRepos {
            cache_dir: cache_dir.into(),
            lock: Mutex::new(()),
        }
    }

    fn clone_dir(&self, url: &str) -> Result<PathBuf, RepoError> {
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        let dir = self.cache_dir.join("repos").join(&sha256_hex(url.as_bytes())[..16]);
        if dir.join("HEAD").exists() {
            return Ok(dir);
        }
        fs::create_dir_all(dir.parent().expect("has parent"))?;
        let out = Command::new("git")
            .args(["clone", "--quiet", "--bare", url])
            .arg(&dir)
            .env("GIT_TERMINAL_PROMPT", "0")
            .output()
            .map_err(|e| RepoError::CloneFailure {
                url: url.into(),
                reason: e.to_string(),
            })?;
        if !out.status.success() {
            let _ = fs::remove_dir_all(&dir);
            return Err(RepoError::CloneFailure {
                url: url.into(),
                reason: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(dir)
    }

    fn git(dir: &Path, args: &[&str]) -> Result<Vec<u8>, RepoError> {
        let out = Command::new("git").arg("--git-dir").arg(dir).args(args).output()?;
        if !out.status.success() {
            return Err(RepoError::Io(format!(
                "git {}: {}",
                args.join(" "),
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(out.stdout)
    }
}

fn parse_listing(text: &str, kind: RevisionKind) -> Vec<Revision> {
    text.lines()
        .filter_map(|line| {
            let (id, date) = line.split_once('\t')?;
            let date = DateTime::parse_from_rfc3339(date.trim()).ok()?.with_timezone(&Utc);
            Some(Revision {
                id: id.to_string(),
                date,
                kind,
            })
        })
        .collect()
}

impl RepoProvider for GitRepos {
    fn revisions(&self, url: &str) -> Result<Vec<Revision>, RepoError> {
        let dir = self.clone_dir(url)?;
        let tags = Self::git(
            &dir,
            &[
                "for-each-ref",
                "--format=%(refname:short)\t%(creatordate:iso-strict)",
                "refs/tags",
            ],
        )?;
        let commits = Self::git(&dir, &["log", "--format=%H\t%cI", "HEAD"])?;
        let mut out = parse_listing(&String::from_utf8_lossy(&tags), RevisionKind::Release);
        out.extend(parse_listing(&String::from_utf8_lossy(&commits), RevisionKind::Commit));
        Ok(out)
    }

    fn checkout(&self, url: &str, revision: &Revision, dest: &Path) -> Result<(), RepoError> {
        let dir = self.clone_dir(url)?;
        let tar = Self::git(&dir, &["archive", "--format=tar", &revision.id])?;
        tar::Archive::new(Cursor::new(tar)).unpack(dest)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repo_names() {
        assert_eq!(repo_name("https://github.com/lodash/lodash.git"), "lodash");
        assert_eq!(repo_name("git@github.com:org/alpha.git"), "alpha");
        assert_eq!(repo_name("https://example.test/beta/"), "beta");
    }

    #[test]
    fn git_listing() {
        let revs = parse_listing("v1.0.0\t2020-01-02T03:04:05+01:00\nbroken\n", RevisionKind::Release);
        assert_eq!(revs.len(), 1);
        assert_eq!(revs[0].date.to_rfc3339(), "2020-01-02T02:04:05+00:00");
    }
}
