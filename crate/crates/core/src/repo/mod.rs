//! Locating a package's original tests in its development repository.

mod provider;

#[cfg(test)]
mod tests;

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{include_test, NormalizeScope, Normalizer, Provenance, TestRecord, TestStatus};
use crate::registry::{FileManifest, PackageMetadata, Release};
use crate::sandbox::{Runner, SandboxError, TestEvaluation, Workspace};

pub use provider::{repo_name, FixtureRepos, GitRepos, RepoProvider};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RepoError {
    #[error("repository has no revisions")]
    EmptyRepository,
    #[error("no revision matches version {0} or predates its release")]
    NoCandidateRevisions(String),
    #[error("cannot clone {url}: {reason}")]
    CloneFailure { url: String, reason: String },
    #[error("revision {0} not found")]
    UnknownRevision(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

impl From<std::io::Error> for RepoError {
    fn from(e: std::io::Error) -> Self {
        RepoError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RevisionKind {
    /// Tags and releases.
    Release,
    Commit,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Revision {
    pub id: String,
    pub date: DateTime<Utc>,
    pub kind: RevisionKind,
}

/// At most this many version-matching tags are tried.
pub const MAX_TAG_CANDIDATES: usize = 5;

/// Tags whose id contains `version` (newest first, capped), then the latest
/// commit dated no later than `release_date`.
pub fn select_candidate_revisions(
    revisions: &[Revision],
    version: &str,
    release_date: DateTime<Utc>,
) -> Result<Vec<Revision>, RepoError> {
    if revisions.is_empty() {
        return Err(RepoError::EmptyRepository);
    }
    let mut tags: Vec<&Revision> = revisions
        .iter()
        .filter(|r| r.kind == RevisionKind::Release && r.id.contains(version))
        .collect();
    tags.sort_by(|a, b| b.date.cmp(&a.date).then_with(|| a.id.cmp(&b.id)));
    let mut out: Vec<Revision> = Vec::new();
    for t in tags {
        if out.len() == MAX_TAG_CANDIDATES {
            break;
        }
        if !out.iter().any(|r| r.id == t.id) {
            out.push(t.clone());
        }
    }
    let last_commit = revisions
        .iter()
        .filter(|r| r.kind == RevisionKind::Commit && r.date <= release_date)
        .max_by(|a, b| a.date.cmp(&b.date).then_with(|| b.id.cmp(&a.id)));
    if let Some(c) = last_commit {
        if !out.iter().any(|r| r.id == c.id) {
            out.push(c.clone());
        }
    }
    if out.is_empty() {
        return Err(RepoError::NoCandidateRevisions(version.to_string()));
    }
    Ok(out)
}

/// Latest commit of the default branch, for the unpatched baseline.
pub fn latest_commit(revisions: &[Revision]) -> Option<&Revision> {
    revisions
        .iter()
        .filter(|r| r.kind == RevisionKind::Commit)
        .max_by(|a, b| a.date.cmp(&b.date).then_with(|| b.id.cmp(&a.id)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchedWorkspace {
    pub path: PathBuf,
    pub base_revision: Revision,
    pub replaced_files: Vec<String>,
    pub unresolved_files: Vec<String>,
}

/// Overwrites every manifest file that is missing or differs in `checkout`
/// with the release copy. Other files are left alone.
pub fn patch_to_release(
    checkout: &Path,
    manifest: &FileManifest,
    release_files: &Path,
    base_revision: Revision,
) -> Result<PatchedWorkspace, RepoError> {
    let mut replaced_files = Vec::new();
    let mut unresolved_files = Vec::new();
    for rel in manifest.mismatches(checkout) {
        let src = release_files.join(&rel);
        let dst = checkout.join(&rel);
        if !src.is_file() {
            unresolved_files.push(rel);
            continue;
        }
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent)?;
        }
        if dst.is_dir() {
            fs::remove_dir_all(&dst)?;
        }
        fs::copy(&src, &dst)?;
        replaced_files.push(rel);
    }
    Ok(PatchedWorkspace {
        path: checkout.to_path_buf(),
        base_revision,
        replaced_files,
        unresolved_files,
    })
}

/// Where covered files of the target live inside a test workspace.
pub struct CoverageTarget<'a> {
    pub normalizer: &'a Normalizer,
    pub manifest: &'a FileManifest,
    /// Empty when the tests run inside the target itself.
    pub prefix: String,
}

/// The outcome of running one revision's tests.
#[derive(Clone, Debug)]
pub struct RevisionOutcome {
    pub workspace_key: String,
    pub patched: PatchedWorkspace,
    pub evaluation: TestEvaluation,
    pub report: Option<crate::coverage::CoverageReport>,
    pub diagnostics: Vec<String>,
}

impl RevisionOutcome {
    pub fn record(&self, id: String, provenance: Provenance) -> TestRecord {
        TestRecord {
            id,
            provenance,
            status: self.evaluation.status,
            median_time_ms: self.evaluation.median_time_ms,
            report: self.report.clone(),
            stderr_tail: self.evaluation.stderr_tail(),
        }
    }

    pub fn included(&self) -> bool {
        include_test(&self.record(String::new(), Provenance::NpmRelease))
    }
}

/// Hook run on the patched checkout before install, e.g. to pin a
/// dependency. An error marks the revision as failed.
pub type Prepare<'a> = &'a (dyn Fn(&Path) -> Result<(), String> + Sync);

pub fn no_prepare(_: &Path) -> Result<(), String> {
    Ok(())
}

/// Uniform per-revision directory and workspace-key naming.
pub fn workspace_key(package: &PackageMetadata, revision: &str) -> String {
    format!("{}~{}", package.package, sanitize(revision))
}

pub fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_' | '@' | '+') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckoutMode {
    Patched,
    /// Unpatched checkout, keyed with a `~dev` suffix.
    DevBaseline,
}

/// Checks out `revision` into a private directory under `work_dir`, patches
/// it to `release`, runs the test pipeline and normalizes its coverage.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_revision(
    package: &PackageMetadata,
    release: &Release,
    repos: &dyn RepoProvider,
    repo_url: &str,
    revision: &Revision,
    mode: CheckoutMode,
    runner: Runner<'_>,
    work_dir: &Path,
    target: &CoverageTarget<'_>,
    prepare: Prepare<'_>,
) -> Result<RevisionOutcome, RepoError> {
    let mut key = workspace_key(package, &revision.id);
    let mut dest = work_dir.join(package.package.dir_name()).join(sanitize(&revision.id));
    if mode == CheckoutMode::DevBaseline {
        key.push_str("~dev");
        dest.as_mut_os_string().push("~dev");
    }
    if dest.exists() {
        fs::remove_dir_all(&dest)?;
    }
    fs::create_dir_all(&dest)?;
    repos.checkout(repo_url, revision, &dest)?;
    let patched = if mode == CheckoutMode::Patched {
        patch_to_release(&dest, &release.manifest, &release.dir, revision.clone())?
    } else {
        PatchedWorkspace {
            path: dest.clone(),
            base_revision: revision.clone(),
            replaced_files: Vec::new(),
            unresolved_files: Vec::new(),
        }
    };
    run_workspace(key, patched, runner, target, prepare)
}

/// Runs the pipeline in an already prepared directory.
pub fn run_workspace(
    key: String,
    patched: PatchedWorkspace,
    runner: Runner<'_>,
    target: &CoverageTarget<'_>,
    prepare: Prepare<'_>,
) -> Result<RevisionOutcome, RepoError> {
    let mut diagnostics = Vec::new();
    let ws = Workspace::new(key.clone(), patched.path.clone());
    if let Err(e) = prepare(&patched.path) {
        diagnostics.push(format!("{key}: {e}"));
        let evaluation = TestEvaluation {
            status: TestStatus::Fail,
            cause: None,
            diagnostic: Some(e),
            median_time_ms: 0.0,
            remediation: Default::default(),
            phases: Vec::new(),
            raw_coverage: None,
        };
        return Ok(RevisionOutcome {
            workspace_key: key,
            patched,
            evaluation,
            report: None,
            diagnostics,
        });
    }
    let mut evaluation = runner.evaluate(&ws)?;
    if let Some(d) = &evaluation.diagnostic {
        diagnostics.push(format!("{key}: {d}"));
    }
    let report = match evaluation.raw_coverage.as_deref() {
        Some(raw) => {
            let scope = NormalizeScope::observe(&patched.path, &target.prefix, target.manifest);
            match target.normalizer.normalize(raw, &scope) {
                Ok(r) => Some(r),
                Err(e) => {
                    diagnostics.push(format!("{key}: {e}"));
                    evaluation.status = TestStatus::Fail;
                    evaluation.diagnostic = Some(e.to_string());
                    None
                }
            }
        }
        None => None,
    };
    Ok(RevisionOutcome {
        workspace_key: key,
        patched,
        evaluation,
        report,
        diagnostics,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HarvestOptions {
    /// Evaluate every candidate instead of stopping at the first included one.
    pub all_revisions: bool,
    /// Also run the unpatched latest default-branch commit.
    pub dev_latest: bool,
}

/// Original tests of one package.
#[derive(Clone, Debug, Default)]
pub struct Harvest {
    pub candidates: Vec<Revision>,
    pub outcomes: Vec<RevisionOutcome>,
    pub dev_latest: Option<RevisionOutcome>,
    pub diagnostics: Vec<String>,
}

impl Harvest {
    /// Records whose revision was evaluated; the dev baseline is separate.
    pub fn records(&self) -> Vec<TestRecord> {
        self.outcomes
            .iter()
            .map(|o| {
                let rev = &o.patched.base_revision.id;
                o.record(
                    format!("original:{rev}:0"),
                    Provenance::OriginalRepo { revision: rev.clone() },
                )
            })
            .collect()
    }
}

/// Runs candidate revisions of `package`'s repository in order, stopping at
/// the first whose test satisfies the inclusion rule.
#[allow(clippy::too_many_arguments)]
pub fn harvest_original_tests(
    package: &PackageMetadata,
    release: &Release,
    repos: &dyn RepoProvider,
    runner: Runner<'_>,
    work_dir: &Path,
    target: &CoverageTarget<'_>,
    prepare: Prepare<'_>,
    options: HarvestOptions,
) -> Result<Harvest, RepoError> {
    let mut harvest = Harvest::default();
    let Some(url) = package.repo_url.as_deref() else {
        harvest
            .diagnostics
            .push(format!("{}: no repository url", package.package));
        return Ok(harvest);
    };
    let revisions = repos.revisions(url)?;
    harvest.candidates = select_candidate_revisions(&revisions, &package.package.version, package.release_date)?;
    for rev in harvest.candidates.clone() {
        let outcome = match evaluate_revision(
            package,
            release,
            repos,
            url,
            &rev,
            CheckoutMode::Patched,
            runner,
            work_dir,
            target,
            prepare,
        ) {
            Ok(o) => o,
            Err(e) => {
                harvest
                    .diagnostics
                    .push(format!("{}: revision {}: {e}", package.package, rev.id));
                continue;
            }
        };
        harvest.diagnostics.extend(outcome.diagnostics.iter().cloned());
        let included = outcome.included();
        harvest.outcomes.push(outcome);
        if included && !options.all_revisions {
            break;
        }
    }
    if !harvest.outcomes.iter().any(RevisionOutcome::included) {
        harvest
            .diagnostics
            .push(format!("{}: NoOriginalTests", package.package));
    }
    if options.dev_latest {
        if let Some(rev) = latest_commit(&revisions) {
            match evaluate_revision(
                package,
                release,
                repos,
                url,
                rev,
                CheckoutMode::DevBaseline,
                runner,
                work_dir,
                target,
                prepare,
            ) {
                Ok(o) => harvest.dev_latest = Some(o),
                Err(e) => harvest
                    .diagnostics
                    .push(format!("{}: dev-latest {}: {e}", package.package, rev.id)),
            }
        }
    }
    Ok(harvest)
}
