//! Harvesting tests of dependent packages that exercise the target.

mod pin;
mod trace;

#[cfg(test)]
mod tests;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::{include_test, Normalizer, Provenance, TestRecord, TestRecordFile, TestStatus};
use crate::hash::sha256_hex;
use crate::registry::{semver_compatible, DependentInfo, PackageMetadata, PackageRef, RegistryClient, Release};
use crate::repo::{
    evaluate_revision, run_workspace, select_candidate_revisions, CheckoutMode, CoverageTarget, PatchedWorkspace,
    RepoProvider, Revision, RevisionKind, RevisionOutcome,
};
use crate::sandbox::{FailureCause, Runner, TestEvaluation};

pub use pin::{pin_target_version, PinChange};
pub use trace::{cumulative_trace, SearchTrace, TraceEntry};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DependentError {
    #[error("{dependent} does not declare a dependency on {target}")]
    TargetNotDeclared { dependent: String, target: String },
    #[error("malformed package.json: {0}")]
    MalformedManifest(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for DependentError {
    fn from(e: std::io::Error) -> Self {
        DependentError::Io(e.to_string())
    }
}

pub const DEFAULT_MAX_DEPENDENTS: usize = 1500;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub max_dependents: usize,
    pub workers: usize,
    pub stability_runs: usize,
    pub timing_runs: usize,
    /// Stop once combined statement coverage reaches this fraction.
    #[serde(default)]
    pub target_coverage: Option<f64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_dependents: DEFAULT_MAX_DEPENDENTS,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            stability_runs: crate::sandbox::DEFAULT_STABILITY_RUNS,
            timing_runs: crate::sandbox::DEFAULT_TIMING_RUNS,
            target_coverage: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "cause", rename_all = "snake_case")]
pub enum Outcome {
    Included,
    ZeroCoverage,
    Failed(FailureCause),
    Flaky,
    Incompatible,
}

impl Outcome {
    pub fn label(&self) -> String {
        match self {
            Outcome::Included => "included".into(),
            Outcome::ZeroCoverage => "zero_coverage".into(),
            Outcome::Failed(c) => match c {
                FailureCause::MissingModule(n) => format!("failed:missing_module:{n}"),
                FailureCause::MissingCommand(n) => format!("failed:missing_command:{n}"),
                FailureCause::MissingSystemLibrary(n) => format!("failed:missing_system_library:{n}"),
                FailureCause::Timeout => "failed:timeout".into(),
                FailureCause::NonZeroTestCase => "failed:non_zero_test_case".into(),
                FailureCause::Unknown => "failed:unknown".into(),
            },
            Outcome::Flaky => "flaky".into(),
            Outcome::Incompatible => "incompatible".into(),
        }
    }
}

/// Everything the search needs besides the dependent list.
pub struct SearchContext<'a> {
    pub registry: &'a RegistryClient,
    pub repos: &'a dyn RepoProvider,
    pub runner: Runner<'a>,
    pub target: &'a PackageMetadata,
    pub target_release: &'a Release,
    pub normalizer: &'a Normalizer,
    pub work_dir: PathBuf,
    /// Evaluations found here under the current config hash are reused.
    pub cache_dir: Option<PathBuf>,
    /// Also add an `overrides` entry so transitive resolution keeps the pin.
    pub pin_resolution: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DependentResult {
    pub dependent: PackageRef,
    pub outcome: Outcome,
    pub record: Option<TestRecord>,
    /// Workspace key of the evaluated revision, when one ran.
    pub workspace_key: Option<String>,
    pub workspace: Option<PathBuf>,
    pub evaluation: Option<TestEvaluation>,
    pub diagnostics: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CachedResult {
    config_hash: String,
    dependent: PackageRef,
    outcome: Outcome,
    record: Option<TestRecordFile>,
    workspace_key: Option<String>,
    workspace: Option<PathBuf>,
    evaluation: Option<TestEvaluation>,
    diagnostics: Vec<String>,
}

impl SearchContext<'_> {
    fn target_ref(&self) -> &PackageRef {
        &self.target.package
    }

    /// Hash of everything that influences one dependent's evaluation.
    pub fn config_hash(&self, config: &SearchConfig) -> String {
        let key = serde_json::json!({
            "target": self.target_ref(),
            "universe": self.normalizer.universe().digest(),
            "stability_runs": config.stability_runs,
            "timing_runs": config.timing_runs,
            "spec": self.runner.spec,
            "pin_resolution": self.pin_resolution,
        });
        sha256_hex(key.to_string().as_bytes())
    }

    fn cache_path(&self, dep: &PackageRef) -> Option<PathBuf> {
        self.cache_dir
            .as_ref()
            .map(|d| d.join(format!("{}.json", dep.dir_name())))
    }

    fn load_cached(&self, dep: &PackageRef, hash: &str) -> Option<DependentResult> {
        let bytes = fs::read(self.cache_path(dep)?).ok()?;
        let c: CachedResult = serde_json::from_slice(&bytes).ok()?;
        if c.config_hash != hash || &c.dependent != dep {
            return None;
        }
        let record = match &c.record {
            Some(r) => Some(TestRecord::from_file(r, self.normalizer.universe()).ok()?),
            None => None,
        };
        Some(DependentResult {
            dependent: c.dependent,
            outcome: c.outcome,
            record,
            workspace_key: c.workspace_key,
            workspace: c.workspace,
            evaluation: c.evaluation,
            diagnostics: c.diagnostics,
        })
    }

    fn store_cached(&self, result: &DependentResult, hash: &str) {
        let Some(path) = self.cache_path(&result.dependent) else {
            return;
        };
        let c = CachedResult {
            config_hash: hash.to_string(),
            dependent: result.dependent.clone(),
            outcome: result.outcome.clone(),
            record: result.record.as_ref().map(TestRecord::to_file),
            workspace_key: result.workspace_key.clone(),
            workspace: result.workspace.clone(),
            evaluation: result.evaluation.clone(),
            diagnostics: result.diagnostics.clone(),
        };
        let write = || -> std::io::Result<()> {
            fs::create_dir_all(path.parent().expect("has parent"))?;
            let tmp = path.with_extension("json.partial");
            fs::write(&tmp, serde_json::to_vec_pretty(&c).expect("serializable"))?;
            fs::rename(&tmp, &path)
        };
        if let Err(e) = write() {
            log::warn!("cannot cache {}: {e}", result.dependent);
        }
    }
}

fn failed(dependent: PackageRef, outcome: Outcome, diagnostic: String) -> DependentResult {
    DependentResult {
        dependent,
        outcome,
        record: None,
        workspace_key: None,
        workspace: None,
        evaluation: None,
        diagnostics: vec![diagnostic],
    }
}

fn status_rank(s: TestStatus) -> u8 {
    match s {
        TestStatus::Pass => 0,
        TestStatus::Flaky => 1,
        TestStatus::Fail => 2,
    }
}

/// Fetches the dependent release, locates its tests like the target's own,
/// pins the target version and runs them with coverage of the target.
/// Problems become outcomes; nothing here aborts the search.
pub fn evaluate_dependent(dep: &DependentInfo, ctx: &SearchContext<'_>) -> DependentResult {
    let Ok(dep_ref) = dep.package() else {
        return failed(
            PackageRef {
                name: dep.name.clone(),
                version: "0.0.0".into(),
            },
            Outcome::Incompatible,
            format!("{}@{}: not an exact version", dep.name, dep.version),
        );
    };
    match evaluate_inner(dep, &dep_ref, ctx) {
        Ok(r) => r,
        Err(diagnostic) => failed(dep_ref, Outcome::Failed(FailureCause::Unknown), diagnostic),
    }
}

fn evaluate_inner(
    dep: &DependentInfo,
    dep_ref: &PackageRef,
    ctx: &SearchContext<'_>,
) -> Result<DependentResult, String> {
    let target = ctx.target_ref();
    let meta = ctx
        .registry
        .fetch_metadata(&dep.name, &dep.version)
        .map_err(|e| format!("{dep_ref}: {e}"))?;
    match meta.dependencies.get(&target.name) {
        Some(range) if semver_compatible(range, &target.version).unwrap_or(false) => {}
        _ => {
            return Ok(failed(
                dep_ref.clone(),
                Outcome::Incompatible,
                format!("{dep_ref}: release does not admit {target}"),
            ))
        }
    }
    let release = ctx
        .registry
        .download_release(&meta)
        .map_err(|e| format!("{dep_ref}: {e}"))?;
    let cov_target = CoverageTarget {
        normalizer: ctx.normalizer,
        manifest: &ctx.target_release.manifest,
        prefix: format!("node_modules/{}", target.name),
    };
    let pin_resolution = ctx.pin_resolution;
    let prepare = move |dir: &Path| -> Result<(), String> {
        pin_target_version(dir, target, pin_resolution)
            .map(|_| ())
            .map_err(|e| e.to_string())
    };
    let work_dir = ctx.work_dir.join(dep_ref.dir_name());
    let mut diagnostics = Vec::new();

    let mut outcomes: Vec<RevisionOutcome> = Vec::new();
    let repo = meta.repo_url.as_deref().and_then(|url| match ctx.repos.revisions(url) {
        Ok(revs) => Some((url, revs)),
        Err(e) => {
            diagnostics.push(format!("{dep_ref}: {e}"));
            None
        }
    });
    let candidates: Vec<Revision> = match &repo {
        Some((_, revs)) => select_candidate_revisions(revs, &dep_ref.version, meta.release_date).unwrap_or_else(|e| {
            diagnostics.push(format!("{dep_ref}: {e}"));
            Vec::new()
        }),
        None => Vec::new(),
    };
    if let Some((url, _)) = repo {
        for rev in &candidates {
            match evaluate_revision(
                &meta,
                &release,
                ctx.repos,
                url,
                rev,
                CheckoutMode::Patched,
                ctx.runner,
                &work_dir,
                &cov_target,
                &prepare,
            ) {
                Ok(o) => {
                    diagnostics.extend(o.diagnostics.iter().cloned());
                    let included = o.included();
                    outcomes.push(o);
                    if included {
                        break;
                    }
                }
                Err(e) => diagnostics.push(format!("{dep_ref}@{}: {e}", rev.id)),
            }
        }
    }
    if outcomes.is_empty() {
        // No usable repository: fall back to tests shipped in the release.
        let dir = work_dir.join("npm");
        copy_tree(&release.dir, &dir).map_err(|e| format!("{dep_ref}: {e}"))?;
        let patched = PatchedWorkspace {
            path: dir,
            base_revision: Revision {
                id: "npm".into(),
                date: meta.release_date,
                kind: RevisionKind::Release,
            },
            replaced_files: Vec::new(),
            unresolved_files: Vec::new(),
        };
        let o = run_workspace(format!("{dep_ref}~npm"), patched, ctx.runner, &cov_target, &prepare)
            .map_err(|e| format!("{dep_ref}: {e}"))?;
        diagnostics.extend(o.diagnostics.iter().cloned());
        outcomes.push(o);
    }

    let chosen = outcomes
        .iter()
        .find(|o| o.included())
        .or_else(|| outcomes.iter().min_by_key(|o| status_rank(o.evaluation.status)))
        .expect("at least one outcome");
    let revision = chosen.patched.base_revision.id.clone();
    let record = chosen.record(
        format!("dependent:{dep_ref}:0"),
        Provenance::Dependent {
            package: dep_ref.clone(),
            revision,
        },
    );
    let outcome = if include_test(&record) {
        Outcome::Included
    } else {
        match record.status {
            TestStatus::Pass => Outcome::ZeroCoverage,
            TestStatus::Flaky => Outcome::Flaky,
            TestStatus::Fail => {
                let not_declared = chosen
                    .evaluation
                    .diagnostic
                    .as_deref()
                    .is_some_and(|d| d.contains("does not declare"));
                if not_declared {
                    Outcome::Incompatible
                } else {
                    Outcome::Failed(chosen.evaluation.cause.clone().unwrap_or(FailureCause::Unknown))
                }
            }
        }
    };
    Ok(DependentResult {
        dependent: dep_ref.clone(),
        outcome,
        record: Some(record),
        workspace_key: Some(chosen.workspace_key.clone()),
        workspace: Some(chosen.patched.path.clone()),
        evaluation: Some(chosen.evaluation.clone()),
        diagnostics,
    })
}

fn copy_tree(src: &Path, dst: &Path) -> std::io::Result<()> {
    if dst.exists() {
        fs::remove_dir_all(dst)?;
    }
    for entry in walkdir::WalkDir::new(src).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(src).expect("below root");
        let target = dst.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target)?;
        } else if entry.file_type().is_file() {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

/// Search output. `records` holds only included tests, in rank order.
#[derive(Clone, Debug)]
pub struct SearchResult {
    pub results: Vec<DependentResult>,
    pub records: Vec<TestRecord>,
    pub trace: SearchTrace,
}

/// Evaluates up to `config.max_dependents` dependents on `config.workers`
/// threads. Results are reduced in rank order, so the outcome does not
/// depend on the worker count. `preloaded` (the original tests) seeds the
/// combined curve.
pub fn run_search(
    deps: &[DependentInfo],
    ctx: &SearchContext<'_>,
    config: &SearchConfig,
    preloaded: &[TestRecord],
) -> Result<SearchResult, rayon::ThreadPoolBuildError> {
    let deps = &deps[..deps.len().min(config.max_dependents)];
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()?;
    let hash = ctx.config_hash(config);
    let eval = |dep: &DependentInfo| -> DependentResult {
        if let Ok(r) = dep.package() {
            if let Some(cached) = ctx.load_cached(&r, &hash) {
                return cached;
            }
        }
        let result = evaluate_dependent(dep, ctx);
        ctx.store_cached(&result, &hash);
        result
    };

    let mut results: Vec<DependentResult> = Vec::with_capacity(deps.len());
    let chunk = match config.target_coverage {
        Some(_) => config.workers.max(1),
        None => deps.len().max(1),
    };
    for batch in deps.chunks(chunk) {
        let done: Vec<DependentResult> = pool.install(|| batch.par_iter().map(eval).collect());
        results.extend(done);
        if let Some(goal) = config.target_coverage {
            let trace = cumulative_trace(ctx.normalizer.universe(), preloaded, &results);
            if let Some(stop) = trace.first_reaching(goal) {
                results.truncate(stop + 1);
                break;
            }
        }
    }

    let trace = cumulative_trace(ctx.normalizer.universe(), preloaded, &results);
    let records = results
        .iter()
        .filter(|r| r.outcome == Outcome::Included)
        .filter_map(|r| r.record.clone())
        .collect();
    Ok(SearchResult {
        results,
        records,
        trace,
    })
}
