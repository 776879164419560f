//! End-to-end driver: assembles a package's suite from registry, repository
//! and dependent tests, compacts it and writes the reports.

mod analyze;
mod manifest;
mod reports;

#[cfg(test)]
mod tests;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::compaction::{branch_and_bound_with_budget, CompactionInstance, DEFAULT_NODE_BUDGET};
use crate::coverage::{
    cov_all, include_test, CoverageKind, CoverageReport, PerKind, Provenance, RawCoverage, TestRecord,
};
use crate::dependents::{run_search, SearchConfig, SearchContext, SearchResult};
use crate::registry::{PackageMetadata, PackageRef, RegistryClient, RegistryError, Release};
use crate::repo::{
    harvest_original_tests, no_prepare, run_workspace, CoverageTarget, FixtureRepos, GitRepos, HarvestOptions,
    PatchedWorkspace, RepoProvider, Revision, RevisionKind, RevisionOutcome,
};
use crate::sandbox::{
    ContainerExecutor, Executor, PipelineConfig, Runner, SandboxConfig, SandboxSpec, ScriptedExecutor, TestEvaluation,
    Workspace,
};

pub use analyze::{analyze, AnalyzeConfig, FindingsFile};
pub use manifest::{
    test_dir_name, write_atomic, write_json, Excluded, SuiteManifest, SuiteTest, Timing, Variant, VariantCoverage,
};
pub use reports::{
    emit_reports, format_duration, threshold_table, CompactionRow, ThresholdCounts, ThresholdTable, COMPACTION_HEADER,
};

#[derive(Debug, Error)]
pub enum AssembleError {
    /// Bad input or an unusable environment; the CLI exits with 2.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<RegistryError> for AssembleError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::Io(m) => AssembleError::Io(std::io::Error::other(m)),
            other => AssembleError::Config(other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mode {
    /// Offline providers and scripted executor rooted at this directory.
    Fixture(PathBuf),
    Live,
}

#[derive(Clone, Debug)]
pub struct AssembleConfig {
    pub target: PackageRef,
    /// Package outputs go to `<out_dir>/<name>@<version>/`.
    pub out_dir: PathBuf,
    pub mode: Mode,
    pub search: SearchConfig,
    pub harvest: HarvestOptions,
    pub compaction: bool,
    pub node_budget: u64,
    pub sandbox: SandboxConfig,
    /// Skip dependents (for npm/original-only runs).
    pub dependents: bool,
}

impl AssembleConfig {
    pub fn new(target: PackageRef, out_dir: impl Into<PathBuf>, mode: Mode) -> Self {
        AssembleConfig {
            target,
            out_dir: out_dir.into(),
            mode,
            search: SearchConfig::default(),
            harvest: HarvestOptions::default(),
            compaction: true,
            node_budget: DEFAULT_NODE_BUDGET,
            sandbox: SandboxConfig::default(),
            dependents: true,
        }
    }

    pub fn package_dir(&self) -> PathBuf {
        self.out_dir.join(self.target.dir_name())
    }
}

/// Backends selected by the mode.
pub struct Providers {
    pub registry: RegistryClient,
    pub repos: Box<dyn RepoProvider>,
    pub executor: Box<dyn Executor>,
    pub spec: SandboxSpec,
    pub pin_resolution: bool,
}

impl Providers {
    pub fn for_config(config: &AssembleConfig) -> Result<Providers, AssembleError> {
        let cache = config.out_dir.join(".cache");
        match &config.mode {
            Mode::Fixture(root) => {
                if !root.is_dir() {
                    return Err(AssembleError::Config(format!(
                        "fixture dir {} does not exist",
                        root.display()
                    )));
                }
                Ok(Providers {
                    registry: RegistryClient::fixture(root, cache)?,
                    repos: Box::new(FixtureRepos::new(root)),
                    executor: Box::new(ScriptedExecutor::new(root)),
                    spec: SandboxSpec::for_fixture(&config.sandbox),
                    pin_resolution: false,
                })
            }
            Mode::Live => {
                let mut spec = SandboxSpec::from_config(&config.sandbox);
                spec.shim_dir = std::env::var_os("PKGCOV_SHIM_DIR").map(PathBuf::from);
                Ok(Providers {
                    registry: RegistryClient::live_from_env(&cache)?,
                    repos: Box::new(GitRepos::new(&cache)),
                    executor: Box::new(ContainerExecutor::default()),
                    spec,
                    pin_resolution: true,
                })
            }
        }
    }
}

/// Fills in element declarations of `release`: from the registry provider
/// when it has them, else from a declare-only run of the executor.
fn attach_universe(
    providers: &Providers,
    meta: &PackageMetadata,
    release: &mut Release,
    work: &Path,
) -> Result<(), String> {
    let decl = match providers
        .registry
        .universe_declaration(&meta.package)
        .map_err(|e| e.to_string())?
    {
        Some(d) => d,
        None => {
            let dir = work.join("declare");
            copy_dir(&release.dir, &dir).map_err(|e| e.to_string())?;
            let ws = Workspace::new(format!("{}~declare", meta.package), dir);
            providers
                .executor
                .declare(&ws, &providers.spec)
                .map_err(|e| e.to_string())?
                .ok_or_else(|| "no element declarations available for the release".to_string())?
        }
    };
    let raw = RawCoverage::parse(&decl).map_err(|e| e.to_string())?;
    release.manifest.attach_declarations(&raw);
    Ok(())
}

fn copy_dir(src: &Path, dst: &Path) -> std::io::Result<()> {
    if dst.exists() {
        fs::remove_dir_all(dst)?;
    }
    for entry in walkdir::WalkDir::new(src).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::other)?;
        let target = dst.join(entry.path().strip_prefix(src).expect("below root"));
        if entry.file_type().is_dir() {
            fs::create_dir_all(&target)?;
        } else if entry.file_type().is_file() {
            fs::copy(entry.path(), &target)?;
        }
    }
    Ok(())
}

fn has_test_script(dir: &Path) -> bool {
    fs::read(dir.join("package.json"))
        .ok()
        .and_then(|b| serde_json::from_slice::<serde_json::Value>(&b).ok())
        .and_then(|v| {
            v.pointer("/scripts/test")
                .and_then(|s| s.as_str())
                .map(|s| !s.trim().is_empty())
        })
        .unwrap_or(false)
}

/// Everything `assemble` produced, in memory.
pub struct Assembly {
    pub manifest: SuiteManifest,
    pub records: Vec<TestRecord>,
    pub search: Option<SearchResult>,
    pub package_dir: PathBuf,
}

struct Evaluated {
    record: TestRecord,
    evaluation: Option<TestEvaluation>,
    workspace: Option<PathBuf>,
    prefix: String,
    reason: Option<String>,
}

fn from_outcome(o: &RevisionOutcome, record: TestRecord, prefix: &str) -> Evaluated {
    Evaluated {
        record,
        evaluation: Some(o.evaluation.clone()),
        workspace: Some(o.patched.path.clone()),
        prefix: prefix.to_string(),
        reason: o.evaluation.diagnostic.clone(),
    }
}

/// Runs the whole pipeline for one package and persists its outputs. Only
/// configuration problems are errors; everything else is a diagnostic.
pub fn assemble(config: &AssembleConfig) -> Result<Assembly, AssembleError> {
    if config.search.max_dependents == 0 {
        return Err(AssembleError::Config("max_dependents must be at least 1".into()));
    }
    if config.search.workers == 0 {
        return Err(AssembleError::Config("workers must be at least 1".into()));
    }
    let providers = Providers::for_config(config)?;
    let package_dir = config.package_dir();
    let work = package_dir.join("work");
    fs::create_dir_all(&work)?;
    let mut diagnostics = Vec::new();

    let meta = providers
        .registry
        .fetch_metadata(&config.target.name, &config.target.version)?;
    let mut release = providers.registry.download_release(&meta)?;
    if let Err(e) = attach_universe(&providers, &meta, &mut release, &work) {
        return Err(AssembleError::Config(format!("{}: {e}", meta.package)));
    }
    let normalizer = crate::coverage::Normalizer::new(meta.package.clone(), &release.manifest)
        .map_err(|e| AssembleError::Config(format!("{}: {e}", meta.package)))?;
    let universe = normalizer.universe().clone();
    write_json(&package_dir.join("release-manifest.json"), &release.manifest)?;

    let pipeline = PipelineConfig {
        stability_runs: config.search.stability_runs,
        timing_runs: config.search.timing_runs,
        ..PipelineConfig::from_config(&config.sandbox)
    };
    let runner = Runner {
        executor: providers.executor.as_ref(),
        spec: &providers.spec,
        pipeline: &pipeline,
    };
    let own = CoverageTarget {
        normalizer: &normalizer,
        manifest: &release.manifest,
        prefix: String::new(),
    };
    let mut evaluated: Vec<Evaluated> = Vec::new();

    // Tests shipped in the release itself.
    if has_test_script(&release.dir) {
        let dir = work.join(meta.package.dir_name()).join("npm");
        copy_dir(&release.dir, &dir)?;
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
        match run_workspace(format!("{}~npm", meta.package), patched, runner, &own, &no_prepare) {
            Ok(o) => {
                diagnostics.extend(o.diagnostics.iter().cloned());
                let rec = o.record("npm:0".into(), Provenance::NpmRelease);
                evaluated.push(from_outcome(&o, rec, ""));
            }
            Err(e) => diagnostics.push(format!("{}: npm-release test not run: {e}", meta.package)),
        }
    } else {
        diagnostics.push(format!("{}: release has no test script", meta.package));
    }

    // Original tests.
    match harvest_original_tests(
        &meta,
        &release,
        providers.repos.as_ref(),
        runner,
        &work,
        &own,
        &no_prepare,
        config.harvest,
    ) {
        Ok(h) => {
            diagnostics.extend(h.diagnostics.iter().cloned());
            for (o, rec) in h.outcomes.iter().zip(h.records()) {
                evaluated.push(from_outcome(o, rec, ""));
            }
            if let Some(dev) = &h.dev_latest {
                let rev = &dev.patched.base_revision.id;
                let included = dev.included();
                diagnostics.push(format!(
                    "{}: dev-latest baseline {rev}: {}",
                    meta.package,
                    if included { "covers the release" } else { "not included" }
                ));
            }
        }
        Err(e) => diagnostics.push(format!("{}: original tests: {e}", meta.package)),
    }

    // Dependent tests.
    let mut search = None;
    if config.dependents {
        let preloaded: Vec<TestRecord> = evaluated
            .iter()
            .map(|e| e.record.clone())
            .filter(include_test)
            .collect();
        match providers
            .registry
            .list_dependents(&meta.package, config.search.max_dependents)
        {
            Ok(deps) => {
                let ctx = SearchContext {
                    registry: &providers.registry,
                    repos: providers.repos.as_ref(),
                    runner,
                    target: &meta,
                    target_release: &release,
                    normalizer: &normalizer,
                    work_dir: work.join("dependents"),
                    cache_dir: Some(package_dir.join("cache")),
                    pin_resolution: providers.pin_resolution,
                };
                let result = run_search(&deps, &ctx, &config.search, &preloaded)
                    .map_err(|e| AssembleError::Config(format!("worker pool: {e}")))?;
                let prefix = format!("node_modules/{}", meta.package.name);
                for r in &result.results {
                    diagnostics.extend(r.diagnostics.iter().cloned());
                    let Some(rec) = &r.record else {
                        continue;
                    };
                    evaluated.push(Evaluated {
                        record: rec.clone(),
                        evaluation: r.evaluation.clone(),
                        workspace: r.workspace.clone(),
                        prefix: prefix.clone(),
                        reason: Some(r.outcome.label()),
                    });
                }
                write_json(&package_dir.join("trace.json"), &result.trace)?;
                write_atomic(
                    &package_dir.join("dependents-report.csv"),
                    result.trace.to_csv().as_bytes(),
                )?;
                search = Some(result);
            }
            Err(e) => diagnostics.push(format!("{}: dependents: {e}", meta.package)),
        }
    }

    // Persist every evaluated test, then keep those satisfying the inclusion rule.
    let tests_dir = package_dir.join("tests");
    let mut suite = Vec::new();
    let mut excluded = Vec::new();
    let mut records = Vec::new();
    for e in &evaluated {
        let dir = tests_dir.join(test_dir_name(&e.record.id));
        match &e.record.report {
            Some(r) => write_json(&dir.join("coverage.json"), &r.to_file())?,
            None => {
                let _ = fs::remove_file(dir.join("coverage.json"));
            }
        }
        let exec = serde_json::json!({
            "record": e.record.to_file(),
            "evaluation": e.evaluation,
            "reason": e.reason,
        });
        write_json(&dir.join("exec.json"), &exec)?;
        if include_test(&e.record) {
            let workspace = e
                .workspace
                .as_ref()
                .and_then(|w| w.strip_prefix(&package_dir).ok())
                .map(Path::to_path_buf)
                .unwrap_or_default();
            suite.push(SuiteTest {
                variant: Variant::of(&e.record.provenance),
                workspace,
                coverage_prefix: e.prefix.clone(),
                record: e.record.to_file(),
            });
            records.push(e.record.clone());
        } else {
            let reason = match (&e.record.status, &e.reason) {
                (_, Some(r)) => r.clone(),
                (crate::coverage::TestStatus::Pass, None) => "covers no element".into(),
                (s, None) => format!("{s:?}").to_lowercase(),
            };
            excluded.push(Excluded {
                id: e.record.id.clone(),
                reason,
            });
        }
    }

    let coverage_of = |filter: &dyn Fn(&Provenance) -> bool| -> PerKind<Option<crate::coverage::CoverageRatio>> {
        let reports: Vec<&CoverageReport> = records
            .iter()
            .filter(|r| filter(&r.provenance))
            .filter_map(|r| r.report.as_ref())
            .collect();
        cov_all(&universe, reports.iter().copied()).expect("reports share the universe")
    };
    let coverage = VariantCoverage {
        npm: coverage_of(&|p| matches!(p, Provenance::NpmRelease)),
        original: coverage_of(&|p| matches!(p, Provenance::OriginalRepo { .. })),
        dependent: coverage_of(&|p| matches!(p, Provenance::Dependent { .. })),
        total: coverage_of(&|_| true),
    };

    let mut compaction = None;
    let mut timing = Timing::default();
    if config.compaction && !records.is_empty() {
        let inst = CompactionInstance::from_reports(
            universe.clone(),
            records.iter().map(|r| {
                (
                    r.id.as_str(),
                    r.report.as_ref().expect("included tests have reports"),
                    r.median_time_ms,
                )
            }),
        );
        match inst {
            Ok(inst) => {
                write_json(&package_dir.join("compaction-instance.json"), &inst.to_file())?;
                let started = Instant::now();
                match branch_and_bound_with_budget(&inst, config.node_budget) {
                    Ok(sol) => {
                        timing.solver_seconds = Some(started.elapsed().as_secs_f64());
                        if !sol.optimal {
                            diagnostics.push(format!("{}: compaction node budget exhausted", meta.package));
                        }
                        write_json(&package_dir.join("compaction-solution.json"), &sol)?;
                        compaction = Some(sol);
                    }
                    Err(e) => diagnostics.push(format!("{}: compaction: {e}", meta.package)),
                }
            }
            Err(e) => diagnostics.push(format!("{}: compaction: {e}", meta.package)),
        }
    }
    write_json(&package_dir.join(Timing::FILE), &timing)?;

    let manifest = SuiteManifest {
        target: meta.package.clone(),
        universe_sha256: universe.digest().to_string(),
        universe_totals: PerKind::from_fn(|k: CoverageKind| universe.len(k)),
        tests: suite,
        excluded,
        coverage,
        compaction,
        diagnostics: diagnostics.iter().map(|d| relativize(d, &package_dir)).collect(),
    };
    write_json(&package_dir.join(SuiteManifest::FILE), &manifest)?;
    emit_reports(std::slice::from_ref(&package_dir), &package_dir.join("reports"))?;
    Ok(Assembly {
        manifest,
        records,
        search,
        package_dir,
    })
}

/// Diagnostics must not embed the absolute output location.
fn relativize(text: &str, base: &Path) -> String {
    let b = base.display().to_string();
    text.replace(&format!("{b}/"), "").replace(&b, ".")
}
