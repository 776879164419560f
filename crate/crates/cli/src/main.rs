use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pkgcov_core::analysis::{AnalysisSpec, SuiteVariant};
use pkgcov_core::compaction::{branch_and_bound_with_budget, CompactionInstance, InstanceFile, DEFAULT_NODE_BUDGET};
use pkgcov_core::dependents::DEFAULT_MAX_DEPENDENTS;
use pkgcov_core::orchestrator::{
    analyze, assemble, emit_reports, write_json, AnalyzeConfig, AssembleConfig, AssembleError, FindingsFile, Mode,
    SuiteManifest,
};
use pkgcov_core::registry::PackageRef;
use pkgcov_core::sandbox::SandboxConfig;

#[derive(Parser)]
#[command(
    name = "pkgcov",
    version,
    about = "Assemble, compact and analyze test suites for npm packages"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the test suite of one package release.
    Assemble(AssembleArgs),
    /// Solve a compaction instance file.
    Compact(CompactArgs),
    /// Regenerate the cross-package reports.
    Report(ReportArgs),
    /// Run dynamic analyses over assembled suites.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct AssembleArgs {
    /// Target release as `<name>@<version>`.
    target: String,
    #[arg(long, default_value_t = DEFAULT_MAX_DEPENDENTS)]
    max_dependents: usize,
    /// Parallel sandboxes; defaults to the number of CPUs.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    no_compaction: bool,
    #[arg(long)]
    no_dependents: bool,
    /// Use offline fixtures instead of the live registry, git and containers.
    #[arg(long, env = "PKGCOV_FIXTURE_DIR")]
    fixture_dir: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Evaluate every candidate revision instead of stopping at the first usable one.
    #[arg(long)]
    all_revisions: bool,
    /// Also run the latest development commit as an unpatched baseline.
    #[arg(long)]
    dev_latest: bool,
    /// Stop the dependent search once combined statement coverage reaches PCT.
    #[arg(long, value_name = "PCT")]
    target_coverage: Option<f64>,
    #[arg(long)]
    stability_runs: Option<usize>,
    #[arg(long)]
    timing_runs: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
    node_budget: u64,
    /// Sandbox configuration JSON; defaults to the bundled one.
    #[arg(long)]
    sandbox_config: Option<PathBuf>,
}

#[derive(Args)]
struct CompactArgs {
    instance: PathBuf,
    /// Write the solution here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
    node_budget: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Package output directories, or output roots containing them.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    #[arg(long, default_value = "reports")]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// `<id>=<command>`; `{workspace}`, `{output}` and `{test}` are substituted.
    #[arg(long = "analysis", required = true)]
    analyses: Vec<String>,
    #[arg(long, default_value = "final")]
    suite: String,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 600)]
    timeout_secs: u64,
    /// Where the global summary goes.
    #[arg(long, default_value = "reports")]
    out: PathBuf,
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
}

/// Errors in what the user asked for; exit status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn from_assemble(e: AssembleError) -> anyhow::Error {
    match e {
        AssembleError::Config(m) => usage(m),
        other => other.into(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Assemble(a) => run_assemble(a),
        Command::Compact(a) => run_compact(a),
        Command::Report(a) => run_report(a),
        Command::Analyze(a) => run_analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pkgcov: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run_assemble(a: AssembleArgs) -> Result<()> {
    let target: PackageRef = a.target.parse().map_err(|e| usage(format!("{}: {e}", a.target)))?;
    let mode = match a.fixture_dir {
        Some(d) => Mode::Fixture(d),
        None => Mode::Live,
    };
    let mut config = AssembleConfig::new(target, &a.out, mode);
    config.search.max_dependents = a.max_dependents;
    if let Some(w) = a.workers {
        config.search.workers = w;
    }
    if let Some(pct) = a.target_coverage {
        if !(0.0..=100.0).contains(&pct) {
            return Err(usage("--target-coverage must be between 0 and 100"));
        }
        config.search.target_coverage = Some(pct / 100.0);
    }
    if let Some(k) = a.stability_runs {
        if k < 2 {
            return Err(usage("--stability-runs must be at least 2"));
        }
        config.search.stability_runs = k;
    }
    if let Some(n) = a.timing_runs {
        if n == 0 {
            return Err(usage("--timing-runs must be at least 1"));
        }
        config.search.timing_runs = n;
    }
    if let Some(p) = &a.sandbox_config {
        let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        config.sandbox =
            serde_json::from_str::<SandboxConfig>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    config.harvest.all_revisions = a.all_revisions;
    config.harvest.dev_latest = a.dev_latest;
    config.compaction = !a.no_compaction;
    config.dependents = !a.no_dependents;
    config.node_budget = a.node_budget;

    let assembly = assemble(&config).map_err(from_assemble)?;
    let m = &assembly.manifest;
    for d in &m.diagnostics {
        log::info!("{d}");
    }
    println!(
        "{}: {} tests included, {} excluded",
        m.target,
        m.tests.len(),
        m.excluded.len()
    );
    for (label, cov) in m.coverage.rows() {
        let cells: Vec<String> = cov
            .iter()
            .map(|(k, r)| format!("{k} {}", r.map_or("n/a".into(), |r| r.percent())))
            .collect();
        println!("  {label:<9} {}", cells.join("  "));
    }
    if let Some(sol) = &m.compaction {
        println!(
            "  compaction: {} -> {} tests, rate {:.2}",
            sol.tests_before,
            sol.selected.len(),
            sol.rate
        );
    }
    println!("  output: {}", assembly.package_dir.display());
    Ok(())
}

fn run_compact(a: CompactArgs) -> Result<()> {
    let text = fs::read_to_string(&a.instance).map_err(|e| usage(format!("{}: {e}", a.instance.display())))?;
    let file: InstanceFile =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", a.instance.display())))?;
    let inst = CompactionInstance::from_file(file).map_err(|e| usage(e.to_string()))?;
    let sol = branch_and_bound_with_budget(&inst, a.node_budget).map_err(|e| usage(e.to_string()))?;
    if !sol.optimal {
        log::warn!("node budget exhausted; solution may not be optimal");
    }
    match a.out {
        Some(p) => write_json(&p, &sol).with_context(|| p.display().to_string())?,
        None => println!("{}", serde_json::to_string_pretty(&sol)?),
    }
    Ok(())
}

fn package_dirs(dirs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for d in dirs {
        if d.join(SuiteManifest::FILE).is_file() {
            out.push(d.clone());
            continue;
        }
        if !d.is_dir() {
            return Err(usage(format!("{} is not a directory", d.display())));
        }
        let mut found: Vec<PathBuf> = fs::read_dir(d)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(SuiteManifest::FILE).is_file())
            .collect();
        if found.is_empty() {
            return Err(usage(format!("no package outputs under {}", d.display())));
        }
        found.sort();
        out.extend(found);
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn run_report(a: ReportArgs) -> Result<()> {
    let dirs = package_dirs(&a.dirs)?;
    for p in emit_reports(&dirs, &a.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn run_analyze(a: AnalyzeArgs) -> Result<()> {
    let suite: SuiteVariant = a
        .suite
        .parse()
        .map_err(|_| usage(format!("unknown suite {:?}", a.suite)))?;
    let analyses = a
        .analyses
        .iter()
        .map(|s| s.parse::<AnalysisSpec>().map_err(|e| usage(format!("{s}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        bail!(usage("--workers must be at least 1"));
    }
    let dirs = package_dirs(&a.dirs)?;
    let config = AnalyzeConfig {
        analyses,
        suite,
        workers,
        timeout: Duration::from_secs(a.timeout_secs),
    };
    let summary = analyze(&dirs, &config).map_err(from_assemble)?;
    fs::create_dir_all(&a.out)?;
    let csv = a.out.join("analysis-summary.csv");
    fs::write(&csv, summary.to_csv()).with_context(|| csv.display().to_string())?;
    write_json(&a.out.join("analysis-summary.json"), &summary)?;
    print!("{}", summary.to_csv());
    for dir in &dirs {
        if let Some(f) = FindingsFile::load(dir)? {
            for d in &f.diagnostics {
                eprintln!("warning: {}: {d}", dir.display());
            }
        }
    }
    Ok(())
}
