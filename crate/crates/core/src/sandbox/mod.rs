//! Sandboxed install and test execution, failure classification,
//! remediation of missing prerequisites, flakiness and timing.

mod classify;
mod executor;
mod process;
mod types;


use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::TestStatus;

pub use classify::classify_failure;
pub use executor::{
    run_install, run_test, ContainerExecutor, Executor, Remediation, ScriptedExecutor, TestRun, Workspace,
    COVERAGE_OUT_ENV,
};
pub use process::{run_command, shell};
pub use types::*;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SandboxError {
    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0}: test passed but wrote no coverage report")]
    CoverageArtifactMissing(String),
    #[error("{0}: a timing run failed")]
    TestBecameUnstable(String),
    #[error("remediation of {cause:?} failed: {reason}")]
    RemediationFailed { cause: FailureCause, reason: String },
}

impl From<std::io::Error> for SandboxError {
    fn from(e: std::io::Error) -> Self {
        SandboxError::Io(e.to_string())
    }
}

/// Remediation rounds allowed per test, shared across phases.
pub const MAX_REMEDIATION_ROUNDS: usize = 2;
pub const DEFAULT_STABILITY_RUNS: usize = 3;
pub const DEFAULT_TIMING_RUNS: usize = 5;

/// Which artifacts may be installed to fix a failure. Modules are
/// unrestricted; commands and libraries need an allowlist entry.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RemediationPolicy {
    pub commands: BTreeSet<String>,
    pub libraries: BTreeSet<String>,
    pub max_rounds: usize,
}

impl RemediationPolicy {
    pub fn from_config(config: &SandboxConfig) -> Self {
        RemediationPolicy {
            commands: config.command_allowlist.iter().cloned().collect(),
            libraries: config.library_allowlist.iter().cloned().collect(),
            max_rounds: MAX_REMEDIATION_ROUNDS,
        }
    }

    fn action_for(&self, cause: &FailureCause) -> Result<Remediation, String> {
        match cause {
            FailureCause::MissingModule(m) => Ok(Remediation::Module(m.clone())),
            FailureCause::MissingCommand(c) if self.commands.contains(c) => Ok(Remediation::Command(c.clone())),
            FailureCause::MissingCommand(_) => Err("command not allowlisted".into()),
            FailureCause::MissingSystemLibrary(l) => {
                let base = library_package(l);
                if self.libraries.contains(l) || self.libraries.contains(base) {
                    Ok(Remediation::SystemLibrary(base.to_string()))
                } else {
                    Err("library not allowlisted".into())
                }
            }
            other => Err(format!("{other:?} is not remediable")),
        }
    }
}

/// `libcurl.so.4` -> `libcurl`.
fn library_package(soname: &str) -> &str {
    soname.split(".so").next().unwrap_or(soname)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RemediationOutcome<T> {
    Retried(T),
    GaveUp(String),
}

/// Remediation rounds spent by one test, plus what was installed.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemediationBudget {
    pub used: usize,
    pub applied: Vec<Remediation>,
}

/// Installs what `cause` names and re-runs the failed phase with `rerun`.
/// Fails with [`SandboxError::RemediationFailed`] when the install itself
/// fails; policy refusals and an exhausted budget give up instead.
pub fn auto_remediate<T>(
    executor: &dyn Executor,
    cause: &FailureCause,
    ws: &Workspace,
    spec: &SandboxSpec,
    policy: &RemediationPolicy,
    budget: &mut RemediationBudget,
    rerun: impl FnOnce() -> Result<T, SandboxError>,
) -> Result<RemediationOutcome<T>, SandboxError> {
    if budget.used >= policy.max_rounds {
        return Ok(RemediationOutcome::GaveUp("remediation budget exhausted".into()));
    }
    let action = match policy.action_for(cause) {
        Ok(a) => a,
        Err(reason) => return Ok(RemediationOutcome::GaveUp(reason)),
    };
    budget.used += 1;
    let res = executor.remediate(ws, spec, &action)?;
    if !res.succeeded() {
        return Err(SandboxError::RemediationFailed {
            cause: cause.clone(),
            reason: first_line(&res.stderr_tail),
        });
    }
    log::debug!("{}: remediated {:?}", ws.key, action);
    budget.applied.push(action);
    rerun().map(RemediationOutcome::Retried)
}

fn first_line(s: &str) -> String {
    s.lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .trim()
        .to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    StablePass,
    StableFail,
    Flaky,
}

/// Classifies `k` bare-run outcomes.
pub fn stability_of(outcomes: &[bool]) -> Stability {
    match (outcomes.iter().all(|&p| p), outcomes.iter().any(|&p| p)) {
        (true, _) => Stability::StablePass,
        (false, false) => Stability::StableFail,
        _ => Stability::Flaky,
    }
}

/// Runs the test `k >= 2` times without coverage.
pub fn detect_stability(
    executor: &dyn Executor,
    ws: &Workspace,
    spec: &SandboxSpec,
    k: usize,
) -> Result<Stability, SandboxError> {
    assert!(k >= 2, "stability needs at least two runs");
    let mut outcomes = Vec::with_capacity(k);
    for _ in 0..k {
        outcomes.push(run_test(executor, ws, spec, false)?.result.succeeded());
    }
    Ok(stability_of(&outcomes))
}

/// Median in milliseconds; even lengths average the middle pair.
pub fn median(durations: &[u64]) -> Option<f64> {
    if durations.is_empty() {
        return None;
    }
    let mut d = durations.to_vec();
    d.sort_unstable();
    let mid = d.len() / 2;
    Some(if d.len() % 2 == 1 {
        d[mid] as f64
    } else {
        (d[mid - 1] as f64 + d[mid] as f64) / 2.0
    })
}

/// Median of `n` bare-run durations.
pub fn measure_time(
    executor: &dyn Executor,
    ws: &Workspace,
    spec: &SandboxSpec,
    n: usize,
) -> Result<f64, SandboxError> {
    assert!(n >= 1, "timing needs at least one run");
    let mut durations = Vec::with_capacity(n);
    for _ in 0..n {
        let run = run_test(executor, ws, spec, false)?;
        if !run.result.succeeded() {
            return Err(SandboxError::TestBecameUnstable(ws.key.clone()));
        }
        durations.push(run.result.duration_ms);
    }
    Ok(median(&durations).expect("n >= 1"))
}

/// Tools named as commands in a `package.json` test script, intersecting
/// `known`. Used to seed the preinstall list.
pub fn scan_prerequisites(package_json: &serde_json::Value, known: &BTreeSet<String>) -> BTreeSet<String> {
    let Some(script) = package_json.pointer("/scripts/test").and_then(|v| v.as_str()) else {
        return BTreeSet::new();
    };
    script
        .split(|c: char| c.is_whitespace() || matches!(c, '&' | '|' | ';' | '(' | ')'))
        .filter(|w| known.contains(*w))
        .map(str::to_string)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseLog {
    pub phase: Phase,
    pub with_coverage: bool,
    pub result: ExecResult,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineConfig {
    pub stability_runs: usize,
    pub timing_runs: usize,
    pub policy: RemediationPolicy,
}

impl PipelineConfig {
    pub fn from_config(config: &SandboxConfig) -> Self {
        PipelineConfig {
            stability_runs: DEFAULT_STABILITY_RUNS,
            timing_runs: DEFAULT_TIMING_RUNS,
            policy: RemediationPolicy::from_config(config),
        }
    }
}

/// Everything one test evaluation produced; serialized as `exec.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestEvaluation {
    pub status: TestStatus,
    pub cause: Option<FailureCause>,
    pub diagnostic: Option<String>,
    pub median_time_ms: f64,
    pub remediation: RemediationBudget,
    pub phases: Vec<PhaseLog>,
    #[serde(skip)]
    pub raw_coverage: Option<Vec<u8>>,
}

impl TestEvaluation {
    pub fn stderr_tail(&self) -> String {
        self.phases
            .iter()
            .rev()
            .find(|p| !p.result.succeeded())
            .map(|p| p.result.stderr_tail.clone())
            .unwrap_or_default()
    }

    fn failed(mut self, status: TestStatus, cause: Option<FailureCause>, diagnostic: impl Into<String>) -> Self {
        self.status = status;
        self.cause = cause;
        self.diagnostic = Some(diagnostic.into());
        self
    }
}

/// install, bare run, stability check, coverage run, timing. Remediation
/// applies to the install and first bare run only. Per-test problems end
/// up in the returned status; only sandbox-level errors are `Err`.
pub fn evaluate_test(
    executor: &dyn Executor,
    ws: &Workspace,
    spec: &SandboxSpec,
    config: &PipelineConfig,
) -> Result<TestEvaluation, SandboxError> {
    let mut ev = TestEvaluation {
        status: TestStatus::Pass,
        cause: None,
        diagnostic: None,
        median_time_ms: 0.0,
        remediation: RemediationBudget::default(),
        phases: Vec::new(),
        raw_coverage: None,
    };

    let mut install = run_install(executor, ws, spec)?;
    ev.phases.push(PhaseLog {
        phase: Phase::Install,
        with_coverage: false,
        result: install.clone(),
    });
    while !install.succeeded() {
        let cause = classify_failure(&install);
        let outcome = remediate_logged(executor, &cause, ws, spec, config, &mut ev, Phase::Install, || {
            run_install(executor, ws, spec).map(|r| TestRun {
                result: r,
                coverage: None,
            })
        });
        match outcome {
            Ok(RemediationOutcome::Retried(r)) => install = r.result,
            Ok(RemediationOutcome::GaveUp(reason)) => {
                return Ok(ev.failed(TestStatus::Fail, Some(cause), format!("install failed: {reason}")))
            }
            Err(SandboxError::RemediationFailed { cause, reason }) => {
                return Ok(ev.failed(TestStatus::Fail, Some(cause), format!("remediation failed: {reason}")))
            }
            Err(e) => return Err(e),
        }
    }

    let mut first = run_test(executor, ws, spec, false)?.result;
    ev.phases.push(PhaseLog {
        phase: Phase::Test,
        with_coverage: false,
        result: first.clone(),
    });
    while !first.succeeded() {
        let cause = classify_failure(&first);
        let outcome = remediate_logged(executor, &cause, ws, spec, config, &mut ev, Phase::Test, || {
            run_test(executor, ws, spec, false)
        });
        match outcome {
            Ok(RemediationOutcome::Retried(r)) => first = r.result,
            Ok(RemediationOutcome::GaveUp(reason)) => {
                return Ok(ev.failed(TestStatus::Fail, Some(cause), reason));
            }
            Err(SandboxError::RemediationFailed { cause, reason }) => {
                return Ok(ev.failed(TestStatus::Fail, Some(cause), format!("remediation failed: {reason}")))
            }
            Err(e) => return Err(e),
        }
    }

    match detect_stability(executor, ws, spec, config.stability_runs)? {
        Stability::StablePass => {}
        Stability::StableFail => {
            // Passed once, then failed every rerun.
            return Ok(ev.failed(TestStatus::Flaky, None, "failed on every stability rerun"));
        }
        Stability::Flaky => return Ok(ev.failed(TestStatus::Flaky, None, "mixed results across stability runs")),
    }

    match run_test(executor, ws, spec, true) {
        Ok(run) => {
            ev.phases.push(PhaseLog {
                phase: Phase::Test,
                with_coverage: true,
                result: run.result.clone(),
            });
            if !run.result.succeeded() {
                let cause = classify_failure(&run.result);
                return Ok(ev.failed(TestStatus::Flaky, Some(cause), "coverage run failed"));
            }
            ev.raw_coverage = run.coverage;
        }
        Err(SandboxError::CoverageArtifactMissing(key)) => {
            return Ok(ev.failed(TestStatus::Fail, None, format!("{key}: no coverage report written")));
        }
        Err(e) => return Err(e),
    }

    match measure_time(executor, ws, spec, config.timing_runs) {
        Ok(t) => ev.median_time_ms = t,
        Err(SandboxError::TestBecameUnstable(_)) => {
            ev.raw_coverage = None;
            return Ok(ev.failed(TestStatus::Flaky, None, "a timing run failed"));
        }
        Err(e) => return Err(e),
    }
    Ok(ev)
}

#[allow(clippy::too_many_arguments)]
fn remediate_logged(
    executor: &dyn Executor,
    cause: &FailureCause,
    ws: &Workspace,
    spec: &SandboxSpec,
    config: &PipelineConfig,
    ev: &mut TestEvaluation,
    phase: Phase,
    rerun: impl FnOnce() -> Result<TestRun, SandboxError>,
) -> Result<RemediationOutcome<TestRun>, SandboxError> {
    let out = auto_remediate(executor, cause, ws, spec, &config.policy, &mut ev.remediation, rerun)?;
    if let RemediationOutcome::Retried(run) = &out {
        ev.phases.push(PhaseLog {
            phase,
            with_coverage: false,
            result: run.result.clone(),
        });
    }
    Ok(out)
}

/// Executor, profile and pipeline settings shared by every test of a run.
#[derive(Clone, Copy)]
pub struct Runner<'a> {
    pub executor: &'a dyn Executor,
    pub spec: &'a SandboxSpec,
    pub pipeline: &'a PipelineConfig,
}

impl Runner<'_> {
    pub fn evaluate(&self, ws: &Workspace) -> Result<TestEvaluation, SandboxError> {
        evaluate_test(self.executor, ws, self.spec, self.pipeline)
    }
}
