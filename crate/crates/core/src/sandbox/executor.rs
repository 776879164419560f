use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::process::run_command;
use super::{tail, ExecResult, NetworkPolicy, SandboxError, SandboxSpec};

/// A private directory one test runs in, plus the key that identifies it to
/// scripted executors and result caches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Workspace {
    pub key: String,
    pub path: PathBuf,
}

impl Workspace {
    pub fn new(key: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Workspace {
            key: key.into(),
            path: path.into(),
        }
    }
}

/// A test-phase execution and, when coverage was requested, the raw report.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TestRun {
    pub result: ExecResult,
    pub coverage: Option<Vec<u8>>,
}

/// What a remediation installs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum Remediation {
    /// Development dependency of the package under test.
    Module(String),
    /// Globally installed tool.
    Command(String),
    /// System package.
    SystemLibrary(String),
}

impl Remediation {
    pub fn name(&self) -> &str {
        match self {
            Remediation::Module(n) | Remediation::Command(n) | Remediation::SystemLibrary(n) => n,
        }
    }
}

pub trait Executor: Send + Sync {
    fn install(&self, ws: &Workspace, spec: &SandboxSpec) -> Result<ExecResult, SandboxError>;
    fn test(&self, ws: &Workspace, spec: &SandboxSpec, with_coverage: bool) -> Result<TestRun, SandboxError>;
    fn remediate(&self, ws: &Workspace, spec: &SandboxSpec, action: &Remediation) -> Result<ExecResult, SandboxError>;

    /// Raw report declaring every element of the package in `ws` with zero
    /// hits, for releases whose universe is not known in advance.
    fn declare(&self, _ws: &Workspace, _spec: &SandboxSpec) -> Result<Option<Vec<u8>>, SandboxError> {
        Ok(None)
    }
}

pub fn run_install(executor: &dyn Executor, ws: &Workspace, spec: &SandboxSpec) -> Result<ExecResult, SandboxError> {
    executor.install(ws, spec)
}

/// Runs the package's test script. With `with_coverage` a passing run must
/// produce a raw coverage report.
pub fn run_test(
    executor: &dyn Executor,
    ws: &Workspace,
    spec: &SandboxSpec,
    with_coverage: bool,
) -> Result<TestRun, SandboxError> {
    let run = executor.test(ws, spec, with_coverage)?;
    if with_coverage && run.result.succeeded() && run.coverage.is_none() {
        return Err(SandboxError::CoverageArtifactMissing(ws.key.clone()));
    }
    Ok(run)
}

// --- scripted executor -------------------------------------------------------

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptedPhase {
    #[serde(default)]
    exit: i32,
    #[serde(default)]
    duration_ms: u64,
    #[serde(default)]
    stderr: String,
    #[serde(default)]
    stdout: String,
    #[serde(default)]
    coverage_file: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunScript {
    #[serde(default)]
    install: ScriptedPhase,
    #[serde(default)]
    test_runs: Vec<ScriptedPhase>,
    /// Artifacts a remediation can install.
    #[serde(default)]
    installable: Vec<String>,
    /// Test runs fail with the matching error until these are available.
    #[serde(default)]
    requires_modules: Vec<String>,
    #[serde(default)]
    requires_commands: Vec<String>,
    #[serde(default)]
    requires_libraries: Vec<String>,
}

#[derive(Default)]
struct ScriptState {
    next_test: usize,
    installed: BTreeSet<String>,
}

/// Replays `runs/<workspace-key>.json` scripts. Test runs are consumed in
/// order across repeated invocations; the last entry repeats once the list
/// is exhausted.
pub struct ScriptedExecutor {
    root: PathBuf,
    scripts: Mutex<HashMap<String, RunScript>>,
    state: Mutex<HashMap<String, ScriptState>>,
}

impl ScriptedExecutor {
    /// `root` is the fixture directory containing `runs/`.
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ScriptedExecutor {
            root: root.into(),
            scripts: Mutex::new(HashMap::new()),
            state: Mutex::new(HashMap::new()),
        }
    }

    pub fn script_path(&self, key: &str) -> PathBuf {
        self.root.join("runs").join(format!("{key}.json"))
    }

    fn script(&self, key: &str) -> Result<RunScript, SandboxError> {
        let mut scripts = self.scripts.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(s) = scripts.get(key) {
            return Ok(s.clone());
        }
        let path = self.script_path(key);
        let bytes = fs::read(&path)
            .map_err(|e| SandboxError::SandboxUnavailable(format!("no run script {}: {e}", path.display())))?;
        let script: RunScript = serde_json::from_slice(&bytes)
            .map_err(|e| SandboxError::SandboxUnavailable(format!("{}: {e}", path.display())))?;
        scripts.insert(key.to_string(), script.clone());
        Ok(script)
    }

    fn replay(phase: &ScriptedPhase, limit: std::time::Duration) -> ExecResult {
        let timed_out = phase.duration_ms as u128 > limit.as_millis();
        ExecResult {
            exit_code: if timed_out { -1 } else { phase.exit },
            duration_ms: if timed_out {
                limit.as_millis() as u64
            } else {
                phase.duration_ms
            },
            stdout_tail: tail(&phase.stdout),
            stderr_tail: tail(&phase.stderr),
            timed_out,
        }
    }

    fn missing_requirement(script: &RunScript, available: impl Fn(&str) -> bool) -> Option<String> {
        if let Some(m) = script.requires_modules.iter().find(|m| !available(m)) {
            return Some(format!(
                "Error: Cannot find module '{m}'\nRequire stack:\n- test/index.js"
            ));
        }
        if let Some(c) = script.requires_commands.iter().find(|c| !available(c)) {
            return Some(format!("sh: {c}: command not found"));
        }
        if let Some(l) = script.requires_libraries.iter().find(|l| !available(l)) {
            return Some(format!(
                "error while loading shared libraries: {l}: cannot open shared object file: No such file or directory"
            ));
        }
        None
    }
}

impl Executor for ScriptedExecutor {
    fn install(&self, ws: &Workspace, spec: &SandboxSpec) -> Result<ExecResult, SandboxError> {
        let script = self.script(&ws.key)?;
        Ok(Self::replay(&script.install, spec.install_timeout))
    }

    fn test(&self, ws: &Workspace, spec: &SandboxSpec, with_coverage: bool) -> Result<TestRun, SandboxError> {
        let script = self.script(&ws.key)?;
        let mut states = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let state = states.entry(ws.key.clone()).or_default();
        let available = |n: &str| spec.preinstalled.contains(n) || state.installed.contains(n);
        if let Some(stderr) = Self::missing_requirement(&script, available) {
            return Ok(TestRun {
                result: ExecResult {
                    exit_code: 1,
                    stderr_tail: stderr,
                    ..Default::default()
                },
                coverage: None,
            });
        }
        let Some(last) = script.test_runs.len().checked_sub(1) else {
            return Err(SandboxError::SandboxUnavailable(format!(
                "{}: no test_runs scripted",
                ws.key
            )));
        };
        let phase = &script.test_runs[state.next_test.min(last)];
        state.next_test += 1;
        let result = Self::replay(phase, spec.test_timeout);
        let coverage = match (&phase.coverage_file, with_coverage) {
            (Some(rel), true) => {
                let path = self.root.join(rel);
                Some(fs::read(&path).map_err(|e| SandboxError::Io(format!("{}: {e}", path.display())))?)
            }
            _ => None,
        };
        Ok(TestRun { result, coverage })
    }

    fn remediate(&self, ws: &Workspace, _spec: &SandboxSpec, action: &Remediation) -> Result<ExecResult, SandboxError> {
        let script = self.script(&ws.key)?;
        if !script.installable.iter().any(|n| n == action.name()) {
            return Ok(ExecResult {
                exit_code: 1,
                stderr_tail: format!("npm ERR! 404 Not Found - {}", action.name()),
                ..Default::default()
            });
        }
        let mut states = self.state.lock().unwrap_or_else(|p| p.into_inner());
        states
            .entry(ws.key.clone())
            .or_default()
            .installed
            .insert(action.name().to_string());
        Ok(ExecResult::default())
    }
}

// --- container executor ----------------------------------------------------

/// One container per phase with the workspace bind-mounted at `/work`.
pub struct ContainerExecutor {
    program: String,
}

impl Default for ContainerExecutor {
    fn default() -> Self {
        ContainerExecutor {
            program: std::env::var("PKGCOV_CONTAINER_CLI").unwrap_or_else(|_| "docker".into()),
        }
    }
}

pub const COVERAGE_OUT_ENV: &str = "PKGCOV_COVERAGE_OUT";
const COVERAGE_OUT_REL: &str = ".pkgcov/coverage.json";

impl ContainerExecutor {
    pub(super) fn docker(&self, ws: &Workspace, spec: &SandboxSpec, env: &[(&str, &str)], script: &str) -> Command {
        let mut cmd = Command::new(&self.program);
        cmd.arg("run").arg("--rm");
        match spec.network {
            NetworkPolicy::None => {
                cmd.args(["--network", "none"]);
            }
            // Registry-only egress is enforced by the image's proxy settings.
            NetworkPolicy::RegistryOnly | NetworkPolicy::Full => {}
        }
        if let Some(c) = spec.cpus {
            cmd.arg("--cpus").arg(c.to_string());
        }
        if let Some(m) = spec.memory_mb {
            cmd.arg("--memory").arg(format!("{m}m"));
        }
        // Relative bind sources would be taken as volume names.
        let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        cmd.arg("-v").arg(format!("{}:/work", abs(&ws.path).display()));
        if let Some(shim) = &spec.shim_dir {
            cmd.arg("-v")
                .arg(format!("{}:/opt/pkgcov-shim:ro", abs(shim).display()));
        }
        for (k, v) in env {
            cmd.arg("-e").arg(format!("{k}={v}"));
        }
        cmd.args(["-w", "/work"]).arg(&spec.image).args(["sh", "-c", script]);
        cmd
    }

    fn preinstall_script(spec: &SandboxSpec) -> String {
        if spec.preinstalled.is_empty() {
            return String::new();
        }
        let names: Vec<&str> = spec.preinstalled.iter().map(String::as_str).collect();
        format!("npm install -g --silent {} >/dev/null 2>&1; ", names.join(" "))
    }
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

impl Executor for ContainerExecutor {
    fn install(&self, ws: &Workspace, spec: &SandboxSpec) -> Result<ExecResult, SandboxError> {
        let script = format!("{}npm install", Self::preinstall_script(spec));
        run_command(self.docker(ws, spec, &[], &script), spec.install_timeout)
    }

    fn test(&self, ws: &Workspace, spec: &SandboxSpec, with_coverage: bool) -> Result<TestRun, SandboxError> {
        let out = ws.path.join(COVERAGE_OUT_REL);
        if !with_coverage {
            let result = run_command(self.docker(ws, spec, &[], "npm test"), spec.test_timeout)?;
            return Ok(TestRun { result, coverage: None });
        }
        if out.exists() {
            fs::remove_file(&out).map_err(|e| SandboxError::Io(e.to_string()))?;
        }
        let container_out = format!("/work/{COVERAGE_OUT_REL}");
        let script = "mkdir -p /work/.pkgcov && node /opt/pkgcov-shim/shim.js -- npm test";
        let result = run_command(
            self.docker(ws, spec, &[(COVERAGE_OUT_ENV, &container_out)], script),
            spec.test_timeout,
        )?;
        let coverage = fs::read(&out).ok();
        Ok(TestRun { result, coverage })
    }

    fn remediate(&self, ws: &Workspace, spec: &SandboxSpec, action: &Remediation) -> Result<ExecResult, SandboxError> {
        let script = match action {
            Remediation::Module(n) => format!("npm install --no-save {}", quote(n)),
            Remediation::Command(n) => format!("npm install -g {}", quote(n)),
            Remediation::SystemLibrary(n) => format!("apt-get update && apt-get install -y {}", quote(n)),
        };
        run_command(self.docker(ws, spec, &[], &script), spec.install_timeout)
    }

    fn declare(&self, ws: &Workspace, spec: &SandboxSpec) -> Result<Option<Vec<u8>>, SandboxError> {
        // The shim instruments every file, so a no-op command yields the
        // whole universe with zero hits.
        let out = ws.path.join(COVERAGE_OUT_REL);
        let container_out = format!("/work/{COVERAGE_OUT_REL}");
        let script = "mkdir -p /work/.pkgcov && node /opt/pkgcov-shim/shim.js -- true";
        let result = run_command(
            self.docker(ws, spec, &[(COVERAGE_OUT_ENV, &container_out)], script),
            spec.test_timeout,
        )?;
        if !result.succeeded() {
            return Ok(None);
        }
        Ok(fs::read(&out).ok())
    }
}
