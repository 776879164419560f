use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Captured stream tails are bounded to this many bytes.
pub const TAIL_BYTES: usize = 64 * 1024;

/// Outcome of one sandboxed phase execution.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub exit_code: i32,
    pub duration_ms: u64,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub timed_out: bool,
}

impl ExecResult {
    /// The success oracle: exit code zero within the time limit.
    pub fn succeeded(&self) -> bool {
        self.exit_code == 0 && !self.timed_out
    }
}

/// Keeps the last [`TAIL_BYTES`] of `text`, cut at a char boundary.
pub fn tail(text: &str) -> String {
    if text.len() <= TAIL_BYTES {
        return text.to_string();
    }
    let mut start = text.len() - TAIL_BYTES;
    while !text.is_char_boundary(start) {
        start += 1;
    }
    text[start..].to_string()
}

/// Why a phase failed, derived from its output and exit status only.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "cause", content = "name", rename_all = "snake_case")]
pub enum FailureCause {
    MissingModule(String),
    MissingCommand(String),
    MissingSystemLibrary(String),
    Timeout,
    NonZeroTestCase,
    Unknown,
}

impl FailureCause {
    pub fn is_remediable(&self) -> bool {
        matches!(
            self,
            FailureCause::MissingModule(_) | FailureCause::MissingCommand(_) | FailureCause::MissingSystemLibrary(_)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkPolicy {
    Full,
    RegistryOnly,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Install,
    Test,
}

/// Sandbox profile shared by every test of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandboxSpec {
    pub image: String,
    pub preinstalled: BTreeSet<String>,
    pub cpus: Option<f64>,
    pub memory_mb: Option<u64>,
    pub network: NetworkPolicy,
    pub install_timeout: Duration,
    pub test_timeout: Duration,
    /// Directory holding the coverage shim, mounted read-only in containers.
    #[serde(default)]
    pub shim_dir: Option<PathBuf>,
}

impl SandboxSpec {
    /// Offline profile; fixture runs never get network access.
    pub fn for_fixture(config: &SandboxConfig) -> Self {
        SandboxSpec {
            network: NetworkPolicy::None,
            ..Self::from_config(config)
        }
    }

    pub fn from_config(config: &SandboxConfig) -> Self {
        SandboxSpec {
            image: config.image.clone(),
            preinstalled: config.preinstalled.iter().cloned().collect(),
            cpus: config.cpus,
            memory_mb: config.memory_mb,
            network: config.network,
            install_timeout: Duration::from_secs(config.install_timeout_secs),
            test_timeout: Duration::from_secs(config.test_timeout_secs),
            shim_dir: None,
        }
    }
}

/// Editable sandbox configuration; the default ships with the crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandboxConfig {
    pub image: String,
    pub preinstalled: Vec<String>,
    pub command_allowlist: Vec<String>,
    pub library_allowlist: Vec<String>,
    #[serde(default)]
    pub cpus: Option<f64>,
    #[serde(default)]
    pub memory_mb: Option<u64>,
    pub network: NetworkPolicy,
    pub install_timeout_secs: u64,
    pub test_timeout_secs: u64,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        serde_json::from_str(include_str!("../../config/sandbox.json")).expect("shipped sandbox config is valid")
    }
}
