//! Local child-process execution with a wall-clock limit.

use std::io::Read;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::{tail, ExecResult, SandboxError};

fn drain(mut r: impl Read + Send + 'static) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = r.read_to_end(&mut buf);
        tail(&String::from_utf8_lossy(&buf))
    })
}

/// Runs `cmd` to completion or until `timeout`, whichever comes first. A
/// timed-out child is killed and reported with `timed_out = true`.
pub fn run_command(mut cmd: Command, timeout: Duration) -> Result<ExecResult, SandboxError> {
    let start = Instant::now();
    let mut child = cmd
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| SandboxError::SandboxUnavailable(format!("{:?}: {e}", cmd.get_program())))?;
    let out = drain(child.stdout.take().expect("stdout is piped"));
    let err = drain(child.stderr.take().expect("stderr is piped"));

    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| SandboxError::Io(e.to_string()))? {
            break Some(status);
        }
        if start.elapsed() >= timeout {
            let _ = child.kill();
            let _ = child.wait();
            timed_out = true;
            break None;
        }
        thread::sleep(Duration::from_millis(5));
    };
    let duration_ms = start.elapsed().as_millis() as u64;
    Ok(ExecResult {
        exit_code: status.and_then(|s| s.code()).unwrap_or(-1),
        duration_ms,
        stdout_tail: out.join().unwrap_or_default(),
        stderr_tail: err.join().unwrap_or_default(),
        timed_out,
    })
}

/// `sh -c <script>` in `dir`.
pub fn shell(script: &str, dir: &std::path::Path) -> Command {
    let mut cmd = Command::new("sh");
    cmd.arg("-c").arg(script).current_dir(dir);
    cmd
}
