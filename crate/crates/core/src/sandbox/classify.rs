use std::sync::LazyLock;

use regex::Regex;

use super::{ExecResult, FailureCause};

static MISSING_MODULE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Cannot find (?:module|package) '([^']+)'").unwrap());
static MISSING_COMMAND: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?m)(?:^|\s)(?:[\w/.-]*sh|env): (?:line \d+: |\d+: )?([\w.+-]+): (?:command )?not found").unwrap()
});
static NOT_RECOGNIZED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"'([\w.+-]+)' is not recognized as an internal or external command").unwrap());
static MISSING_LIBRARY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(concat!(
        r"error while loading shared libraries: ([\w.+-]+): cannot open shared object file",
        r"|Library not loaded: (?:\S*/)?([\w.+-]+)",
        r"|Package ([\w.+-]+) was not found in the pkg-config search path",
        r"|([\w.+-]+\.so(?:\.\d+)*): cannot open shared object file",
    ))
    .unwrap()
});
static TEST_FAILURES: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(concat!(
        r"(?m)^\s*\d+ failing\b",
        r"|Tests:\s+\d+ failed",
        r"|^# fail\s+[1-9]",
        r"|\b[1-9]\d* tests? failed",
        r"|^not ok \d+",
        r"|AssertionError",
    ))
    .unwrap()
});

/// Package name of a module specifier: `mocha/lib/x` → `mocha`,
/// `@scope/pkg/sub` → `@scope/pkg`. Relative and absolute specifiers are
/// project files, not installable packages.
fn package_of(specifier: &str) -> Option<String> {
    if specifier.starts_with('.') || specifier.starts_with('/') || specifier.contains(':') {
        return None;
    }
    let mut parts = specifier.split('/');
    let first = parts.next()?;
    if first.starts_with('@') {
        Some(format!("{first}/{}", parts.next()?))
    } else {
        Some(first.to_string())
    }
}

/// Classifies a failed phase from its captured output.
pub fn classify_failure(result: &ExecResult) -> FailureCause {
    if result.timed_out {
        return FailureCause::Timeout;
    }
    let text = format!("{}\n{}", result.stderr_tail, result.stdout_tail);
    if let Some(name) = MISSING_MODULE.captures_iter(&text).find_map(|c| package_of(&c[1])) {
        return FailureCause::MissingModule(name);
    }
    if let Some(c) = MISSING_LIBRARY.captures(&text) {
        let name = (1..=4).find_map(|i| c.get(i)).map(|m| m.as_str().to_string());
        if let Some(name) = name {
            return FailureCause::MissingSystemLibrary(name);
        }
    }
    if let Some(c) = MISSING_COMMAND
        .captures(&text)
        .or_else(|| NOT_RECOGNIZED.captures(&text))
    {
        return FailureCause::MissingCommand(c[1].to_string());
    }
    if result.exit_code != 0 && TEST_FAILURES.is_match(&text) {
        return FailureCause::NonZeroTestCase;
    }
    FailureCause::Unknown
}

#[cfg(test)]
mod tests {
    use super::*;

    fn failed(stderr: &str) -> ExecResult {
        ExecResult {
            exit_code: 1,
            stderr_tail: stderr.into(),
            ..Default::default()
        }
    }

    #[test]
    fn module_specifiers() {
        assert_eq!(package_of("mocha").as_deref(), Some("mocha"));
        assert_eq!(package_of("chai/register-expect").as_deref(), Some("chai"));
        assert_eq!(package_of("@babel/core/lib").as_deref(), Some("@babel/core"));
        assert_eq!(package_of("./lib/util"), None);
        assert_eq!(package_of("node:fs"), None);
    }

    #[test]
    fn relative_module_is_not_missing_dependency() {
        assert_eq!(
            classify_failure(&failed("Error: Cannot find module './build/Release/addon'")),
            FailureCause::Unknown
        );
    }

    #[test]
    fn timeout_wins() {
        let r = ExecResult {
            exit_code: -1,
            timed_out: true,
            stderr_tail: "Cannot find module 'x'".into(),
            ..Default::default()
        };
        assert_eq!(classify_failure(&r), FailureCause::Timeout);
    }
}
