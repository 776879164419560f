use std::fs;
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use serde_json::json;
use tempfile::TempDir;

use super::*;
use crate::coverage::{CoverageRatio, RawCoverage};
use crate::repo::FixtureRepos;
use crate::sandbox::{PipelineConfig, SandboxConfig, SandboxSpec, ScriptedExecutor};

fn write(root: &Path, rel: &str, content: &str) {
    let p = root.join(rel);
    fs::create_dir_all(p.parent().unwrap()).unwrap();
    fs::write(p, content).unwrap();
}

fn tgz(files: &[(&str, String)]) -> Vec<u8> {
    let mut b = tar::Builder::new(GzEncoder::new(Vec::new(), Compression::default()));
    for (path, body) in files {
        let mut h = tar::Header::new_gnu();
        h.set_size(body.len() as u64);
        h.set_mode(0o644);
        h.set_cksum();
        b.append_data(&mut h, format!("package/{path}"), body.as_bytes())
            .unwrap();
    }
    b.into_inner().unwrap().finish().unwrap()
}

fn publish(root: &Path, name: &str, deps: serde_json::Value, repo: Option<&str>) {
    let dir = root.join("registry").join(name).join("1.0.0");
    let pkg = json!({"name": name, "version": "1.0.0", "dependencies": deps, "scripts": {"test": "node test"}});
    let meta = json!({
        "name": name, "version": "1.0.0", "release_date": "2020-05-01T00:00:00Z",
        "repository": repo, "dependencies": deps,
    });
    write(&dir, "metadata.json", &meta.to_string());
    let files = vec![
        ("package.json", format!("{pkg:#}\n")),
        ("index.js", format!("// {name}\nmodule.exports = require('alpha');\n")),
    ];
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("package.tgz"), tgz(&files)).unwrap();
}

const ALPHA_SRC: &str = "var a = 1;\nvar b = 2;\nvar c = 3;\nvar d = 4;\n";

fn statements(file: &str, hit: &[u32]) -> serde_json::Value {
    let pts: Vec<_> = (1..=4)
        .map(|l| json!({"line": l, "column": 0, "hits": u32::from(hit.contains(&l))}))
        .collect();
    json!({"package": "alpha@1.0.0", "files": {file: {"statements": pts, "functions": [], "branches": []}}})
}

/// Coverage as seen from a dependent workspace.
fn installed(hit: &[u32]) -> serde_json::Value {
    statements("node_modules/alpha/index.js", hit)
}

/// alpha with 4 statements and five dependents:
/// d1 (repo, covers 1-2), d2 (covers nothing), d3 (fails), d4 (covers 2-3),
/// d5 (does not depend on alpha).
fn ecosystem(root: &Path) {
    write(&root.join("src-alpha"), "index.js", ALPHA_SRC);
    let adir = root.join("registry/alpha/1.0.0");
    write(
        &adir,
        "metadata.json",
        &json!({"name": "alpha", "version": "1.0.0", "release_date": "2020-01-01T00:00:00Z"}).to_string(),
    );
    fs::write(
        adir.join("package.tgz"),
        tgz(&[
            ("index.js", ALPHA_SRC.to_string()),
            ("package.json", "{\"name\":\"alpha\"}\n".to_string()),
        ]),
    )
    .unwrap();
    write(&adir, "universe.json", &statements("index.js", &[]).to_string());

    let on_alpha = json!({"alpha": "^1.0.0"});
    publish(root, "d1", on_alpha.clone(), Some("https://example.test/d1.git"));
    for d in ["d2", "d3", "d4"] {
        publish(root, d, on_alpha.clone(), None);
    }
    publish(root, "d5", json!({"beta": "^1.0.0"}), None);
    let entries: Vec<_> = ["d1", "d2", "d3", "d4", "d5"]
        .iter()
        .map(|n| json!({"name": n, "versions": [{"version": "1.0.0", "range": "^1.0.0"}]}))
        .collect();
    write(root, "dependents.json", &json!({ "alpha": entries }).to_string());
    write(
        root,
        "downloads.json",
        &json!({"d1": 50, "d2": 40, "d3": 30, "d4": 20, "d5": 10}).to_string(),
    );

    write(
        root,
        "repos/d1/revisions.json",
        &json!([{"id": "v1.0.0", "date": "2020-04-30T00:00:00Z", "kind": "release"}]).to_string(),
    );
    write(root, "repos/d1/trees/v1.0.0/test/index.js", "require('..');\n");

    write(root, "cov/d1.json", &installed(&[1, 2]).to_string());
    write(root, "cov/d2.json", &installed(&[]).to_string());
    write(root, "cov/d4.json", &installed(&[2, 3]).to_string());
    let ok = |cov: &str, ms: u64| json!({"test_runs": [{"duration_ms": ms, "coverage_file": cov}]});
    write(root, "runs/d1@1.0.0~v1.0.0.json", &ok("cov/d1.json", 100).to_string());
    write(root, "runs/d2@1.0.0~npm.json", &ok("cov/d2.json", 100).to_string());
    write(
        root,
        "runs/d3@1.0.0~npm.json",
        &json!({"test_runs": [{"exit": 1, "stderr": "  1 failing"}]}).to_string(),
    );
    write(root, "runs/d4@1.0.0~npm.json", &ok("cov/d4.json", 300).to_string());
    write(root, "runs/d5@1.0.0~npm.json", &ok("cov/d4.json", 300).to_string());
}

struct Env {
    tmp: TempDir,
    registry: RegistryClient,
    target: PackageMetadata,
    release: Release,
    normalizer: Normalizer,
}

fn env() -> Env {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("fx");
    ecosystem(&root);
    let registry = RegistryClient::fixture(&root, tmp.path().join("cache")).unwrap();
    let target = registry.fetch_metadata("alpha", "1.0.0").unwrap();
    let mut release = registry.download_release(&target).unwrap();
    let decl = registry.universe_declaration(&target.package).unwrap().unwrap();
    release
        .manifest
        .attach_declarations(&RawCoverage::parse(&decl).unwrap());
    let normalizer = Normalizer::new(target.package.clone(), &release.manifest).unwrap();
    Env {
        tmp,
        registry,
        target,
        release,
        normalizer,
    }
}

fn search(env: &Env, config: &SearchConfig, work: &str, cache: bool) -> SearchResult {
    let root = env.tmp.path().join("fx");
    let ex = ScriptedExecutor::new(&root);
    let spec = SandboxSpec::for_fixture(&SandboxConfig::default());
    let pipeline = PipelineConfig::from_config(&SandboxConfig::default());
    let repos = FixtureRepos::new(&root);
    let ctx = SearchContext {
        registry: &env.registry,
        repos: &repos,
        runner: Runner {
            executor: &ex,
            spec: &spec,
            pipeline: &pipeline,
        },
        target: &env.target,
        target_release: &env.release,
        normalizer: &env.normalizer,
        work_dir: env.tmp.path().join(work),
        cache_dir: cache.then(|| env.tmp.path().join(work).join("cache")),
        pin_resolution: false,
    };
    let deps = env.registry.list_dependents(&env.target.package, usize::MAX).unwrap();
    run_search(&deps, &ctx, config, &[]).unwrap()
}

fn config(workers: usize) -> SearchConfig {
    SearchConfig {
        workers,
        ..SearchConfig::default()
    }
}

#[test]
fn pin_rewrites_only_target() {
    let tmp = TempDir::new().unwrap();
    let pkg = json!({"name": "dep", "dependencies": {"zeta": "^1.0.0", "lodash": "^4.17.0"}, "devDependencies": {"mocha": "*"}});
    write(tmp.path(), "package.json", &format!("{pkg:#}\n"));
    let target = PackageRef::new("lodash", "4.17.15").unwrap();
    let change = pin_target_version(tmp.path(), &target, false).unwrap();
    assert_eq!(
        change.rewritten,
        vec![("dependencies".to_string(), "^4.17.0".to_string())]
    );
    let after: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("package.json")).unwrap()).unwrap();
    assert_eq!(after["dependencies"]["lodash"], "4.17.15");
    assert_eq!(after["dependencies"]["zeta"], "^1.0.0");
    assert_eq!(after["devDependencies"]["mocha"], "*");
    let keys: Vec<_> = after["dependencies"].as_object().unwrap().keys().cloned().collect();
    assert_eq!(keys, vec!["zeta", "lodash"]);

    let before = fs::read(tmp.path().join("package.json")).unwrap();
    assert!(pin_target_version(tmp.path(), &target, false).unwrap().is_noop());
    assert_eq!(fs::read(tmp.path().join("package.json")).unwrap(), before);

    let live = pin_target_version(tmp.path(), &target, true).unwrap();
    assert!(live.overrides_added);

    let other = PackageRef::new("chalk", "1.0.0").unwrap();
    assert!(matches!(
        pin_target_version(tmp.path(), &other, false),
        Err(DependentError::TargetNotDeclared { .. })
    ));
}

#[test]
fn outcomes_and_trace() {
    let env = env();
    let r = search(&env, &config(1), "work", false);
    let outcomes: Vec<String> = r.results.iter().map(|r| r.outcome.label()).collect();
    assert_eq!(
        outcomes,
        vec![
            "included",
            "zero_coverage",
            "failed:non_zero_test_case",
            "included",
            "incompatible"
        ]
    );
    assert_eq!(r.records.len(), 2);
    assert_eq!(
        r.records[0].provenance,
        Provenance::Dependent {
            package: PackageRef::new("d1", "1.0.0").unwrap(),
            revision: "v1.0.0".into()
        }
    );
    assert!(r.records.iter().all(include_test));

    let stmt: Vec<_> = r
        .trace
        .entries
        .iter()
        .map(|e| e.cumulative.statement.unwrap())
        .collect();
    assert_eq!(stmt, [2, 2, 2, 3, 3].map(|c| CoverageRatio::new(c, 4)).to_vec());
    assert!(r.trace.is_monotone());
    assert_eq!(r.trace.entries[0].cumulative.function, None);

    // d1 ran in its pinned, patched checkout.
    let pinned = env.tmp.path().join("work/d1@1.0.0/d1@1.0.0/v1.0.0/package.json");
    let pkg: serde_json::Value = serde_json::from_str(&fs::read_to_string(pinned).unwrap()).unwrap();
    assert_eq!(pkg["dependencies"]["alpha"], "1.0.0");
}

#[test]
fn worker_count_does_not_matter() {
    let env = env();
    let one = search(&env, &config(1), "w1", false);
    let four = search(&env, &config(4), "w4", false);
    assert_eq!(one.trace, four.trace);
    assert_eq!(one.records, four.records);
}

#[test]
fn stop_bound_and_early_exit() {
    let env = env();
    let r = search(
        &env,
        &SearchConfig {
            max_dependents: 2,
            ..config(2)
        },
        "a",
        false,
    );
    assert_eq!(r.trace.entries.len(), 2);

    let r = search(
        &env,
        &SearchConfig {
            target_coverage: Some(0.5),
            ..config(3)
        },
        "b",
        false,
    );
    assert_eq!(r.trace.entries.len(), 1);
    let r = search(
        &env,
        &SearchConfig {
            target_coverage: Some(0.75),
            ..config(3)
        },
        "c",
        false,
    );
    assert_eq!(r.trace.entries.len(), 4);
}

#[test]
fn cached_results_are_reused() {
    let env = env();
    let first = search(&env, &config(2), "work", true);
    // Scripts gone: a re-run can only succeed from the cache.
    fs::remove_dir_all(env.tmp.path().join("fx/runs")).unwrap();
    let second = search(&env, &config(2), "work", true);
    assert_eq!(first.trace, second.trace);
    assert_eq!(first.records, second.records);
    let changed = search(
        &env,
        &SearchConfig {
            stability_runs: 4,
            ..config(2)
        },
        "work",
        true,
    );
    assert!(changed.results.iter().all(|r| r.outcome != Outcome::Included));
}

#[test]
fn csv_has_one_row_per_rank() {
    let env = env();
    let r = search(&env, &config(1), "work", false);
    let csv = r.trace.to_csv();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    assert!(lines[0].starts_with("rank,name,version,outcome,statement_pct"));
    assert_eq!(lines[4], "4,d4,1.0.0,included,75.0,n/a,n/a,75.0,n/a,n/a");
}
