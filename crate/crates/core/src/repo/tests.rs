use std::fs;
use std::path::Path;

use chrono::{Duration, TimeZone};
use proptest::prelude::*;
use serde_json::json;
use tempfile::TempDir;

use super::*;
use crate::coverage::{CoverageKind, RawCoverage};
use crate::registry::PackageRef;
use crate::sandbox::{PipelineConfig, SandboxConfig, SandboxSpec, ScriptedExecutor};

fn at(month: u32, day: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, month, day, 12, 0, 0).unwrap()
}

fn rev(id: &str, date: DateTime<Utc>, kind: RevisionKind) -> Revision {
    Revision {
        id: id.into(),
        date,
        kind,
    }
}

fn ids(revs: &[Revision]) -> Vec<&str> {
    revs.iter().map(|r| r.id.as_str()).collect()
}

#[test]
fn substring_tags_then_last_commit() {
    let revs = vec![
        rev("v1.2.3", at(6, 1), RevisionKind::Release),
        rev("v1.2.2", at(5, 1), RevisionKind::Release),
        rev("c-may", at(5, 20), RevisionKind::Commit),
        rev("c-jun2", at(6, 2), RevisionKind::Commit),
        rev("c-jul", at(7, 1), RevisionKind::Commit),
    ];
    let got = select_candidate_revisions(&revs, "1.2.3", at(6, 3)).unwrap();
    assert_eq!(ids(&got), vec!["v1.2.3", "c-jun2"]);
}

#[test]
fn no_matching_tag_falls_back_to_commit() {
    let revs = vec![
        rev("release-one", at(6, 1), RevisionKind::Release),
        rev("c1", at(5, 1), RevisionKind::Commit),
    ];
    let got = select_candidate_revisions(&revs, "1.2.3", at(6, 3)).unwrap();
    assert_eq!(ids(&got), vec!["c1"]);
}

#[test]
fn prerelease_tags_match_literally() {
    let revs = vec![
        rev("1.2.3", at(6, 1), RevisionKind::Release),
        rev("v1.2.3-rc1", at(5, 1), RevisionKind::Release),
        rev("V1.2.3", at(6, 5), RevisionKind::Release),
    ];
    let got = select_candidate_revisions(&revs, "1.2.3", at(6, 3)).unwrap();
    assert_eq!(ids(&got), vec!["V1.2.3", "1.2.3", "v1.2.3-rc1"]);
    // Case-sensitive: "v" in the version never matches "V".
    assert_eq!(
        ids(&select_candidate_revisions(&revs, "v1.2.3", at(6, 3)).unwrap()),
        vec!["v1.2.3-rc1"]
    );
}

#[test]
fn tag_cap_and_errors() {
    let revs: Vec<Revision> = (0..8)
        .map(|i| rev(&format!("v1.0.0-{i}"), at(1, 1 + i), RevisionKind::Release))
        .collect();
    let got = select_candidate_revisions(&revs, "1.0.0", at(3, 1)).unwrap();
    assert_eq!(
        ids(&got),
        vec!["v1.0.0-7", "v1.0.0-6", "v1.0.0-5", "v1.0.0-4", "v1.0.0-3"]
    );
    assert_eq!(
        select_candidate_revisions(&[], "1.0.0", at(3, 1)),
        Err(RepoError::EmptyRepository)
    );
    let late = vec![rev("c", at(9, 1), RevisionKind::Commit)];
    assert!(matches!(
        select_candidate_revisions(&late, "1.0.0", at(3, 1)),
        Err(RepoError::NoCandidateRevisions(_))
    ));
}

fn arb_revisions() -> impl Strategy<Value = Vec<Revision>> {
    prop::collection::vec((0u8..6, 0i64..400, any::<bool>()), 1..30).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (tag, day, is_tag))| {
                let kind = if is_tag {
                    RevisionKind::Release
                } else {
                    RevisionKind::Commit
                };
                let id = if is_tag { format!("v1.{tag}.0") } else { format!("c{i}") };
                rev(&id, at(1, 1) + Duration::days(day), kind)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn no_commit_after_release(revs in arb_revisions(), release_day in 0i64..400) {
        let release = at(1, 1) + Duration::days(release_day);
        if let Ok(got) = select_candidate_revisions(&revs, "1.2.0", release) {
            for r in &got {
                prop_assert!(r.kind == RevisionKind::Release || r.date <= release);
                prop_assert!(r.kind == RevisionKind::Commit || r.id.contains("1.2.0"));
            }
            let commits = got.iter().filter(|r| r.kind == RevisionKind::Commit).count();
            prop_assert!(commits <= 1);
            let mut uniq: Vec<_> = ids(&got);
            uniq.sort();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), got.len());
        }
    }
}

fn write(root: &Path, rel: &str, content: &str) {
    let p = root.join(rel);
    fs::create_dir_all(p.parent().unwrap()).unwrap();
    fs::write(p, content).unwrap();
}

fn release(dir: &Path) -> Release {
    write(dir, "index.js", "module.exports = require('./lib/util');\n");
    write(dir, "lib/util.js", "exports.add = (a, b) => a + b;\n");
    write(dir, "package.json", "{\"name\":\"alpha\",\"version\":\"1.0.0\"}\n");
    Release {
        dir: dir.to_path_buf(),
        manifest: FileManifest::from_dir(dir).unwrap(),
    }
}

#[test]
fn patch_noop_missing_and_mismatched() {
    let tmp = TempDir::new().unwrap();
    let rel = release(&tmp.path().join("release"));
    let base = rev("v1.0.0", at(1, 1), RevisionKind::Release);

    let same = tmp.path().join("same");
    for f in ["index.js", "lib/util.js", "package.json"] {
        write(&same, f, &fs::read_to_string(rel.dir.join(f)).unwrap());
    }
    let p = patch_to_release(&same, &rel.manifest, &rel.dir, base.clone()).unwrap();
    assert!(p.replaced_files.is_empty());

    let co = tmp.path().join("co");
    write(&co, "index.js", "module.exports = 'dev';\n");
    write(
        &co,
        "package.json",
        &fs::read_to_string(rel.dir.join("package.json")).unwrap(),
    );
    write(&co, "test/test.js", "require('..');\n");
    let p = patch_to_release(&co, &rel.manifest, &rel.dir, base).unwrap();
    assert_eq!(p.replaced_files, vec!["index.js", "lib/util.js"]);
    assert!(p.unresolved_files.is_empty());
    assert!(rel.manifest.mismatches(&co).is_empty());
    assert_eq!(fs::read_to_string(co.join("test/test.js")).unwrap(), "require('..');\n");
}

struct Fixture {
    tmp: TempDir,
    meta: PackageMetadata,
    release: Release,
    normalizer: Normalizer,
}

fn fixture(revisions: serde_json::Value) -> Fixture {
    let tmp = TempDir::new().unwrap();
    let release = {
        let mut r = release(&tmp.path().join("release"));
        let decl = json!({"package": "alpha@1.0.0", "files": {"lib/util.js": {
            "statements": [{"line":1,"column":0,"hits":0},{"line":1,"column":14,"hits":0}],
            "functions": [{"line":1,"column":14,"hits":0}],
            "branches": []
        }}});
        r.manifest
            .attach_declarations(&RawCoverage::parse(decl.to_string().as_bytes()).unwrap());
        r
    };
    let pkg = PackageRef::new("alpha", "1.0.0").unwrap();
    let normalizer = Normalizer::new(pkg.clone(), &release.manifest).unwrap();
    let meta = PackageMetadata {
        package: pkg,
        release_date: at(6, 3),
        repo_url: Some("https://example.test/alpha.git".into()),
        tarball_url: String::new(),
        dependencies: Default::default(),
    };
    let repo = tmp.path().join("fx/repos/alpha");
    write(&repo, "revisions.json", &revisions.to_string());
    for r in revisions.as_array().unwrap() {
        let id = r["id"].as_str().unwrap();
        let tree = repo.join("trees").join(id);
        write(
            &tree,
            "package.json",
            "{\"name\":\"alpha\",\"scripts\":{\"test\":\"node test\"}}\n",
        );
        write(&tree, "test/index.js", "require('..');\n");
        if id == "c-after" {
            write(&tree, "lib/util.js", "exports.add = (a, b) => b + a;\n");
        }
    }
    let cov = json!({"package": "alpha@1.0.0", "files": {"lib/util.js": {
        "statements": [{"line":1,"column":0,"hits":1},{"line":1,"column":14,"hits":0}],
        "functions": [{"line":1,"column":14,"hits":0}],
        "branches": []
    }}});
    write(&tmp.path().join("fx"), "cov/util.json", &cov.to_string());
    Fixture {
        tmp,
        meta,
        release,
        normalizer,
    }
}

fn script(fx: &Fixture, key: &str, body: serde_json::Value) {
    write(
        &fx.tmp.path().join("fx"),
        &format!("runs/{key}.json"),
        &body.to_string(),
    );
}

fn harvest(fx: &Fixture, options: HarvestOptions) -> Harvest {
    let ex = ScriptedExecutor::new(fx.tmp.path().join("fx"));
    let spec = SandboxSpec::for_fixture(&SandboxConfig::default());
    let pipeline = PipelineConfig::from_config(&SandboxConfig::default());
    let runner = Runner {
        executor: &ex,
        spec: &spec,
        pipeline: &pipeline,
    };
    let repos = FixtureRepos::new(&fx.tmp.path().join("fx"));
    let target = CoverageTarget {
        normalizer: &fx.normalizer,
        manifest: &fx.release.manifest,
        prefix: String::new(),
    };
    harvest_original_tests(
        &fx.meta,
        &fx.release,
        &repos,
        runner,
        &fx.tmp.path().join("work"),
        &target,
        &no_prepare,
        options,
    )
    .unwrap()
}

fn revisions() -> serde_json::Value {
    json!([
        {"id": "v1.0.0", "date": "2020-06-01T00:00:00Z", "kind": "release"},
        {"id": "c-before", "date": "2020-06-02T00:00:00Z", "kind": "commit"},
        {"id": "c-after", "date": "2020-07-01T00:00:00Z", "kind": "commit"}
    ])
}

#[test]
fn harvest_stops_at_included_tag() {
    let fx = fixture(revisions());
    script(
        &fx,
        "alpha@1.0.0~v1.0.0",
        json!({"test_runs": [{"duration_ms": 40, "coverage_file": "cov/util.json"}]}),
    );
    let h = harvest(&fx, HarvestOptions::default());
    let records = h.records();
    assert_eq!(records.len(), 1);
    assert_eq!(
        records[0].provenance,
        Provenance::OriginalRepo {
            revision: "v1.0.0".into()
        }
    );
    assert_eq!(records[0].id, "original:v1.0.0:0");
    assert_eq!(records[0].median_time_ms, 40.0);
    let report = records[0].report.as_ref().unwrap();
    assert_eq!(report.covered(CoverageKind::Statement).len(), 1);
    // The checkout lacks the sources and ships a different package.json.
    assert_eq!(
        h.outcomes[0].patched.replaced_files,
        vec!["index.js", "lib/util.js", "package.json"]
    );
}

#[test]
fn harvest_falls_back_to_commit() {
    let fx = fixture(revisions());
    script(
        &fx,
        "alpha@1.0.0~v1.0.0",
        json!({"test_runs": [{"exit": 1, "stderr": "  1 failing"}]}),
    );
    script(
        &fx,
        "alpha@1.0.0~c-before",
        json!({"test_runs": [{"duration_ms": 7, "coverage_file": "cov/util.json"}]}),
    );
    let h = harvest(&fx, HarvestOptions::default());
    let records = h.records();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].status, TestStatus::Fail);
    assert_eq!(
        records[1].provenance,
        Provenance::OriginalRepo {
            revision: "c-before".into()
        }
    );
    assert!(include_test(&records[1]));
}

#[test]
fn harvest_without_tests_records_diagnostic() {
    let fx = fixture(revisions());
    let no_tests = json!({"test_runs": [{"exit": 1, "stderr": "Error: no test specified"}]});
    script(&fx, "alpha@1.0.0~v1.0.0", no_tests.clone());
    script(&fx, "alpha@1.0.0~c-before", no_tests);
    let h = harvest(&fx, HarvestOptions::default());
    assert!(!h.records().iter().any(include_test));
    assert!(h.diagnostics.iter().any(|d| d.contains("NoOriginalTests")));
}

#[test]
fn harvest_all_revisions_and_dev_baseline() {
    let fx = fixture(revisions());
    let ok = json!({"test_runs": [{"duration_ms": 5, "coverage_file": "cov/util.json"}]});
    script(&fx, "alpha@1.0.0~v1.0.0", ok.clone());
    script(&fx, "alpha@1.0.0~c-before", ok.clone());
    script(&fx, "alpha@1.0.0~c-after~dev", ok);
    let h = harvest(
        &fx,
        HarvestOptions {
            all_revisions: true,
            dev_latest: true,
        },
    );
    assert_eq!(h.records().len(), 2);
    let dev = h.dev_latest.unwrap();
    assert_eq!(dev.patched.base_revision.id, "c-after");
    assert!(dev.patched.replaced_files.is_empty());
    // The unpatched lib/util.js differs from the release, so nothing is attributed.
    assert!(!dev.included());
}

#[test]
fn harvest_is_deterministic() {
    let run = || {
        let fx = fixture(revisions());
        script(
            &fx,
            "alpha@1.0.0~v1.0.0",
            json!({"test_runs": [{"duration_ms": 40, "coverage_file": "cov/util.json"}]}),
        );
        harvest(&fx, HarvestOptions::default())
            .records()
            .into_iter()
            .map(|r| (r.id, r.status, r.report.map(|r| r.all_covered().count())))
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn harvest_without_repo_url() {
    let mut fx = fixture(revisions());
    fx.meta.repo_url = None;
    let h = harvest(&fx, HarvestOptions::default());
    assert!(h.outcomes.is_empty());
    assert_eq!(h.diagnostics.len(), 1);
}
