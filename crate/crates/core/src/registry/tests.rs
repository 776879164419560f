use std::cell::Cell;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use flate2::write::GzEncoder;
use flate2::Compression;

use super::*;

fn make_tgz(files: &[(&str, &str)]) -> Vec<u8> {
    let mut builder = tar::Builder::new(GzEncoder::new(Vec::new(), Compression::default()));
    for (path, body) in files {
        let mut header = tar::Header::new_gnu();
        header.set_size(body.len() as u64);
        header.set_mode(0o644);
        header.set_cksum();
        builder
            .append_data(&mut header, format!("package/{path}"), body.as_bytes())
            .unwrap();
    }
    builder.into_inner().unwrap().finish().unwrap()
}

fn write_fixture(root: &Path) {
    let v = root.join("registry/alpha/1.0.0");
    fs::create_dir_all(&v).unwrap();
    fs::write(
        v.join("metadata.json"),
        r#"{"name":"alpha","version":"1.0.0","release_date":"2019-06-03T00:00:00Z","repository":"https://example.org/alpha.git"}"#,
    )
    .unwrap();
    fs::write(
        v.join("package.tgz"),
        make_tgz(&[
            ("package.json", "{\"name\":\"alpha\"}"),
            ("lib/a.js", "module.exports = 1;\n"),
            ("index.js", "require('./lib/a');\n"),
        ]),
    )
    .unwrap();
    fs::write(
        root.join("dependents.json"),
        r#"{"alpha": [
            {"name": "d1", "versions": [{"version": "1.0.0", "range": "^1.0.0"}]},
            {"name": "d2", "versions": [{"version": "3.0.0", "range": "2.0.0"}]},
            {"name": "d3", "versions": [{"version": "0.9.0", "range": "^1.0.0"}, {"version": "1.2.0", "range": "^1.0.0"}, {"version": "2.0.0", "range": "^2.0.0"}]},
            {"name": "d4", "versions": [{"version": "1.0.0", "range": "*"}]},
            {"name": "d5", "versions": [{"version": "1.0.0", "range": "~1.0.0"}]}
        ]}"#,
    )
    .unwrap();
    fs::write(
        root.join("downloads.json"),
        r#"{"d1": 500, "d2": 900, "d3": 30, "d4": 500, "d5": 20}"#,
    )
    .unwrap();
    fs::write(root.join("stars.json"), r#"{"alpha": 101}"#).unwrap();
}

fn client(root: &Path) -> RegistryClient {
    RegistryClient::fixture(root, root.join("cache")).unwrap()
}

#[test]
fn fixture_metadata_echo() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path());
    let c = client(tmp.path());
    let m = c.fetch_metadata("alpha", "1.0.0").unwrap();
    assert_eq!(m.package.to_string(), "alpha@1.0.0");
    assert_eq!(m.release_date.to_rfc3339(), "2019-06-03T00:00:00+00:00");
    assert!(!m.tarball_url.is_empty());
    assert!(matches!(
        c.fetch_metadata("alpha", "9.0.0"),
        Err(RegistryError::NotFound(_))
    ));
}

#[test]
fn dependents_are_filtered_and_ranked() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path());
    let c = client(tmp.path());
    let target = PackageRef::new("alpha", "1.0.0").unwrap();
    let deps = c.list_dependents(&target, 100).unwrap();
    let names: Vec<_> = deps.iter().map(|d| d.name.as_str()).collect();
    // d2 pins 2.0.0 and is dropped; d1/d4 tie on downloads and sort by name.
    assert_eq!(names, ["d1", "d4", "d3", "d5"]);
    let d3 = &deps[2];
    assert_eq!(d3.version, "1.2.0");
    assert_eq!(d3.declared_range, "^1.0.0");
    for d in &deps {
        assert!(semver_compatible(&d.declared_range, "1.0.0").unwrap());
    }
    assert_eq!(c.list_dependents(&target, 2).unwrap().len(), 2);
}

#[test]
fn ranking_is_stable_under_input_shuffles() {
    let entry = |n: &str| DependentEntry {
        name: n.into(),
        versions: vec![DependentVersion {
            version: "1.0.0".into(),
            range: "^1.0.0".into(),
        }],
    };
    struct Fixed(Vec<DependentEntry>);
    impl DependentsProvider for Fixed {
        fn dependents_of(&self, _: &str) -> Result<Vec<DependentEntry>, RegistryError> {
            Ok(self.0.clone())
        }
    }
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path());
    let orders = [["x", "b", "a", "m"], ["m", "a", "x", "b"]];
    let mut results = Vec::new();
    for order in orders {
        let c = RegistryClient::new(
            Box::new(FixtureRegistry::open(tmp.path()).unwrap()),
            Box::new(Fixed(order.iter().map(|n| entry(n)).collect())),
            Box::new(StarsFile::default()),
            tmp.path().join("cache"),
        );
        let target = PackageRef::new("alpha", "1.0.0").unwrap();
        results.push(
            c.list_dependents(&target, 10)
                .unwrap()
                .into_iter()
                .map(|d| d.name)
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(results[0], ["a", "b", "m", "x"]);
    assert_eq!(results[0], results[1]);
}

#[test]
fn release_download_is_cached_and_hashed() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path());
    let c = client(tmp.path());
    let m = c.fetch_metadata("alpha", "1.0.0").unwrap();
    let first = c.download_release(&m).unwrap();
    assert_eq!(first.manifest.len(), 3);
    // sha256 of "module.exports = 1;\n", computed with sha256sum.
    assert_eq!(
        first.manifest.files["lib/a.js"].sha256,
        "6e66e366f0aefb84ad8110afcd9b2245702c643c831edf8316ff048fec739d2e"
    );
    let second = c.download_release(&m).unwrap();
    assert_eq!(first.manifest, second.manifest);
    assert_eq!(first.dir, second.dir);
    assert!(first.dir.join("lib/a.js").is_file());
}

#[test]
fn corrupt_tarball_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path());
    fs::write(tmp.path().join("registry/alpha/1.0.0/package.tgz"), b"not a tarball").unwrap();
    let c = client(tmp.path());
    let m = c.fetch_metadata("alpha", "1.0.0").unwrap();
    assert!(matches!(c.download_release(&m), Err(RegistryError::TarballCorrupt(_))));
}

#[test]
fn popularity_boundaries() {
    let t = PopularityThresholds::default();
    let cand = |downloads: f64, stars: u64, dependents: usize| PopularityCandidate {
        package: PackageRef::new("p", "1.0.0").unwrap(),
        avg_daily_downloads: downloads,
        stars,
        dependents,
    };
    assert_eq!(popularity_filter(&[cand(10_000.0, 101, 20)], &t).len(), 1);
    assert!(popularity_filter(&[cand(10_000.0, 100, 20)], &t).is_empty());
    assert!(popularity_filter(&[cand(9_999.9, 500, 20)], &t).is_empty());
    assert!(popularity_filter(&[cand(20_000.0, 500, 19)], &t).is_empty());
    assert!(popularity_filter(&[], &t).is_empty());
}

#[test]
fn popularity_candidate_from_providers() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path());
    let c = client(tmp.path());
    let cand = c
        .popularity_candidate(&PackageRef::new("alpha", "1.0.0").unwrap())
        .unwrap();
    assert_eq!(cand.stars, 101);
    assert_eq!(cand.dependents, 4);
}

#[test]
fn retry_only_on_unavailable() {
    let policy = RetryPolicy {
        attempts: 3,
        initial_backoff: Duration::from_millis(1),
    };
    let calls = Cell::new(0);
    let r: Result<(), _> = policy.run(|| {
        calls.set(calls.get() + 1);
        Err(RegistryError::ProviderUnavailable("down".into()))
    });
    assert!(r.is_err());
    assert_eq!(calls.get(), 3);

    calls.set(0);
    let r: Result<(), _> = policy.run(|| {
        calls.set(calls.get() + 1);
        Err(RegistryError::NotFound("x".into()))
    });
    assert!(r.is_err());
    assert_eq!(calls.get(), 1);

    calls.set(0);
    let r = policy.run(|| {
        calls.set(calls.get() + 1);
        if calls.get() < 2 {
            Err(RegistryError::ProviderUnavailable("blip".into()))
        } else {
            Ok(7)
        }
    });
    assert_eq!(r.unwrap(), 7);
}

#[test]
fn manifest_declarations_build_universe() {
    let mut manifest = FileManifest {
        files: BTreeMap::from([(
            "lib/a.js".to_string(),
            ManifestEntry {
                sha256: "00".into(),
                elements: None,
            },
        )]),
    };
    assert!(manifest.universe().is_err());
    let raw = crate::coverage::RawCoverage::parse(
        br#"{"package":"alpha@1.0.0","files":{"lib/a.js":{"statements":[{"line":1,"column":0,"hits":0}],"functions":[],"branches":[{"line":2,"column":4,"arm":0,"hits":0},{"line":2,"column":4,"arm":1,"hits":0}]},"other.js":{"statements":[{"line":1,"column":0,"hits":0}]}}}"#,
    )
    .unwrap();
    manifest.attach_declarations(&raw);
    let u = manifest.universe().unwrap();
    assert_eq!(u.len(crate::CoverageKind::Statement), 1);
    assert_eq!(u.len(crate::CoverageKind::Branch), 2);
    assert_eq!(u.len(crate::CoverageKind::Function), 0);
}
