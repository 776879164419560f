use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::registry::{FileManifest, ManifestEntry, PackageRef};

fn pkg() -> PackageRef {
    PackageRef::new("alpha", "1.0.0").unwrap()
}

fn stmt_universe(n: u32) -> Arc<ElementUniverse> {
    Arc::new(ElementUniverse::from_elements(
        (1..=n).map(|l| ElementId::statement("lib/a.js", l, 0)),
    ))
}

fn report(u: &Arc<ElementUniverse>, lines: &[u32]) -> CoverageReport {
    CoverageReport::new(
        pkg(),
        u.clone(),
        lines.iter().map(|&l| ElementId::statement("lib/a.js", l, 0)),
    )
}

/// Counts the distinct elements of a materialized, sorted union.
fn brute_union_count(reports: &[CoverageReport], kind: CoverageKind) -> usize {
    let mut all: Vec<String> = reports
        .iter()
        .flat_map(|r| r.covered(kind).iter().map(|e| e.to_string()))
        .collect();
    all.sort();
    all.dedup();
    all.len()
}

#[test]
fn cov_worked_example() {
    let u = stmt_universe(4);
    let t1 = report(&u, &[1, 2]);
    let t2 = report(&u, &[2, 3]);
    let r = cov(CoverageKind::Statement, &u, [&t1, &t2]).unwrap();
    assert_eq!((r.covered, r.total), (3, 4));
    assert_eq!(r.as_f64(), 0.75);
}

#[test]
fn cov_of_nothing_is_zero() {
    let u = stmt_universe(4);
    let r = cov(CoverageKind::Statement, &u, std::iter::empty::<&CoverageReport>()).unwrap();
    assert!(r.is_zero());
}

#[test]
fn cov_without_elements_is_not_applicable() {
    let u = stmt_universe(4);
    assert_eq!(
        cov(CoverageKind::Function, &u, std::iter::empty::<&CoverageReport>()),
        Err(CoverageError::DivisionUndefined(CoverageKind::Function))
    );
    let all = cov_all(&u, [&report(&u, &[1])]).unwrap();
    assert!(all.function.is_none() && all.branch.is_none());
    assert_eq!(all.statement.unwrap().covered, 1);
}

#[test]
fn universe_mismatch() {
    let u1 = stmt_universe(4);
    let u2 = stmt_universe(5);
    let a = report(&u1, &[1]);
    let b = report(&u2, &[1]);
    assert_eq!(
        cov(CoverageKind::Statement, &u1, [&a, &b]),
        Err(CoverageError::UniverseMismatch)
    );
    assert_eq!(merge([&a, &b]), Err(CoverageError::UniverseMismatch));
    assert_eq!(
        merge(std::iter::empty::<&CoverageReport>()),
        Err(CoverageError::EmptyMerge)
    );
}

#[test]
fn merge_is_idempotent_and_commutative() {
    let u = stmt_universe(6);
    let a = report(&u, &[1, 2]);
    let b = report(&u, &[2, 5]);
    assert_eq!(merge([&a, &a]).unwrap(), a);
    assert_eq!(merge([&a, &b]).unwrap(), merge([&b, &a]).unwrap());
}

#[test]
fn covered_outside_universe_is_dropped() {
    let u = stmt_universe(2);
    let r = report(&u, &[1, 2, 3]);
    assert_eq!(r.covered(CoverageKind::Statement).len(), 2);
}

#[test]
fn random_reports_match_union_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let u = stmt_universe(200);
    let reports: Vec<_> = (0..50)
        .map(|_| {
            let lines: Vec<u32> = (0..rng.gen_range(0..40)).map(|_| rng.gen_range(1..=200)).collect();
            report(&u, &lines)
        })
        .collect();
    let r = cov(CoverageKind::Statement, &u, &reports).unwrap();
    assert_eq!(r.covered as usize, brute_union_count(&reports, CoverageKind::Statement));
    assert_eq!(r.total, 200);
}

#[test]
fn merged_singleton_matches_set_coverage() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = stmt_universe(120);
    let reports: Vec<_> = (0..20)
        .map(|_| {
            let lines: Vec<u32> = (0..rng.gen_range(0..15)).map(|_| rng.gen_range(1..=120)).collect();
            report(&u, &lines)
        })
        .collect();
    let merged = merge(&reports).unwrap();
    assert_eq!(
        cov(CoverageKind::Statement, &u, [&merged]).unwrap(),
        cov(CoverageKind::Statement, &u, &reports).unwrap()
    );
}

fn record(status: TestStatus, report: Option<CoverageReport>) -> TestRecord {
    TestRecord {
        id: "t".into(),
        provenance: Provenance::NpmRelease,
        status,
        median_time_ms: 10.0,
        report,
        stderr_tail: String::new(),
    }
}

#[test]
fn inclusion_rule() {
    let u = stmt_universe(100);
    assert!(include_test(&record(TestStatus::Pass, Some(report(&u, &[1])))));
    assert!(!include_test(&record(TestStatus::Pass, Some(report(&u, &[])))));
    assert!(!include_test(&record(TestStatus::Fail, Some(report(&u, &[1, 2])))));
    assert!(!include_test(&record(TestStatus::Flaky, Some(report(&u, &[1])))));
    assert!(!include_test(&record(TestStatus::Pass, None)));
}

#[test]
fn report_file_round_trip() {
    let u = Arc::new(ElementUniverse::from_elements([
        ElementId::statement("a.js", 1, 0),
        ElementId::function("a.js", 1, 0),
        ElementId::branch("a.js", 2, 3, 1),
    ]));
    let r = CoverageReport::new(pkg(), u.clone(), [ElementId::branch("a.js", 2, 3, 1)]);
    let json = serde_json::to_string(&r.to_file()).unwrap();
    assert!(json.contains("a.js:branch:2:3:1"));
    let back: ReportFile = serde_json::from_str(&json).unwrap();
    assert_eq!(CoverageReport::from_file(&back, u).unwrap(), r);
    let other = stmt_universe(3);
    assert_eq!(
        CoverageReport::from_file(&back, other),
        Err(CoverageError::UniverseMismatch)
    );
}

// --- normalization -------------------------------------------------------

const FIXTURE_RAW: &str = r#"{
  "package": "alpha@1.0.0",
  "files": {
    "lib/a.js": {
      "statements": [
        {"line": 1, "column": 0, "hits": 1},
        {"line": 2, "column": 2, "hits": 0},
        {"line": 3, "column": 2, "hits": 4},
        {"line": 4, "column": 0, "hits": 0},
        {"line": 5, "column": 0, "hits": 0},
        {"line": 6, "column": 4, "hits": 2},
        {"line": 7, "column": 4, "hits": 0},
        {"line": 8, "column": 0, "hits": 1},
        {"line": 9, "column": 0, "hits": 0},
        {"line": 10, "column": 0, "hits": 0}
      ],
      "functions": [{"line": 1, "column": 0, "hits": 1}, {"line": 9, "column": 0, "hits": 0}],
      "branches": [
        {"line": 6, "column": 4, "arm": 0, "hits": 2},
        {"line": 6, "column": 4, "arm": 1, "hits": 0}
      ]
    },
    "node_modules/x/b.js": {
      "statements": [{"line": 1, "column": 0, "hits": 9}]
    }
  }
}"#;

fn fixture_manifest(hash: &str) -> FileManifest {
    let mut m = FileManifest {
        files: BTreeMap::from([(
            "lib/a.js".to_string(),
            ManifestEntry {
                sha256: hash.into(),
                elements: None,
            },
        )]),
    };
    m.attach_declarations(&RawCoverage::parse(FIXTURE_RAW.as_bytes()).unwrap());
    m
}

#[test]
fn normalize_counts_fixture_elements() {
    // Hand count of FIXTURE_RAW: 10 statements, hits > 0 on lines 1, 3, 6, 8.
    let m = fixture_manifest("aa");
    let r = normalize_raw(FIXTURE_RAW.as_bytes(), &pkg(), &m, &NormalizeScope::default()).unwrap();
    assert_eq!(r.universe.len(CoverageKind::Statement), 10);
    assert_eq!(r.covered(CoverageKind::Statement).len(), 4);
    assert_eq!(r.covered(CoverageKind::Function).len(), 1);
    assert_eq!(r.covered(CoverageKind::Branch).len(), 1);
    assert!(r.all_covered().all(|e| e.file == "lib/a.js"));
}

#[test]
fn normalize_drops_hash_mismatched_files() {
    let m = fixture_manifest("aa");
    let scope = NormalizeScope {
        prefix: String::new(),
        observed_hashes: BTreeMap::from([("lib/a.js".to_string(), "bb".to_string())]),
    };
    let r = normalize_raw(FIXTURE_RAW.as_bytes(), &pkg(), &m, &scope).unwrap();
    assert_eq!(r.all_covered().count(), 0);
    assert_eq!(r.universe.len(CoverageKind::Statement), 10);
}

#[test]
fn normalize_under_installed_prefix() {
    let m = fixture_manifest("aa");
    let raw = FIXTURE_RAW.replace("\"lib/a.js\"", "\"node_modules/alpha/lib/a.js\"");
    let scope = NormalizeScope::with_prefix("node_modules/alpha");
    let r = normalize_raw(raw.as_bytes(), &pkg(), &m, &scope).unwrap();
    assert_eq!(r.covered(CoverageKind::Statement).len(), 4);
    // The same raw without the prefix mapping attributes nothing.
    let r = normalize_raw(raw.as_bytes(), &pkg(), &m, &NormalizeScope::default()).unwrap();
    assert_eq!(r.all_covered().count(), 0);
}

#[test]
fn normalize_errors() {
    let m = fixture_manifest("aa");
    let scope = NormalizeScope::default();
    assert!(matches!(
        normalize_raw(b"{not json", &pkg(), &m, &scope),
        Err(CoverageError::MalformedReport(_))
    ));
    assert!(matches!(
        normalize_raw(
            br#"{"package":"a@1.0.0","files":{"a.js":{"statements":[{"line":0,"column":0,"hits":1}]}}}"#,
            &pkg(),
            &m,
            &scope
        ),
        Err(CoverageError::MalformedReport(_))
    ));
    assert!(matches!(
        normalize_raw(br#"{"package":"a@1.0.0","files":{},"extra":1}"#, &pkg(), &m, &scope),
        Err(CoverageError::MalformedReport(_))
    ));
    let empty = FileManifest::default();
    assert_eq!(
        normalize_raw(FIXTURE_RAW.as_bytes(), &pkg(), &empty, &scope),
        Err(CoverageError::EmptyUniverse)
    );
}

#[test]
fn normalize_is_deterministic() {
    let m = fixture_manifest("aa");
    let a = normalize_raw(FIXTURE_RAW.as_bytes(), &pkg(), &m, &NormalizeScope::default()).unwrap();
    let b = normalize_raw(FIXTURE_RAW.as_bytes(), &pkg(), &m, &NormalizeScope::default()).unwrap();
    assert_eq!(
        serde_json::to_vec(&a.to_file()).unwrap(),
        serde_json::to_vec(&b.to_file()).unwrap()
    );
}

fn arb_lines(n: u32) -> impl Strategy<Value = Vec<BTreeSet<u32>>> {
    prop::collection::vec(prop::collection::btree_set(1..=n, 0..(n as usize)), 0..12)
}

proptest! {
    #[test]
    fn cov_is_monotone_bounded_and_order_free(sets in arb_lines(30), extra in prop::collection::btree_set(1u32..=30, 0..10)) {
        let u = stmt_universe(30);
        let reports: Vec<_> = sets.iter().map(|s| report(&u, &s.iter().copied().collect::<Vec<_>>())).collect();
        let base = cov(CoverageKind::Statement, &u, &reports).unwrap();
        let mut bigger = reports.clone();
        bigger.push(report(&u, &extra.iter().copied().collect::<Vec<_>>()));
        let grown = cov(CoverageKind::Statement, &u, &bigger).unwrap();
        prop_assert!(base <= grown);
        prop_assert!(grown.covered <= grown.total);
        let union: BTreeSet<u32> = sets.iter().flatten().copied().collect();
        prop_assert_eq!(base.is_full(), union.len() == 30);

        let mut reversed = reports.clone();
        reversed.reverse();
        prop_assert_eq!(cov(CoverageKind::Statement, &u, &reversed).unwrap(), base);
        if !reports.is_empty() {
            prop_assert_eq!(merge(&reversed).unwrap(), merge(&reports).unwrap());
        }
    }

    #[test]
    fn merge_is_associative(a in arb_lines(20), b in arb_lines(20)) {
        let u = stmt_universe(20);
        let mk = |s: &BTreeSet<u32>| report(&u, &s.iter().copied().collect::<Vec<_>>());
        let x = mk(&a.iter().flatten().copied().collect());
        let y = mk(&b.iter().flatten().copied().collect());
        let z = mk(&a.first().cloned().unwrap_or_default());
        let left = merge([&merge([&x, &y]).unwrap(), &z]).unwrap();
        let right = merge([&x, &merge([&y, &z]).unwrap()]).unwrap();
        prop_assert_eq!(left, right);
    }
}
