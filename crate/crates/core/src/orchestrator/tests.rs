use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::*;
use crate::coverage::CoverageRatio;

fn of(covered: u64, total: u64) -> PerKind<Option<CoverageRatio>> {
    PerKind::from_fn(|k| (k == CoverageKind::Statement).then(|| CoverageRatio::new(covered, total)))
}

fn ecosystem() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/tests/fixtures/ecosystem")
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(root).unwrap().display().to_string();
            (rel, fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn thresholds_count_boundaries_inclusively() {
    let t = threshold_table(&[of(85, 100), of(25, 100), of(0, 100)]);
    let s = &t[CoverageKind::Statement];
    assert_eq!((s.population, s.at_least_80, s.at_least_20, s.above_0), (3, 1, 2, 2));

    let t = threshold_table(&[of(80, 100), of(20, 100)]);
    let s = &t[CoverageKind::Statement];
    assert_eq!((s.at_least_80, s.at_least_20, s.above_0), (1, 2, 2));

    // 79.99 % is below the bar even though it prints as 80.0.
    let t = threshold_table(&[of(7999, 10000)]);
    assert_eq!(t[CoverageKind::Statement].at_least_80, 0);

    let t = threshold_table(&[]);
    let s = &t[CoverageKind::Statement];
    assert_eq!((s.population, s.at_least_80, s.at_least_20, s.above_0), (0, 0, 0, 0));
    assert_eq!(s.percentages(), ["n/a", "n/a", "n/a"]);
    // Kinds without elements stay out of the population.
    assert_eq!(threshold_table(&[of(1, 2)])[CoverageKind::Branch].population, 0);
}

#[test]
fn durations() {
    assert_eq!(format_duration(4200.0), "4.20s");
    assert_eq!(format_duration(1_169_000.0), "19m29s");
    assert_eq!(format_duration(5_280_000.0), "1h28m");
    assert_eq!(format_duration(59_400.0), "59.40s");
    assert_eq!(format_duration(-3.0), "0.00s");
}

#[test]
fn compaction_header_columns() {
    let cols: Vec<&str> = COMPACTION_HEADER.split(',').collect();
    assert_eq!(
        cols,
        [
            "Package",
            "# Tests Included (before)",
            "# Tests Included (after)",
            "Execution Time (before)",
            "Execution Time (after)",
            "Comp. Rate",
            "Comp. Time"
        ]
    );
}

#[test]
fn config_errors() {
    let out = tempfile::tempdir().unwrap();
    let target = PackageRef::new("alpha", "1.0.0").unwrap();
    let mut c = AssembleConfig::new(target.clone(), out.path(), Mode::Fixture(ecosystem()));
    c.search.workers = 0;
    assert!(matches!(assemble(&c), Err(AssembleError::Config(_))));

    let mut c = AssembleConfig::new(target.clone(), out.path(), Mode::Fixture(ecosystem()));
    c.search.max_dependents = 0;
    assert!(matches!(assemble(&c), Err(AssembleError::Config(_))));

    let c = AssembleConfig::new(target, out.path(), Mode::Fixture(out.path().join("missing")));
    assert!(matches!(assemble(&c), Err(AssembleError::Config(_))));

    let c = AssembleConfig::new(
        PackageRef::new("nope", "1.0.0").unwrap(),
        out.path(),
        Mode::Fixture(ecosystem()),
    );
    assert!(matches!(assemble(&c), Err(AssembleError::Config(_))));
}

#[test]
fn assembles_fixture_package_and_reemits_identically() {
    let out = tempfile::tempdir().unwrap();
    let mut c = AssembleConfig::new(
        PackageRef::new("alpha", "1.0.0").unwrap(),
        out.path(),
        Mode::Fixture(ecosystem()),
    );
    c.search.workers = 2;
    let a = assemble(&c).unwrap();

    let counts = a.manifest.member_counts();
    assert_eq!(counts.get(&Variant::NpmRelease), Some(&1));
    assert_eq!(counts.get(&Variant::Original), Some(&1));
    assert_eq!(counts.get(&Variant::Dependent), Some(&4));
    let ids: Vec<&str> = a.manifest.excluded.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, ["dependent:dep-zero@1.0.0:0", "dependent:dep-flaky@1.0.0:0"]);

    let total = &a.manifest.coverage.total;
    assert_eq!(total[CoverageKind::Statement], Some(CoverageRatio::new(10, 10)));
    assert_eq!(total[CoverageKind::Function], Some(CoverageRatio::new(4, 4)));
    assert_eq!(total[CoverageKind::Branch], Some(CoverageRatio::new(6, 6)));
    let dep = &a.manifest.coverage.dependent;
    assert_eq!(dep[CoverageKind::Statement], Some(CoverageRatio::new(8, 10)));
    assert_eq!(dep[CoverageKind::Branch], Some(CoverageRatio::new(4, 6)));

    let sol = a.manifest.compaction.as_ref().unwrap();
    assert_eq!(
        sol.selected,
        [
            "dependent:dep-c@1.0.0:0",
            "dependent:dep-mocha@1.0.0:0",
            "original:v1.0.0:0"
        ]
    );
    assert_eq!(sol.total_time_ms, 7700.0);
    assert_eq!(sol.full_time_ms, 10700.0);

    let reports = a.package_dir.join("reports");
    let first = read_tree(&reports);
    assert!(first.contains_key("coverage.csv") && first.contains_key("compaction.csv"));
    let again = out.path().join("again");
    emit_reports(std::slice::from_ref(&a.package_dir), &again).unwrap();
    emit_reports(std::slice::from_ref(&a.package_dir), &again).unwrap();
    assert_eq!(read_tree(&again), first);
}
