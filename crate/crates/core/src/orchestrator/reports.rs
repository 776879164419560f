use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::analyze::FindingsFile;
use super::manifest::{write_atomic, SuiteManifest, Timing};
use crate::analysis::{aggregate, SuiteVariant, TaggedFinding};
use crate::coverage::{CoverageKind, CoverageRatio, PerKind};
use crate::dependents::SearchTrace;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdCounts {
    /// Packages for which the kind is defined.
    pub population: usize,
    pub at_least_80: usize,
    pub at_least_20: usize,
    pub above_0: usize,
}

impl ThresholdCounts {
    pub fn percentages(&self) -> [String; 3] {
        [self.at_least_80, self.at_least_20, self.above_0].map(|c| {
            if self.population == 0 {
                "n/a".to_string()
            } else {
                CoverageRatio::new(c as u64, self.population as u64).percent()
            }
        })
    }
}

pub type ThresholdTable = PerKind<ThresholdCounts>;

/// Counts of packages with coverage >= 80 %, >= 20 % and > 0 %, per kind.
/// Kinds a package does not have are left out of its population.
pub fn threshold_table(coverages: &[PerKind<Option<CoverageRatio>>]) -> ThresholdTable {
    PerKind::from_fn(|k| {
        let mut t = ThresholdCounts::default();
        for r in coverages.iter().filter_map(|c| c[k]) {
            t.population += 1;
            t.at_least_80 += usize::from(r.at_least(4, 5));
            t.at_least_20 += usize::from(r.at_least(1, 5));
            t.above_0 += usize::from(!r.is_zero());
        }
        t
    })
}

/// `1h28m`, `19m29s`, `4.20s`.
pub fn format_duration(ms: f64) -> String {
    let ms = ms.max(0.0);
    let secs = (ms / 1000.0).round() as u64;
    if secs >= 3600 {
        format!("{}h{:02}m", secs / 3600, (secs % 3600) / 60)
    } else if secs >= 60 {
        format!("{}m{:02}s", secs / 60, secs % 60)
    } else {
        format!("{:.2}s", ms / 1000.0)
    }
}

pub const COMPACTION_HEADER: &str = "Package,# Tests Included (before),# Tests Included (after),\
Execution Time (before),Execution Time (after),Comp. Rate,Comp. Time";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompactionRow {
    pub package: String,
    pub tests_before: f64,
    pub tests_after: f64,
    pub time_before_ms: f64,
    pub time_after_ms: f64,
    pub rate: f64,
    pub solver_seconds: Option<f64>,
}

impl CompactionRow {
    fn csv(&self, counts_are_means: bool) -> String {
        let n = |v: f64| {
            if counts_are_means {
                format!("{v:.2}")
            } else {
                format!("{v:.0}")
            }
        };
        format!(
            "{},{},{},{},{},{:.1},{}",
            self.package,
            n(self.tests_before),
            n(self.tests_after),
            format_duration(self.time_before_ms),
            format_duration(self.time_after_ms),
            self.rate,
            self.solver_seconds.map_or_else(|| "n/a".into(), |s| format!("{s:.2}s")),
        )
    }
}

fn pct(r: &Option<CoverageRatio>) -> String {
    r.map_or_else(|| "n/a".into(), |r| r.percent())
}

#[derive(Serialize)]
struct ThresholdReport<'a> {
    variant: &'a str,
    table: ThresholdTable,
}

/// Writes the cross-package reports for the given package output
/// directories into `reports_dir`. Output depends only on the persisted
/// files, in sorted package order.
pub fn emit_reports(package_dirs: &[PathBuf], reports_dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut loaded: Vec<(PathBuf, SuiteManifest)> = package_dirs
        .iter()
        .map(|d| SuiteManifest::load(d).map(|m| (d.clone(), m)))
        .collect::<Result<_, _>>()?;
    loaded.sort_by(|a, b| a.1.target.cmp(&b.1.target));
    loaded.dedup_by(|a, b| a.1.target == b.1.target);
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> std::io::Result<()> {
        let p = reports_dir.join(name);
        write_atomic(&p, bytes)?;
        written.push(p);
        Ok(())
    };

    // Per-variant coverage.
    let mut cov_csv = String::from("package,variant,tests,statement_pct,function_pct,branch_pct\n");
    for (_, m) in &loaded {
        let counts = m.member_counts();
        for (label, c) in m.coverage.rows() {
            let n = match label {
                "npm" => counts[&super::Variant::NpmRelease],
                "original" => counts[&super::Variant::Original],
                "dependent" => counts[&super::Variant::Dependent],
                _ => m.tests.len(),
            };
            let _ = writeln!(
                cov_csv,
                "{},{label},{n},{},{},{}",
                m.target,
                pct(&c.statement),
                pct(&c.function),
                pct(&c.branch)
            );
        }
    }
    put("coverage.csv", cov_csv.as_bytes())?;

    // Threshold tables per variant and kind.
    let mut thresholds = Vec::new();
    let mut th_csv = String::from("variant,kind,population,ge_80,ge_20,gt_0,ge_80_pct,ge_20_pct,gt_0_pct\n");
    for variant in ["npm", "original", "dependent", "total"] {
        let covs: Vec<PerKind<Option<CoverageRatio>>> = loaded
            .iter()
            .map(|(_, m)| {
                m.coverage
                    .rows()
                    .into_iter()
                    .find(|(l, _)| *l == variant)
                    .expect("known row")
                    .1
                    .clone()
            })
            .collect();
        let table = threshold_table(&covs);
        for k in CoverageKind::ALL {
            let t = &table[k];
            let [a, b, c] = t.percentages();
            let _ = writeln!(
                th_csv,
                "{variant},{},{},{},{},{},{a},{b},{c}",
                k.as_str(),
                t.population,
                t.at_least_80,
                t.at_least_20,
                t.above_0
            );
        }
        thresholds.push(ThresholdReport { variant, table });
    }
    let mut th_json = serde_json::to_string_pretty(&thresholds).map_err(std::io::Error::other)?;
    th_json.push('\n');
    put("thresholds.json", th_json.as_bytes())?;
    put("thresholds.csv", th_csv.as_bytes())?;

    // Compaction before/after.
    let mut rows = Vec::new();
    for (dir, m) in &loaded {
        let Some(sol) = &m.compaction else { continue };
        rows.push(CompactionRow {
            package: m.target.to_string(),
            tests_before: sol.tests_before as f64,
            tests_after: sol.selected.len() as f64,
            time_before_ms: sol.full_time_ms,
            time_after_ms: sol.total_time_ms,
            rate: sol.rate,
            solver_seconds: Timing::load(dir).solver_seconds,
        });
    }
    let mut comp_csv = format!("{COMPACTION_HEADER}\n");
    for r in &rows {
        comp_csv.push_str(&r.csv(false));
        comp_csv.push('\n');
    }
    if rows.len() > 1 {
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&CompactionRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let solver: Vec<f64> = rows.iter().filter_map(|r| r.solver_seconds).collect();
        let avg = CompactionRow {
            package: "all (average)".into(),
            tests_before: mean(&|r| r.tests_before),
            tests_after: mean(&|r| r.tests_after),
            time_before_ms: mean(&|r| r.time_before_ms),
            time_after_ms: mean(&|r| r.time_after_ms),
            rate: mean(&|r| r.rate),
            solver_seconds: (!solver.is_empty()).then(|| solver.iter().sum::<f64>() / solver.len() as f64),
        };
        comp_csv.push_str(&avg.csv(true));
        comp_csv.push('\n');
    }
    put("compaction.csv", comp_csv.as_bytes())?;
    let mut comp_json = serde_json::to_string_pretty(&rows).map_err(std::io::Error::other)?;
    comp_json.push('\n');
    put("compaction.json", comp_json.as_bytes())?;

    // Search traces.
    let mut trace_csv = String::new();
    for (dir, m) in &loaded {
        let Ok(bytes) = std::fs::read(dir.join("trace.json")) else {
            continue;
        };
        let trace: SearchTrace = serde_json::from_slice(&bytes).map_err(std::io::Error::other)?;
        let csv = trace.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if trace_csv.is_empty() {
            let _ = writeln!(trace_csv, "package,{header}");
        }
        for l in lines {
            let _ = writeln!(trace_csv, "{},{l}", m.target);
        }
    }
    if !trace_csv.is_empty() {
        put("traces.csv", trace_csv.as_bytes())?;
    }

    // Analysis summary.
    let mut findings: Vec<TaggedFinding> = Vec::new();
    let mut analyses: BTreeMap<String, ()> = BTreeMap::new();
    let mut variants: BTreeMap<SuiteVariant, ()> = BTreeMap::new();
    for (dir, _) in &loaded {
        if let Some(f) = FindingsFile::load(dir)? {
            analyses.extend(f.analyses.iter().map(|a| (a.clone(), ())));
            variants.extend(f.variants.iter().map(|v| (*v, ())));
            findings.extend(f.findings);
        }
    }
    if !analyses.is_empty() {
        let variants: Vec<SuiteVariant> = variants.into_keys().collect();
        let ids: Vec<String> = analyses.into_keys().collect();
        let summary = aggregate(&findings, &variants, &ids);
        let mut json = serde_json::to_string_pretty(&summary).map_err(std::io::Error::other)?;
        json.push('\n');
        put("analysis-summary.json", json.as_bytes())?;
        put("analysis-summary.csv", summary.to_csv().as_bytes())?;
    }
    Ok(written)
}
