use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{test_dir_name, write_json, SuiteManifest};
use super::AssembleError;
use crate::analysis::{aggregate, run_analysis, AnalysisSpec, AnalysisSummary, SuiteVariant, TaggedFinding};
use crate::registry::FileManifest;

#[derive(Clone, Debug)]
pub struct AnalyzeConfig {
    pub analyses: Vec<AnalysisSpec>,
    pub suite: SuiteVariant,
    pub workers: usize,
    pub timeout: Duration,
}

/// `analysis-findings.json`: accumulated findings of every analysis run
/// over a package, tagged with the suite variant it was run on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FindingsFile {
    pub analyses: Vec<String>,
    pub variants: Vec<SuiteVariant>,
    pub findings: Vec<TaggedFinding>,
    pub diagnostics: Vec<String>,
}

impl FindingsFile {
    pub const FILE: &'static str = "analysis-findings.json";

    pub fn load(package_dir: &Path) -> std::io::Result<Option<FindingsFile>> {
        match fs::read(package_dir.join(Self::FILE)) {
            Ok(b) => serde_json::from_slice(&b).map(Some).map_err(std::io::Error::other),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Runs every analysis on the included tests of `config.suite` in each
/// package and returns the summary over all recorded findings.
pub fn analyze(package_dirs: &[PathBuf], config: &AnalyzeConfig) -> Result<AnalysisSummary, AssembleError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| AssembleError::Config(format!("worker pool: {e}")))?;
    let mut all = Vec::new();
    let mut ids: Vec<String> = Vec::new();
    let mut variants: Vec<SuiteVariant> = Vec::new();
    for dir in package_dirs {
        // Commands run inside the workspace, so rendered paths must not be relative.
        let dir = &std::path::absolute(dir)?;
        let manifest = SuiteManifest::load(dir)
            .map_err(|e| AssembleError::Config(format!("{}: not an assembled package: {e}", dir.display())))?;
        let release: FileManifest = serde_json::from_slice(&fs::read(dir.join("release-manifest.json"))?)
            .map_err(|e| AssembleError::Config(format!("{}: {e}", dir.display())))?;
        let tests: Vec<_> = manifest
            .tests
            .iter()
            .filter(|t| config.suite.contains(&t.record.provenance))
            .collect();
        let jobs: Vec<(&AnalysisSpec, _)> = config
            .analyses
            .iter()
            .flat_map(|a| tests.iter().map(move |t| (a, *t)))
            .collect();
        let results: Vec<Result<Vec<TaggedFinding>, String>> = pool.install(|| {
            jobs.par_iter()
                .map(|(spec, t)| {
                    let out = dir
                        .join("analysis")
                        .join(&spec.id)
                        .join(format!("{}.json", test_dir_name(&t.record.id)));
                    fs::create_dir_all(out.parent().expect("has parent")).map_err(|e| e.to_string())?;
                    let ws = dir.join(&t.workspace);
                    run_analysis(
                        spec,
                        &t.record.id,
                        &ws,
                        &out,
                        &release,
                        &t.coverage_prefix,
                        config.timeout,
                    )
                    .map(|fs| {
                        fs.into_iter()
                            .map(|finding| TaggedFinding {
                                package: manifest.target.clone(),
                                variant: config.suite,
                                finding,
                            })
                            .collect()
                    })
                    .map_err(|e| format!("{}: {}: {e}", t.record.id, spec.id))
                })
                .collect()
        });

        let mut file = FindingsFile::load(dir)?.unwrap_or_default();
        let ran: Vec<&str> = config.analyses.iter().map(|a| a.id.as_str()).collect();
        file.findings
            .retain(|f| !(f.variant == config.suite && ran.contains(&f.finding.analysis.as_str())));
        file.diagnostics
            .retain(|d| !ran.iter().any(|id| d.contains(&format!(": {id}: "))));
        for r in results {
            match r {
                Ok(fs) => file.findings.extend(fs),
                Err(d) => file.diagnostics.push(d),
            }
        }
        file.analyses.extend(ran.iter().map(|s| s.to_string()));
        file.analyses.sort();
        file.analyses.dedup();
        file.variants.push(config.suite);
        file.variants.sort();
        file.variants.dedup();
        file.findings.sort_by(|a, b| {
            (&a.finding.analysis, a.variant, &a.finding.location, &a.finding.test).cmp(&(
                &b.finding.analysis,
                b.variant,
                &b.finding.location,
                &b.finding.test,
            ))
        });
        file.diagnostics.sort();
        write_json(&dir.join(FindingsFile::FILE), &file)?;
        ids.extend(file.analyses.iter().cloned());
        variants.extend(file.variants.iter().copied());
        all.extend(file.findings);
        let summary = aggregate_one(dir)?;
        write_json(&dir.join("analysis-summary.json"), &summary)?;
        super::manifest::write_atomic(&dir.join("analysis-summary.csv"), summary.to_csv().as_bytes())?;
    }
    ids.sort();
    ids.dedup();
    variants.sort();
    variants.dedup();
    Ok(aggregate(&all, &variants, &ids))
}

fn aggregate_one(dir: &Path) -> std::io::Result<AnalysisSummary> {
    let f = FindingsFile::load(dir)?.unwrap_or_default();
    Ok(aggregate(&f.findings, &f.variants, &f.analyses))
}
