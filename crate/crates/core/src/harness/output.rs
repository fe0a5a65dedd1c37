use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::experiments::{AblationReport, ComparisonReport, NoiseSweepReport, PipelineReport};
use crate::anchor::write_phenotype;
use crate::gwas::write_sumstats;
use crate::Result;

/// Writes `contents` to `dir/name` through a temporary file and a rename, so
/// readers never see a partial file.
pub fn write_report(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, &path)?;
    Ok(path)
}

fn write_config(dir: &Path, config: &ExperimentConfig) -> Result<PathBuf> {
    write_report(dir, "config.toml", config.to_toml()?.as_bytes())
}

pub fn write_comparison(report: &ComparisonReport, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(vec![
        write_report(dir, "classifier_runs.tsv", report.runs_tsv().as_bytes())?,
        write_report(dir, "classifier_summary.tsv", report.summary_tsv(config.seed).as_bytes())?,
        write_config(dir, config)?,
    ])
}

pub fn write_noise_sweep(report: &NoiseSweepReport, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(vec![
        write_report(dir, "noise_runs.tsv", report.runs_tsv().as_bytes())?,
        write_report(dir, "noise_summary.tsv", report.summary_tsv(config.seed).as_bytes())?,
        write_config(dir, config)?,
    ])
}

pub fn write_ablation(report: &AblationReport, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(vec![
        write_report(dir, "ablation_runs.tsv", report.runs_tsv().as_bytes())?,
        write_report(dir, "ablation_summary.tsv", report.summary_tsv().as_bytes())?,
        write_config(dir, config)?,
    ])
}

/// Catalog comparison, classifier metrics, and per-method summary statistics
/// and phenotypes.
pub fn write_pipeline(report: &PipelineReport, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = vec![
        write_report(dir, "catalog_comparison.tsv", report.catalog_tsv().as_bytes())?,
        write_report(dir, "classifier_metrics.tsv", report.classifier_tsv().as_bytes())?,
        write_report(dir, "catalog_variants.tsv", report.catalog_variants_tsv().as_bytes())?,
    ];
    let ids: Vec<String> = report.scored.data.records.iter().map(|r| r.patient_id.clone()).collect();
    for (kind, gwas) in &report.gwas {
        let mut buf = Vec::new();
        write_sumstats(&gwas.results, &mut buf)?;
        paths.push(write_report(dir, &format!("sumstats_{kind}.tsv"), &buf)?);
    }
    for (kind, phenotype) in &report.scored.phenotypes {
        let mut buf = Vec::new();
        write_phenotype(phenotype, &ids, &mut buf)?;
        paths.push(write_report(dir, &format!("phenotype_{kind}.tsv"), &buf)?);
    }
    paths.push(write_config(dir, config)?);
    Ok(paths)
}
