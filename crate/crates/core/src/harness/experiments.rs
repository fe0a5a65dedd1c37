use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::index::sample;

use super::config::{ExperimentConfig, ModelKind};
use super::models::{train_model, PreparedCohort, TrainedModel};
use crate::anchor::{inject_label_noise, PhenotypeVector};
use crate::cohort::{generate_cohort, SyntheticCohort, N_PCS};
use crate::gwas::{match_catalog, run_gwas_with, GwasResult, ScanOptions, TruthCatalog};
use crate::metrics::{auroc, average_precision, MetricsReport};
use crate::util::{derive_seed, fmt_f64, mean, median, rng_for, std_dev};
use crate::{Error, Result};

/// Mean, sample standard deviation and median of one metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        Self { n: values.len(), mean: mean(values), sd: std_dev(values), median: median(values) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierRun {
    pub model: ModelKind,
    pub repeat: usize,
    pub seed: u64,
    pub test_auroc: f64,
    pub test_auprc: f64,
    pub validation_auprc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub runs: Vec<ClassifierRun>,
}

fn classifiers(config: &ExperimentConfig) -> Vec<ModelKind> {
    config.models.iter().copied().filter(|m| m.is_classifier()).collect()
}

fn evaluate_scores(scores: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    Ok((auroc(scores, labels)?, average_precision(scores, labels)?))
}

fn classifier_run(
    kind: ModelKind,
    data: &PreparedCohort,
    config: &ExperimentConfig,
    repeat: usize,
    seed: u64,
) -> Result<ClassifierRun> {
    let model = train_model(kind, data, &data.labels_in(&data.split.train), config, seed)?;
    let val = model.anchor_scores(&data.records_in(&data.split.validation))?;
    let test = model.anchor_scores(&data.records_in(&data.split.test))?;
    let (test_auroc, test_auprc) = evaluate_scores(&test, data.labels_in(&data.split.test).as_slice())?;
    let validation_auprc = average_precision(&val, data.labels_in(&data.split.validation).as_slice())?;
    Ok(ClassifierRun { model: kind, repeat, seed, test_auroc, test_auprc, validation_auprc })
}

fn repeat_cohort(config: &ExperimentConfig, repeat: usize) -> Result<(u64, PreparedCohort)> {
    let seed = config.repeat_seed(repeat);
    let cohort = generate_cohort(&config.cohort, seed)?;
    Ok((seed, PreparedCohort::new(cohort.records, config, seed)?))
}

/// Trains each anchor classifier on `repeats` seeded cohorts and evaluates it
/// on the held-out test split.
pub fn run_classifier_comparison(config: &ExperimentConfig) -> Result<ComparisonReport> {
    config.validate()?;
    let mut runs = Vec::new();
    for repeat in 0..config.repeats {
        let (seed, data) = repeat_cohort(config, repeat)?;
        for kind in classifiers(config) {
            runs.push(classifier_run(kind, &data, config, repeat, seed)?);
        }
    }
    Ok(ComparisonReport { config_hash: config.hash()?, runs })
}

impl ComparisonReport {
    pub fn summary(&self, model: ModelKind) -> [(&'static str, Summary); 3] {
        let pick = |f: fn(&ClassifierRun) -> f64| {
            Summary::of(&self.runs.iter().filter(|r| r.model == model).map(f).collect::<Vec<_>>())
        };
        [
            ("test_auroc", pick(|r| r.test_auroc)),
            ("test_auprc", pick(|r| r.test_auprc)),
            ("validation_auprc", pick(|r| r.validation_auprc)),
        ]
    }

    fn models(&self) -> Vec<ModelKind> {
        let mut seen = Vec::new();
        for r in &self.runs {
            if !seen.contains(&r.model) {
                seen.push(r.model);
            }
        }
        seen
    }

    pub fn runs_tsv(&self) -> String {
        let mut s = String::from("model\trepeat\tseed\ttest_auroc\ttest_auprc\tvalidation_auprc\tconfig_hash\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.model,
                r.repeat,
                r.seed,
                fmt_f64(r.test_auroc),
                fmt_f64(r.test_auprc),
                fmt_f64(r.validation_auprc),
                self.config_hash
            );
        }
        s
    }

    pub fn summary_tsv(&self, seed: u64) -> String {
        let mut s = String::from("model\tmetric\tmean\tsd\tmedian\tn\tseed\tconfig_hash\n");
        for m in self.models() {
            for (name, sm) in self.summary(m) {
                let _ = writeln!(
                    s,
                    "{m}\t{name}\t{}\t{}\t{}\t{}\t{seed}\t{}",
                    fmt_f64(sm.mean),
                    fmt_f64(sm.sd),
                    fmt_f64(sm.median),
                    sm.n,
                    self.config_hash
                );
            }
        }
        s
    }

    /// `<model>.<metric>.mean` / `.sd` entries.
    pub fn to_metrics(&self) -> MetricsReport {
        let mut report = MetricsReport::default();
        for m in self.models() {
            for (name, sm) in self.summary(m) {
                report.push(format!("{m}.{name}.mean"), sm.mean);
                report.push(format!("{m}.{name}.sd"), sm.sd);
            }
        }
        report
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRow {
    pub model: ModelKind,
    pub proportion: f64,
    pub repeat: usize,
    pub seed: u64,
    /// AUPRC against the uncorrupted validation labels.
    pub validation_auprc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSweepReport {
    pub config_hash: String,
    pub rows: Vec<NoiseRow>,
}

/// For each noise proportion, hides that share of training positives, retrains
/// and scores against the clean validation labels.
pub fn run_noise_sweep(config: &ExperimentConfig) -> Result<NoiseSweepReport> {
    config.validate()?;
    if !config.noise_proportions.contains(&0.0) {
        return Err(Error::InvalidConfig("noise proportions must include 0".into()));
    }
    let mut rows = Vec::new();
    for repeat in 0..config.repeats {
        let (seed, data) = repeat_cohort(config, repeat)?;
        let clean_train = data.labels_in(&data.split.train);
        let val_records = data.records_in(&data.split.validation);
        let val_labels = data.labels_in(&data.split.validation);
        for kind in classifiers(config) {
            for &proportion in &config.noise_proportions {
                let noisy = inject_label_noise(&clean_train, proportion, seed)?;
                let model = train_model(kind, &data, &noisy, config, seed)?;
                let validation_auprc = average_precision(&model.anchor_scores(&val_records)?, val_labels.as_slice())?;
                rows.push(NoiseRow { model: kind, proportion, repeat, seed, validation_auprc });
            }
        }
    }
    Ok(NoiseSweepReport { config_hash: config.hash()?, rows })
}

impl NoiseSweepReport {
    pub fn summary(&self, model: ModelKind, proportion: f64) -> Summary {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.model == model && r.proportion == proportion)
            .map(|r| r.validation_auprc)
            .collect();
        Summary::of(&v)
    }

    fn keys(&self) -> Vec<(ModelKind, f64)> {
        let mut keys: Vec<(ModelKind, f64)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.model, r.proportion)) {
                keys.push((r.model, r.proportion));
            }
        }
        keys
    }

    pub fn runs_tsv(&self) -> String {
        let mut s = String::from("model\tnoise_proportion\trepeat\tseed\tvalidation_auprc\tconfig_hash\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.model,
                r.proportion,
                r.repeat,
                r.seed,
                fmt_f64(r.validation_auprc),
                self.config_hash
            );
        }
        s
    }

    /// One row per (model, proportion).
    pub fn summary_tsv(&self, seed: u64) -> String {
        let mut s = String::from("model\tnoise_proportion\tmean\tsd\tmedian\tn\tseed\tconfig_hash\n");
        for (m, p) in self.keys() {
            let sm = self.summary(m, p);
            let _ = writeln!(
                s,
                "{m}\t{p}\t{}\t{}\t{}\t{}\t{seed}\t{}",
                fmt_f64(sm.mean),
                fmt_f64(sm.sd),
                fmt_f64(sm.median),
                sm.n,
                self.config_hash
            );
        }
        s
    }
}

/// Trained methods and their phenotypes over the whole cohort.
pub struct ScoredCohort {
    pub seed: u64,
    pub cohort: SyntheticCohort,
    pub data: PreparedCohort,
    pub models: Vec<TrainedModel>,
    pub phenotypes: Vec<(ModelKind, PhenotypeVector)>,
    /// Test-split AUROC and AUPRC for anchor classifiers.
    pub classifier_metrics: Vec<(ModelKind, f64, f64)>,
}

/// Trains every method in the roster and scores all patients.
pub fn score_cohort(cohort: SyntheticCohort, config: &ExperimentConfig, seed: u64) -> Result<ScoredCohort> {
    config.validate()?;
    let data = PreparedCohort::new(cohort.records.clone(), config, seed)?;
    let mut models = Vec::new();
    let mut phenotypes = Vec::new();
    let mut classifier_metrics = Vec::new();
    for &kind in &config.models {
        let model = train_model(kind, &data, &data.labels_in(&data.split.train), config, seed)?;
        if kind.is_classifier() {
            let test = model.anchor_scores(&data.records_in(&data.split.test))?;
            let (a, p) = evaluate_scores(&test, data.labels_in(&data.split.test).as_slice())?;
            classifier_metrics.push((kind, a, p));
        }
        phenotypes.push((kind, model.phenotype(&data.records, &data.labels, &data.anchor, config.label_frequency)?));
        models.push(model);
    }
    Ok(ScoredCohort { seed, cohort, data, models, phenotypes, classifier_metrics })
}

fn scan_options(config: &ExperimentConfig, variants: Option<Vec<usize>>) -> ScanOptions {
    ScanOptions { alpha: config.gwas.alpha, n_pcs: config.gwas.n_pcs, variants }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogRow {
    pub model: ModelKind,
    pub matched: usize,
    pub catalog_size: usize,
    pub proportion: f64,
    pub n_significant: usize,
    pub n_flagged: usize,
}

pub struct PipelineReport {
    pub seed: u64,
    pub config_hash: String,
    pub scored: ScoredCohort,
    pub catalog: TruthCatalog,
    pub gwas: Vec<(ModelKind, GwasResult)>,
    pub rows: Vec<CatalogRow>,
}

/// Generates a cohort, trains and scores every method, runs a GWAS per
/// phenotype and matches the significant variants against the planted catalog.
pub fn run_full_pipeline(config: &ExperimentConfig) -> Result<PipelineReport> {
    config.validate()?;
    let cohort = generate_cohort(&config.cohort, config.seed)?;
    run_pipeline_on(cohort, config, config.seed)
}

pub fn run_pipeline_on(cohort: SyntheticCohort, config: &ExperimentConfig, seed: u64) -> Result<PipelineReport> {
    let scored = score_cohort(cohort, config, seed)?;
    let genotypes = &scored.cohort.genotypes;
    let catalog = TruthCatalog::from_planted(genotypes, config.gwas.r2_threshold);
    let mut gwas = Vec::new();
    let mut rows = Vec::new();
    for (kind, phenotype) in &scored.phenotypes {
        let result = run_gwas_with(phenotype, genotypes, &scored.cohort.covariates, &scan_options(config, None))?;
        let m = match_catalog(&result.significant, &catalog, genotypes, config.gwas.r2_threshold);
        rows.push(CatalogRow {
            model: *kind,
            matched: m.matched,
            catalog_size: m.catalog_size,
            proportion: m.proportion,
            n_significant: result.significant.len(),
            n_flagged: result.flagged_count(),
        });
        gwas.push((*kind, result));
    }
    Ok(PipelineReport { seed, config_hash: config.hash()?, scored, catalog, gwas, rows })
}

impl PipelineReport {
    pub fn row(&self, model: ModelKind) -> Option<&CatalogRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn catalog_tsv(&self) -> String {
        let mut s = String::from("model\tmatched\tcatalog_size\tproportion\tn_significant\tn_flagged\tseed\tconfig_hash\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.model,
                r.matched,
                r.catalog_size,
                fmt_f64(r.proportion),
                r.n_significant,
                r.n_flagged,
                self.seed,
                self.config_hash
            );
        }
        s
    }

    pub fn classifier_tsv(&self) -> String {
        let mut s = String::from("model\ttest_auroc\ttest_auprc\tseed\tconfig_hash\n");
        for (m, a, p) in &self.scored.classifier_metrics {
            let _ = writeln!(s, "{m}\t{}\t{}\t{}\t{}", fmt_f64(*a), fmt_f64(*p), self.seed, self.config_hash);
        }
        s
    }

    pub fn catalog_variants_tsv(&self) -> String {
        let mut s = String::from("variant_id\tcausal\n");
        let g = &self.scored.cohort.genotypes;
        let causal = g.causal_variants();
        for &v in &self.catalog.variants {
            let _ = writeln!(s, "{}\t{}", g.variants[v].id, causal.contains(&v) as u8);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationRegime {
    /// Random patients, cases and controls alike.
    Joint,
    /// Threshold-1 cases only.
    Cases,
}

impl AblationRegime {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationRegime::Joint => "joint",
            AblationRegime::Cases => "cases",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub regime: AblationRegime,
    pub model: ModelKind,
    pub proportion: f64,
    pub repeat: usize,
    pub n_patients: usize,
    pub matched: usize,
    pub retention: f64,
}

pub struct AblationReport {
    pub seed: u64,
    pub config_hash: String,
    /// Union of full-data significant variants over all methods.
    pub panel: BTreeSet<usize>,
    pub full_data: Vec<(ModelKind, f64)>,
    pub rows: Vec<AblationRow>,
}

/// Generates and scores one cohort, then removes patients after scoring and
/// re-tests the full-data significant panel on the survivors.
pub fn run_ablation(config: &ExperimentConfig) -> Result<AblationReport> {
    config.validate()?;
    let cohort = generate_cohort(&config.cohort, config.seed)?;
    run_ablation_on(cohort, config, config.seed)
}

pub fn run_ablation_on(cohort: SyntheticCohort, config: &ExperimentConfig, seed: u64) -> Result<AblationReport> {
    let pipeline = run_pipeline_on(cohort, config, seed)?;
    let scored = &pipeline.scored;
    let genotypes = &scored.cohort.genotypes;
    let r2 = config.gwas.r2_threshold;
    let panel: BTreeSet<usize> = pipeline.gwas.iter().flat_map(|(_, g)| g.significant.iter().copied()).collect();
    let panel_vec: Vec<usize> = panel.iter().copied().collect();
    let full_data = pipeline.rows.iter().map(|r| (r.model, r.proportion)).collect();
    let n = genotypes.n_patients();
    // Sex, age and PCs, plus intercept, genotype and one residual degree of freedom.
    let min_patients = 2 + config.gwas.n_pcs.min(N_PCS) + 3;
    let threshold_cases: Vec<usize> = (0..n).filter(|&i| scored.data.labels.0[i] == 1).collect();

    let mut rows = Vec::new();
    for (ri, regime) in [AblationRegime::Joint, AblationRegime::Cases].into_iter().enumerate() {
        let pool: Vec<usize> = match regime {
            AblationRegime::Joint => (0..n).collect(),
            AblationRegime::Cases => threshold_cases.clone(),
        };
        for (pi, &proportion) in config.ablation_proportions.iter().enumerate() {
            let remove_count = ((proportion * pool.len() as f64) + 1e-9).floor() as usize;
            for repeat in 0..config.ablation_repeats {
                let tag = ((ri as u64) << 40) | ((pi as u64) << 20) | repeat as u64;
                let mut rng = rng_for(derive_seed(seed, tag), 0);
                let removed: BTreeSet<usize> =
                    sample(&mut rng, pool.len(), remove_count).into_iter().map(|k| pool[k]).collect();
                let survivors: Vec<usize> = (0..n).filter(|i| !removed.contains(i)).collect();
                let sub_g = genotypes.select_patients(&survivors);
                let sub_c = scored.cohort.covariates.select_patients(&survivors);
                let sub_catalog = &pipeline.catalog;
                for (kind, phenotype) in &scored.phenotypes {
                    let (matched, retention) = if survivors.len() < min_patients || panel_vec.is_empty() {
                        // Nothing can be detected on an empty panel or a cohort too small to fit.
                        (0, 0.0)
                    } else {
                        let res = run_gwas_with(
                            &phenotype.select(&survivors),
                            &sub_g,
                            &sub_c,
                            &scan_options(config, Some(panel_vec.clone())),
                        )?;
                        // LD is measured on the full genotype matrix so the catalog stays fixed.
                        let m = match_catalog(&res.significant, sub_catalog, genotypes, r2);
                        (m.matched, m.proportion)
                    };
                    rows.push(AblationRow {
                        regime,
                        model: *kind,
                        proportion,
                        repeat,
                        n_patients: survivors.len(),
                        matched,
                        retention,
                    });
                }
            }
        }
    }
    Ok(AblationReport { seed, config_hash: pipeline.config_hash, panel, full_data, rows })
}

impl AblationReport {
    pub fn summary(&self, regime: AblationRegime, model: ModelKind, proportion: f64) -> Summary {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.regime == regime && r.model == model && r.proportion == proportion)
            .map(|r| r.retention)
            .collect();
        Summary::of(&v)
    }

    pub fn runs_tsv(&self) -> String {
        let mut s = String::from("regime\tmodel\tproportion\trepeat\tn_patients\tmatched\tretention\tseed\tconfig_hash\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.regime.as_str(),
                r.model,
                r.proportion,
                r.repeat,
                r.n_patients,
                r.matched,
                fmt_f64(r.retention),
                self.seed,
                self.config_hash
            );
        }
        s
    }

    pub fn summary_tsv(&self) -> String {
        let mut keys: Vec<(AblationRegime, ModelKind, f64)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.regime, r.model, r.proportion)) {
                keys.push((r.regime, r.model, r.proportion));
            }
        }
        let mut s = String::from("regime\tmodel\tproportion\tmean_retention\tsd_retention\tn\tseed\tconfig_hash\n");
        for (regime, m, p) in keys {
            let sm = self.summary(regime, m, p);
            let _ = writeln!(
                s,
                "{}\t{m}\t{p}\t{}\t{}\t{}\t{}\t{}",
                regime.as_str(),
                fmt_f64(sm.mean),
                fmt_f64(sm.sd),
                sm.n,
                self.seed,
                self.config_hash
            );
        }
        s
    }
}
