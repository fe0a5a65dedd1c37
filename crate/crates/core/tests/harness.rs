use std::path::Path;

use anchorpheno::anchor::{AnchorLabel, AnchorSpec};
use anchorpheno::classifiers::{
    train_logistic, train_transformer, CountFeatures, LogisticModel, TrainedTransformer, TransformerConfig,
};
use anchorpheno::cohort::{PatientRecord, Vocabulary};
use anchorpheno::harness::{
    load_model, run_ablation, run_classifier_comparison, run_full_pipeline, run_noise_sweep, save_model, split_patients,
    train_model, write_pipeline, AblationRegime, ExperimentConfig, ModelKind, PreparedCohort, SplitConfig, TrainedModel,
};
use anchorpheno::metrics::MetricsReport;
use anchorpheno::pheprob::{fit_binomial_mixture, BinomialMixtureParams};
use anchorpheno::Result;

/// Fast settings: small cohort, short transformer training.
fn quick() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.cohort.n_patients = 900;
    c.cohort.n_variants = 40;
    c.cohort.causal_variants.retain(|v| v.index < 40);
    c.transformer = TransformerConfig { n_epochs: 2, d_model: 16, intermediate_size: 32, n_heads: 2, ..c.transformer };
    c.repeats = 2;
    c.ablation_repeats = 2;
    c
}

#[test]
fn bundled_default_config_matches_code_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    assert_eq!(ExperimentConfig::load(&path).unwrap(), ExperimentConfig::default());
}

#[test]
fn config_round_trips_and_validates() {
    let c = quick();
    assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    assert_eq!(c.hash().unwrap(), quick().hash().unwrap());
    let mut other = quick();
    other.seed += 1;
    assert_ne!(c.hash().unwrap(), other.hash().unwrap());

    let bad = |f: fn(&mut ExperimentConfig)| {
        let mut c = quick();
        f(&mut c);
        c.validate().is_err()
    };
    assert!(bad(|c| c.split = SplitConfig { train: 0.5, validation: 0.2, test: 0.2 }));
    assert!(bad(|c| c.noise_proportions.push(1.5)));
    assert!(bad(|c| c.ablation_proportions.push(-0.1)));
    assert!(bad(|c| c.repeats = 0));
    assert!(ExperimentConfig::from_toml("no_such_field = 3").is_err());
}

#[test]
fn model_kinds_parse_and_print() {
    for s in ["anchorbert", "anchor-lr", "pheprob", "threshold-1", "threshold-3"] {
        assert_eq!(s.parse::<ModelKind>().unwrap().to_string(), s);
    }
    for s in ["threshold-0", "threshold-", "bert", ""] {
        assert!(s.parse::<ModelKind>().is_err(), "{s}");
    }
}

#[test]
fn split_is_a_seeded_partition() {
    let s = split_patients(101, &SplitConfig::default(), 4).unwrap();
    let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..101).collect::<Vec<_>>());
    assert_eq!((s.train.len(), s.validation.len()), (61, 20));
    assert_eq!(s, split_patients(101, &SplitConfig::default(), 4).unwrap());
    assert_ne!(s, split_patients(101, &SplitConfig::default(), 5).unwrap());
}

#[test]
fn noise_sweep_at_zero_reproduces_the_comparison() {
    let mut c = quick();
    c.models = vec![ModelKind::AnchorLr, ModelKind::AnchorBert];
    c.noise_proportions = vec![0.0, 0.8];
    let comparison = run_classifier_comparison(&c).unwrap();
    let sweep = run_noise_sweep(&c).unwrap();
    assert_eq!(sweep.rows.len(), c.repeats * c.models.len() * c.noise_proportions.len());
    for run in &comparison.runs {
        let row = sweep
            .rows
            .iter()
            .find(|r| r.model == run.model && r.repeat == run.repeat && r.proportion == 0.0)
            .unwrap();
        assert_eq!(row.validation_auprc, run.validation_auprc);
    }
    let summary = sweep.summary_tsv(c.seed);
    assert_eq!(summary.lines().count(), 1 + c.models.len() * c.noise_proportions.len());

    // Rows carry the seed and config hash.
    let hash = c.hash().unwrap();
    assert!(comparison.runs_tsv().lines().skip(1).all(|l| l.ends_with(&hash)));
    assert!(sweep.runs_tsv().lines().skip(1).all(|l| l.ends_with(&hash)));

    // The summary survives the metrics file format.
    let metrics = comparison.to_metrics();
    let mut buf = Vec::new();
    metrics.write(&mut buf).unwrap();
    assert_eq!(MetricsReport::parse(buf.as_slice()).unwrap(), metrics);
    assert!(metrics.get("anchor-lr.test_auroc.mean").is_some());

    c.noise_proportions = vec![0.2];
    assert!(run_noise_sweep(&c).is_err());
}

#[test]
fn zero_signal_cohort_gives_chance_auroc() {
    let mut c = quick();
    c.cohort.comorbidities.clear();
    c.cohort.n_patients = 2000;
    c.repeats = 3;
    c.models = vec![ModelKind::AnchorLr, ModelKind::AnchorBert];
    let report = run_classifier_comparison(&c).unwrap();
    for m in &c.models {
        let auroc = report.summary(*m)[0].1.mean;
        assert!((0.45..=0.55).contains(&auroc), "{m}: {auroc}");
    }
}

#[test]
fn ablation_at_zero_keeps_full_data_retention() {
    let mut c = quick();
    c.cohort.n_patients = 1500;
    c.models = vec![ModelKind::AnchorLr, ModelKind::Pheprob, ModelKind::Threshold(1)];
    c.gwas.alpha = 1e-4;
    c.ablation_proportions = vec![0.0, 0.5, 1.0];
    let report = run_ablation(&c).unwrap();
    assert!(!report.panel.is_empty());
    for regime in [AblationRegime::Joint, AblationRegime::Cases] {
        for (m, full) in &report.full_data {
            let s = report.summary(regime, *m, 0.0);
            assert_eq!((s.mean, s.sd), (*full, 0.0), "{m}");
        }
    }
    // Nobody is left to test once every patient is removed.
    assert_eq!(report.summary(AblationRegime::Joint, ModelKind::AnchorLr, 1.0).mean, 0.0);
    assert_eq!(report.summary(AblationRegime::Cases, ModelKind::Threshold(1), 1.0).mean, 0.0);
    let rows = c.models.len() * c.ablation_proportions.len() * c.ablation_repeats * 2;
    assert_eq!(report.rows.len(), rows);
    assert_eq!(report.runs_tsv().lines().count(), rows + 1);
}

#[test]
fn pipeline_writes_every_report() {
    let mut c = quick();
    c.models = vec![ModelKind::AnchorLr, ModelKind::Pheprob, ModelKind::Threshold(2)];
    let report = run_full_pipeline(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_pipeline(&report, &c, dir.path()).unwrap();
    for name in [
        "catalog_comparison.tsv",
        "classifier_metrics.tsv",
        "catalog_variants.tsv",
        "sumstats_anchor-lr.tsv",
        "sumstats_pheprob.tsv",
        "sumstats_threshold-2.tsv",
        "phenotype_anchor-lr.tsv",
        "phenotype_threshold-2.tsv",
        "config.toml",
    ] {
        assert!(paths.contains(&dir.path().join(name)), "{name}");
    }
    let table = std::fs::read_to_string(dir.path().join("catalog_comparison.tsv")).unwrap();
    assert_eq!(table.lines().count(), 1 + c.models.len());
    // No temporary files left behind.
    assert!(std::fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn saved_models_score_identically() {
    let c = quick();
    let cohort = anchorpheno::cohort::generate_cohort(&c.cohort, 3).unwrap();
    let data = PreparedCohort::new(cohort.records, &c, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for kind in [ModelKind::AnchorBert, ModelKind::AnchorLr, ModelKind::Pheprob, ModelKind::Threshold(2)] {
        let model = train_model(kind, &data, &data.labels_in(&data.split.train), &c, 3).unwrap();
        let path = dir.path().join(format!("{kind}.json"));
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.kind(), kind);
        let a = model.phenotype(&data.records, &data.labels, &data.anchor, 1.0).unwrap();
        let b = back.phenotype(&data.records, &data.labels, &data.anchor, 1.0).unwrap();
        assert_eq!(a, b, "{kind}");
    }
}

/// Training and scoring entry points, pinned to their signatures: none accepts
/// the generator's ground truth, so it can only reach evaluation code.
#[test]
fn training_entry_points_take_no_truth() {
    let _: fn(&CountFeatures, &AnchorLabel, f64, f64, usize) -> Result<LogisticModel> = train_logistic;
    let _: fn(
        &[PatientRecord],
        &AnchorLabel,
        &[PatientRecord],
        &AnchorLabel,
        &Vocabulary,
        &AnchorSpec,
        &TransformerConfig,
    ) -> Result<TrainedTransformer> = train_transformer;
    let _: fn(&[u32], &[u32], f64, usize, u64) -> Result<BinomialMixtureParams> = fit_binomial_mixture;
    let _: fn(ModelKind, &PreparedCohort, &AnchorLabel, &ExperimentConfig, u64) -> Result<TrainedModel> = train_model;
    let _: fn(Vec<PatientRecord>, &ExperimentConfig, u64) -> Result<PreparedCohort> = PreparedCohort::new;
}
