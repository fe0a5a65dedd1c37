//! End-to-end experiments: classifier comparison, noise sweep, case ablation
//! and the full phenotype-to-catalog pipeline.

mod config;
mod experiments;
mod models;
mod output;

pub use config::{ExperimentConfig, GwasSettings, ModelKind, PheprobConfig, SplitConfig};
pub use experiments::{
    run_ablation, run_ablation_on, run_classifier_comparison, run_full_pipeline, run_noise_sweep, run_pipeline_on,
    score_cohort, AblationRegime, AblationReport, AblationRow, CatalogRow, ClassifierRun, ComparisonReport, NoiseRow,
    NoiseSweepReport, PipelineReport, ScoredCohort, Summary,
};
pub use models::{load_model, save_model, split_patients, train_model, PreparedCohort, Split, TrainedModel};
pub use output::{write_ablation, write_comparison, write_noise_sweep, write_pipeline, write_report};
