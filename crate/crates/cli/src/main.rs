//! Command-line front end for synthetic cohorts, anchor phenotyping, GWAS and
//! the three experiment drivers.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anchorpheno::anchor::{label_anchor, load_phenotype, write_phenotype};
use anchorpheno::cohort::io::{
    load_cohort, load_covariates, load_genotypes, save_cohort, save_covariates, save_genotypes, save_truth,
};
use anchorpheno::cohort::generate_cohort;
use anchorpheno::gwas::{match_catalog, run_gwas_with, write_sumstats, ScanOptions, TruthCatalog};
use anchorpheno::harness::{
    load_model, run_ablation, run_classifier_comparison, run_full_pipeline, run_noise_sweep, save_model, train_model,
    write_ablation, write_comparison, write_noise_sweep, write_pipeline, write_report, ExperimentConfig, ModelKind,
    PreparedCohort, TrainedModel,
};
use anchorpheno::metrics::{auroc, average_precision};
use anchorpheno::{Error, Result};
use clap::{Args, Parser, Subcommand};

const COHORT_FILE: &str = "cohort.tsv";
const GENOTYPE_FILE: &str = "genotypes.tsv";
const VARIANT_FILE: &str = "variants.tsv";
const COVARIATE_FILE: &str = "covariates.tsv";
const TRUTH_FILE: &str = "truth.tsv";

#[derive(Parser)]
#[command(name = "anchorpheno", version, about = "Anchor-variable phenotyping and GWAS power on synthetic cohorts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Restrict the roster to one method.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Significance threshold for association tests.
    #[arg(long)]
    alpha: Option<f64>,
    /// LD r² threshold for catalog expansion.
    #[arg(long)]
    r2: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort.
    Synth(Common),
    /// Fit one method on a cohort directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `synth`.
        #[arg(long)]
        cohort: PathBuf,
    },
    /// Write a phenotype file for every patient in a cohort.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cohort: PathBuf,
        /// Model written by `train`; methods without parameters can be scored directly.
        #[arg(long)]
        model_file: Option<PathBuf>,
    },
    /// Association scan of a phenotype file against a cohort's genotypes.
    Gwas {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        phenotype: PathBuf,
    },
    /// Classifier comparison over repeated seeded cohorts.
    Compare(Common),
    /// Validation AUPRC as training positives are hidden.
    NoiseSweep(Common),
    /// Retention of catalog associations as patients are removed.
    Ablate(Common),
    /// Cohort to catalog comparison in one run.
    Pipeline(Common),
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(alpha) = self.alpha {
            config.gwas.alpha = alpha;
        }
        if let Some(r2) = self.r2 {
            config.gwas.r2_threshold = r2;
        }
        if let Some(model) = self.model {
            config.models = vec![model];
        }
        config.validate()?;
        Ok(config)
    }

    fn single_model(&self, config: &ExperimentConfig) -> Result<ModelKind> {
        match (self.model, config.models.as_slice()) {
            (Some(m), _) => Ok(m),
            (None, [only]) => Ok(*only),
            _ => Err(Error::InvalidArgument("--model is required".into())),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(paths) => {
            println!("output");
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let message = e.to_string().replace(['\t', '\n'], " ");
            eprintln!("error\t{}\t{message}", e.kind());
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<Vec<PathBuf>> {
    match command {
        Command::Synth(common) => synth(&common),
        Command::Train { common, cohort } => train(&common, &cohort),
        Command::Score { common, cohort, model_file } => score(&common, &cohort, model_file.as_deref()),
        Command::Gwas { common, cohort, phenotype } => gwas(&common, &cohort, &phenotype),
        Command::Compare(common) => {
            let config = common.config()?;
            write_comparison(&run_classifier_comparison(&config)?, &config, &common.out_dir)
        }
        Command::NoiseSweep(common) => {
            let config = common.config()?;
            write_noise_sweep(&run_noise_sweep(&config)?, &config, &common.out_dir)
        }
        Command::Ablate(common) => {
            let config = common.config()?;
            write_ablation(&run_ablation(&config)?, &config, &common.out_dir)
        }
        Command::Pipeline(common) => {
            let config = common.config()?;
            write_pipeline(&run_full_pipeline(&config)?, &config, &common.out_dir)
        }
    }
}

fn synth(common: &Common) -> Result<Vec<PathBuf>> {
    let config = common.config()?;
    let cohort = generate_cohort(&config.cohort, config.seed)?;
    let dir = &common.out_dir;
    fs::create_dir_all(dir)?;
    let ids: Vec<String> = cohort.records.iter().map(|r| r.patient_id.clone()).collect();
    let paths = [COHORT_FILE, GENOTYPE_FILE, VARIANT_FILE, COVARIATE_FILE, TRUTH_FILE].map(|f| dir.join(f));
    save_cohort(&cohort.records, &paths[0])?;
    save_genotypes(&cohort.genotypes, &ids, &paths[1], &paths[2])?;
    save_covariates(&cohort.covariates, &paths[3])?;
    save_truth(&cohort.truth, &paths[4])?;
    let mut paths = paths.to_vec();
    paths.push(write_report(dir, "config.toml", config.to_toml()?.as_bytes())?);
    Ok(paths)
}

fn prepared(config: &ExperimentConfig, cohort: &Path) -> Result<PreparedCohort> {
    PreparedCohort::new(load_cohort(&cohort.join(COHORT_FILE))?, config, config.seed)
}

fn train(common: &Common, cohort: &Path) -> Result<Vec<PathBuf>> {
    let config = common.config()?;
    let kind = common.single_model(&config)?;
    let data = prepared(&config, cohort)?;
    let model = train_model(kind, &data, &data.labels_in(&data.split.train), &config, config.seed)?;
    fs::create_dir_all(&common.out_dir)?;
    let model_path = common.out_dir.join(format!("model_{kind}.json"));
    save_model(&model, &model_path)?;
    let mut paths = vec![model_path];
    if kind.is_classifier() {
        let mut tsv = String::from("model\tsplit\tauroc\tauprc\tseed\tconfig_hash\n");
        for (name, idx) in [("validation", &data.split.validation), ("test", &data.split.test)] {
            let scores = model.anchor_scores(&data.records_in(idx))?;
            let labels = data.labels_in(idx);
            tsv.push_str(&format!(
                "{kind}\t{name}\t{}\t{}\t{}\t{}\n",
                auroc(&scores, labels.as_slice())?,
                average_precision(&scores, labels.as_slice())?,
                config.seed,
                config.hash()?
            ));
        }
        paths.push(write_report(&common.out_dir, &format!("train_metrics_{kind}.tsv"), tsv.as_bytes())?);
    }
    Ok(paths)
}

fn score(common: &Common, cohort: &Path, model_file: Option<&Path>) -> Result<Vec<PathBuf>> {
    let config = common.config()?;
    let data = prepared(&config, cohort)?;
    let model = match model_file {
        Some(path) => load_model(path)?,
        None => {
            let kind = common.single_model(&config)?;
            if kind.is_classifier() {
                return Err(Error::InvalidArgument(format!("{kind} needs --model-file from `train`")));
            }
            train_model(kind, &data, &data.labels_in(&data.split.train), &config, config.seed)?
        }
    };
    let labels = label_anchor(&data.records, &data.anchor);
    let phenotype = model.phenotype(&data.records, &labels, &data.anchor, config.label_frequency)?;
    let ids: Vec<String> = data.records.iter().map(|r| r.patient_id.clone()).collect();
    let mut buf = Vec::new();
    write_phenotype(&phenotype, &ids, &mut buf)?;
    Ok(vec![write_report(&common.out_dir, &format!("phenotype_{}.tsv", TrainedModel::kind(&model)), &buf)?])
}

fn gwas(common: &Common, cohort: &Path, phenotype_path: &Path) -> Result<Vec<PathBuf>> {
    let config = common.config()?;
    let (geno_ids, genotypes) = load_genotypes(&cohort.join(GENOTYPE_FILE), &cohort.join(VARIANT_FILE))?;
    let covariates = load_covariates(&cohort.join(COVARIATE_FILE))?;
    let (pheno_ids, phenotype) = load_phenotype(phenotype_path)?;
    if pheno_ids != geno_ids {
        return Err(Error::Misaligned("phenotype and genotype patient ids differ".into()));
    }
    let options = ScanOptions { alpha: config.gwas.alpha, n_pcs: config.gwas.n_pcs, variants: None };
    let result = run_gwas_with(&phenotype, &genotypes, &covariates, &options)?;
    let mut buf = Vec::new();
    write_sumstats(&result.results, &mut buf)?;
    let mut paths = vec![write_report(&common.out_dir, "sumstats.tsv", &buf)?];
    let catalog = TruthCatalog::from_planted(&genotypes, config.gwas.r2_threshold);
    if !catalog.variants.is_empty() {
        let m = match_catalog(&result.significant, &catalog, &genotypes, config.gwas.r2_threshold);
        let tsv = format!(
            "matched\tcatalog_size\tproportion\tn_significant\talpha\tr2\n{}\t{}\t{}\t{}\t{}\t{}\n",
            m.matched,
            m.catalog_size,
            m.proportion,
            result.significant.len(),
            config.gwas.alpha,
            config.gwas.r2_threshold
        );
        paths.push(write_report(&common.out_dir, "catalog_match.tsv", tsv.as_bytes())?);
    }
    Ok(paths)
}
