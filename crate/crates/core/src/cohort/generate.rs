use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    CohortTruth, CovariateRow, CovariateTable, GenotypeMatrix, PatientRecord, VariantInfo, Visit,
    MIN_CODES_PER_PATIENT, N_PCS,
};
use crate::util::{rng_for, sigmoid};
use crate::{Error, Result};

const STREAM_GENOTYPES: u64 = 1;
const STREAM_COVARIATES: u64 = 2;
const STREAM_LIABILITY: u64 = 3;
const STREAM_RECORDS: u64 = 4;
const STREAM_ANCHORS: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CausalVariant {
    pub index: usize,
    pub beta: f64,
    /// Overrides the randomly drawn MAF of the variant's LD block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComorbidityCode {
    pub code: String,
    /// Per-visit probability of the code for a control.
    pub base_rate: f64,
    /// Log-odds added to `base_rate` for a case.
    pub log_odds: f64,
}

/// Two codes whose exclusive-or marks a case: cases carry exactly one of the
/// pair, controls carry neither or both. At the default `control_pair_rate` of
/// 0.5 neither code is marginally informative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionConfig {
    pub code_a: String,
    pub code_b: String,
    /// Probability that a control carries both codes rather than neither.
    #[serde(default = "half")]
    pub control_pair_rate: f64,
}

fn half() -> f64 {
    0.5
}

impl InteractionConfig {
    pub fn new(code_a: impl Into<String>, code_b: impl Into<String>) -> Self {
        Self { code_a: code_a.into(), code_b: code_b.into(), control_pair_rate: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub n_variants: usize,
    pub maf_min: f64,
    pub maf_max: f64,
    pub ld_block_size: usize,
    /// Probability that a block member's dosage is redrawn instead of copied from the block seed.
    pub ld_mutation_prob: f64,
    pub causal_variants: Vec<CausalVariant>,
    pub beta_sex: f64,
    pub beta_age: f64,
    pub prevalence: f64,
    pub comorbidities: Vec<ComorbidityCode>,
    pub n_background_codes: usize,
    pub background_min_per_visit: usize,
    pub background_max_per_visit: usize,
    pub background_zipf_exponent: f64,
    pub anchor_codes: Vec<String>,
    /// Probability that a case carries the anchor code.
    pub anchor_sensitivity: f64,
    pub anchor_false_positive_rate: f64,
    /// Per-visit probability of the anchor recurring after its first occurrence.
    pub anchor_repeat_prob: f64,
    pub min_visits: usize,
    pub max_visits: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionConfig>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let comorbidity = |code: &str, base_rate, log_odds| ComorbidityCode {
            code: code.to_string(),
            base_rate,
            log_odds,
        };
        Self {
            n_patients: 5000,
            n_variants: 200,
            maf_min: 0.05,
            maf_max: 0.5,
            ld_block_size: 5,
            ld_mutation_prob: 0.1,
            causal_variants: vec![
                CausalVariant { index: 10, beta: 0.6, maf: Some(0.3) },
                CausalVariant { index: 75, beta: 0.6, maf: Some(0.3) },
                CausalVariant { index: 140, beta: 0.6, maf: Some(0.3) },
            ],
            beta_sex: 0.3,
            beta_age: 0.3,
            prevalence: 0.2,
            comorbidities: vec![
                comorbidity("401.1", 0.10, 2.0),
                comorbidity("272.1", 0.08, 2.0),
                comorbidity("414.0", 0.04, 2.5),
                comorbidity("427.2", 0.03, 2.0),
                comorbidity("250.2", 0.05, 1.5),
                comorbidity("278.1", 0.05, 1.0),
            ],
            n_background_codes: 150,
            background_min_per_visit: 1,
            background_max_per_visit: 3,
            background_zipf_exponent: 1.0,
            anchor_codes: vec!["411.1".to_string()],
            anchor_sensitivity: 0.7,
            anchor_false_positive_rate: 0.0,
            anchor_repeat_prob: 0.4,
            min_visits: 2,
            max_visits: 8,
            interaction: None,
        }
    }
}

fn check_code(code: &str) -> Result<()> {
    if code.is_empty() || code.contains(['\t', ',', '\n', '\r']) {
        return Err(Error::InvalidConfig(format!("invalid code string {code:?}")));
    }
    Ok(())
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 10 {
            return Err(Error::InvalidConfig(format!(
                "n_patients = {} is below the minimum of 10",
                self.n_patients
            )));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "prevalence = {} must lie in (0, 1)",
                self.prevalence
            )));
        }
        if !(self.anchor_sensitivity > 0.0 && self.anchor_sensitivity <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "anchor_sensitivity = {} must lie in (0, 1]; at 0 no patient is ever labelled",
                self.anchor_sensitivity
            )));
        }
        check_prob("anchor_false_positive_rate", self.anchor_false_positive_rate)?;
        check_prob("anchor_repeat_prob", self.anchor_repeat_prob)?;
        check_prob("ld_mutation_prob", self.ld_mutation_prob)?;
        if !(self.maf_min > 0.0 && self.maf_min <= self.maf_max && self.maf_max <= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "MAF range [{}, {}] must satisfy 0 < min <= max <= 0.5",
                self.maf_min, self.maf_max
            )));
        }
        if self.ld_block_size == 0 {
            return Err(Error::InvalidConfig("ld_block_size must be >= 1".into()));
        }
        if self.min_visits == 0 || self.min_visits > self.max_visits {
            return Err(Error::InvalidConfig(format!(
                "visit range [{}, {}] is invalid",
                self.min_visits, self.max_visits
            )));
        }
        if self.n_background_codes == 0
            || self.background_min_per_visit == 0
            || self.background_min_per_visit > self.background_max_per_visit
        {
            return Err(Error::InvalidConfig(
                "background codes: need at least one code and 1 <= min <= max per visit".into(),
            ));
        }
        if self.anchor_codes.is_empty() {
            return Err(Error::InvalidConfig("at least one anchor code is required".into()));
        }
        let mut names = BTreeSet::new();
        let generated = self
            .anchor_codes
            .iter()
            .chain(self.comorbidities.iter().map(|c| &c.code))
            .chain(
                self.interaction
                    .iter()
                    .flat_map(|i| [&i.code_a, &i.code_b]),
            );
        for code in generated {
            check_code(code)?;
            if background_code_index(code)
                .is_some_and(|i| i < self.n_background_codes && background_code(i) == *code)
                || !names.insert(code.as_str())
            {
                return Err(Error::InvalidConfig(format!("code `{code}` is used twice")));
            }
        }
        if let Some(inter) = &self.interaction {
            check_prob("control_pair_rate", inter.control_pair_rate)?;
        }
        for c in &self.comorbidities {
            check_prob("comorbidity base_rate", c.base_rate)?;
            if !c.log_odds.is_finite() {
                return Err(Error::InvalidConfig(format!("log_odds of `{}` is not finite", c.code)));
            }
        }
        for cv in &self.causal_variants {
            if cv.index >= self.n_variants {
                return Err(Error::InvalidConfig(format!(
                    "causal variant index {} is out of range ({} variants)",
                    cv.index, self.n_variants
                )));
            }
            if let Some(maf) = cv.maf {
                if !(maf > 0.0 && maf <= 0.5) {
                    return Err(Error::InvalidConfig(format!("causal MAF {maf} is out of range")));
                }
            }
        }
        Ok(())
    }
}

fn background_code(i: usize) -> String {
    format!("B{i:03}")
}

fn background_code_index(code: &str) -> Option<usize> {
    code.strip_prefix('B')?.parse().ok()
}

pub fn variant_id(i: usize) -> String {
    format!("v{:05}", i + 1)
}

pub fn patient_id(i: usize) -> String {
    format!("P{:06}", i + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub records: Vec<PatientRecord>,
    pub truth: CohortTruth,
    pub genotypes: GenotypeMatrix,
    pub covariates: CovariateTable,
}

pub fn generate_cohort(config: &GeneratorConfig, seed: u64) -> Result<SyntheticCohort> {
    config.validate()?;
    let n = config.n_patients;
    let genotypes = generate_genotypes(config, seed)?;
    let covariates = generate_covariates(n, seed);
    let liability = liabilities(config, &genotypes, &covariates, seed);

    let n_cases = ((config.prevalence * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| liability[b].total_cmp(&liability[a]).then(a.cmp(&b)));
    let mut y = vec![0u8; n];
    for &i in &order[..n_cases] {
        y[i] = 1;
    }

    let records = generate_records(config, &y, seed)?;
    let patient_ids: Vec<String> = (0..n).map(patient_id).collect();
    Ok(SyntheticCohort {
        records,
        truth: CohortTruth {
            patient_ids: patient_ids.clone(),
            y,
            liability,
            config: config.clone(),
        },
        genotypes,
        covariates: CovariateTable {
            patient_ids,
            rows: covariates,
        },
    })
}

fn draw_dosage<R: Rng>(rng: &mut R, maf: f64) -> u8 {
    rng.random_bool(maf) as u8 + rng.random_bool(maf) as u8
}

fn generate_genotypes(config: &GeneratorConfig, seed: u64) -> Result<GenotypeMatrix> {
    let n = config.n_patients;
    let mut rng = rng_for(seed, STREAM_GENOTYPES);
    let mut columns = Vec::with_capacity(config.n_variants);
    let mut variants = Vec::with_capacity(config.n_variants);
    let mut block_seed: Vec<u8> = Vec::new();
    let mut block_maf = 0.0;
    for v in 0..config.n_variants {
        let block = v / config.ld_block_size;
        let is_block_seed = v % config.ld_block_size == 0;
        if is_block_seed {
            let block_end = ((block + 1) * config.ld_block_size).min(config.n_variants);
            let drawn = rng.random_range(config.maf_min..=config.maf_max);
            block_maf = config
                .causal_variants
                .iter()
                .find(|c| c.index >= v && c.index < block_end)
                .and_then(|c| c.maf)
                .unwrap_or(drawn);
            block_seed = (0..n).map(|_| draw_dosage(&mut rng, block_maf)).collect();
            columns.push(block_seed.clone());
        } else {
            let col = block_seed
                .iter()
                .map(|&g| {
                    if rng.random_bool(config.ld_mutation_prob) {
                        draw_dosage(&mut rng, block_maf)
                    } else {
                        g
                    }
                })
                .collect();
            columns.push(col);
        }
        variants.push(VariantInfo {
            id: variant_id(v),
            maf: block_maf,
            effect: config
                .causal_variants
                .iter()
                .find(|c| c.index == v)
                .map(|c| c.beta),
            ld_block: block,
        });
    }
    GenotypeMatrix::from_columns(columns, variants)
}

fn generate_covariates(n: usize, seed: u64) -> Vec<CovariateRow> {
    let mut rng = rng_for(seed, STREAM_COVARIATES);
    (0..n)
        .map(|_| {
            let sex = rng.random_bool(0.5) as u8;
            let age = rng.random_range(40.0..70.0);
            let mut pcs = [0.0; N_PCS];
            for pc in &mut pcs {
                *pc = rng.sample(StandardNormal);
            }
            CovariateRow { sex, age, pcs }
        })
        .collect()
}

fn liabilities(
    config: &GeneratorConfig,
    genotypes: &GenotypeMatrix,
    covariates: &[CovariateRow],
    seed: u64,
) -> Vec<f64> {
    let n = covariates.len();
    let ages: Vec<f64> = covariates.iter().map(|r| r.age).collect();
    let age_mean = crate::util::mean(&ages);
    let age_sd = crate::util::std_dev(&ages).max(f64::MIN_POSITIVE);
    let mut rng = rng_for(seed, STREAM_LIABILITY);
    let mut liability: Vec<f64> = (0..n)
        .map(|i| {
            let eps: f64 = rng.sample(StandardNormal);
            config.beta_sex * covariates[i].sex as f64
                + config.beta_age * (covariates[i].age - age_mean) / age_sd
                + eps
        })
        .collect();
    for cv in &config.causal_variants {
        for (l, &g) in liability.iter_mut().zip(genotypes.column(cv.index)) {
            *l += cv.beta * g as f64;
        }
    }
    liability
}

fn generate_records(config: &GeneratorConfig, y: &[u8], seed: u64) -> Result<Vec<PatientRecord>> {
    let mut rng = rng_for(seed, STREAM_RECORDS);
    let mut anchor_rng = rng_for(seed, STREAM_ANCHORS);
    let background: Vec<String> = (0..config.n_background_codes).map(background_code).collect();
    let zipf = WeightedIndex::new(
        (0..config.n_background_codes)
            .map(|i| 1.0 / ((i + 1) as f64).powf(config.background_zipf_exponent)),
    )
    .map_err(|e| Error::InvalidConfig(format!("background weights: {e}")))?;
    let comorbidity_probs: Vec<[f64; 2]> = config
        .comorbidities
        .iter()
        .map(|c| {
            let base = c.base_rate.clamp(1e-12, 1.0 - 1e-12);
            let logit = (base / (1.0 - base)).ln();
            [c.base_rate, sigmoid(logit + c.log_odds)]
        })
        .collect();

    let mut records = Vec::with_capacity(y.len());
    for (i, &yi) in y.iter().enumerate() {
        let n_visits = rng.random_range(config.min_visits..=config.max_visits);
        let mut visits: Vec<Visit> = vec![Visit::new(); n_visits];
        for visit in &mut visits {
            let k = rng.random_range(config.background_min_per_visit..=config.background_max_per_visit);
            for _ in 0..k {
                visit.insert(background[zipf.sample(&mut rng)].clone());
            }
            for (c, probs) in config.comorbidities.iter().zip(&comorbidity_probs) {
                if rng.random_bool(probs[yi as usize]) {
                    visit.insert(c.code.clone());
                }
            }
        }
        if let Some(inter) = &config.interaction {
            let flip = rng.random_bool(if yi == 1 { 0.5 } else { inter.control_pair_rate });
            let chosen: &[&String] = match (yi == 1, flip) {
                (true, false) => &[&inter.code_a],
                (true, true) => &[&inter.code_b],
                (false, false) => &[],
                (false, true) => &[&inter.code_a, &inter.code_b],
            };
            for code in chosen {
                let t = rng.random_range(0..n_visits);
                visits[t].insert((*code).clone());
            }
        }
        while visits.iter().map(|v| v.len()).sum::<usize>() < MIN_CODES_PER_PATIENT {
            let t = rng.random_range(0..n_visits);
            visits[t].insert(background[zipf.sample(&mut rng)].clone());
        }

        let carries = if yi == 1 {
            anchor_rng.random_bool(config.anchor_sensitivity)
        } else {
            anchor_rng.random_bool(config.anchor_false_positive_rate)
        };
        if carries {
            let onset = anchor_rng.random_range(0..n_visits);
            for (t, visit) in visits.iter_mut().enumerate().skip(onset) {
                if t == onset || anchor_rng.random_bool(config.anchor_repeat_prob) {
                    let a = anchor_rng.random_range(0..config.anchor_codes.len());
                    visit.insert(config.anchor_codes[a].clone());
                }
            }
        }
        records.push(PatientRecord::new(patient_id(i), visits)?);
    }
    Ok(records)
}
