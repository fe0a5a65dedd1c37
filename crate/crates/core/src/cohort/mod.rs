//! Patient records, synthetic cohort generation, tokenization and file I/O.

mod encode;
mod generate;
pub mod io;
mod vocab;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use encode::{encode_record, EncodedSequence, DEFAULT_MAX_LEN};
pub use generate::{
    CausalVariant,
    generate_cohort, ComorbidityCode, GeneratorConfig, InteractionConfig, SyntheticCohort,
};
pub use vocab::{
    build_vocabulary, Vocabulary, CLS, DEFAULT_MIN_FREQUENCY_FRACTION, N_SPECIAL, PAD, SEP, UNK,
};

/// Minimum total code count for a patient to be retained.
pub const MIN_CODES_PER_PATIENT: usize = 5;

/// One visit: an unordered set of disease codes.
pub type Visit = BTreeSet<String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub visits: Vec<Visit>,
}

impl PatientRecord {
    /// Builds a record, dropping empty visits. Fails on an empty id, an empty
    /// code, or a record with no visits left.
    pub fn new(patient_id: impl Into<String>, visits: Vec<Visit>) -> Result<Self> {
        let patient_id = patient_id.into();
        if patient_id.is_empty() {
            return Err(Error::InvalidArgument("empty patient id".into()));
        }
        let visits: Vec<Visit> = visits.into_iter().filter(|v| !v.is_empty()).collect();
        if visits.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "patient `{patient_id}` has no visits"
            )));
        }
        if visits.iter().flatten().any(|c| c.is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "patient `{patient_id}` has an empty code"
            )));
        }
        Ok(Self { patient_id, visits })
    }

    pub fn visit_count(&self) -> usize {
        self.visits.len()
    }

    /// Total code occurrences over all visits.
    pub fn code_count(&self) -> usize {
        self.visits.iter().map(|v| v.len()).sum()
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.visits.iter().flatten().map(String::as_str)
    }
}

/// Keeps only patients with at least `min_codes` code occurrences.
pub fn retain_min_codes(records: Vec<PatientRecord>, min_codes: usize) -> Vec<PatientRecord> {
    records
        .into_iter()
        .filter(|r| r.code_count() >= min_codes)
        .collect()
}

/// Latent disease state per patient. Only evaluation code reads this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTruth {
    pub patient_ids: Vec<String>,
    pub y: Vec<u8>,
    pub liability: Vec<f64>,
    pub config: GeneratorConfig,
}

impl CohortTruth {
    pub fn case_count(&self) -> usize {
        self.y.iter().filter(|&&y| y == 1).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantInfo {
    pub id: String,
    pub maf: f64,
    /// Planted per-allele effect on liability; `None` for null variants.
    pub effect: Option<f64>,
    pub ld_block: usize,
}

/// Minor-allele dosages, stored variant-major so each column is contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenotypeMatrix {
    n_patients: usize,
    dosages: Vec<u8>,
    pub variants: Vec<VariantInfo>,
}

impl GenotypeMatrix {
    pub fn from_columns(columns: Vec<Vec<u8>>, variants: Vec<VariantInfo>) -> Result<Self> {
        if columns.len() != variants.len() {
            return Err(Error::Shape(format!(
                "{} genotype columns but {} variant records",
                columns.len(),
                variants.len()
            )));
        }
        let n_patients = columns.first().map_or(0, Vec::len);
        let mut dosages = Vec::with_capacity(n_patients * columns.len());
        for (col, info) in columns.iter().zip(&variants) {
            if col.len() != n_patients {
                return Err(Error::Shape(format!(
                    "variant `{}` has {} entries, expected {n_patients}",
                    info.id,
                    col.len()
                )));
            }
            if let Some(bad) = col.iter().find(|&&g| g > 2) {
                return Err(Error::InvalidArgument(format!(
                    "variant `{}` has dosage {bad} outside {{0,1,2}}",
                    info.id
                )));
            }
            dosages.extend_from_slice(col);
        }
        Ok(Self {
            n_patients,
            dosages,
            variants,
        })
    }

    pub fn n_patients(&self) -> usize {
        self.n_patients
    }

    pub fn n_variants(&self) -> usize {
        self.variants.len()
    }

    pub fn column(&self, variant: usize) -> &[u8] {
        &self.dosages[variant * self.n_patients..(variant + 1) * self.n_patients]
    }

    pub fn get(&self, patient: usize, variant: usize) -> u8 {
        self.dosages[variant * self.n_patients + patient]
    }

    pub fn variant_index(&self, id: &str) -> Option<usize> {
        self.variants.iter().position(|v| v.id == id)
    }

    /// Indices of variants with a planted effect.
    pub fn causal_variants(&self) -> BTreeSet<usize> {
        self.variants
            .iter()
            .enumerate()
            .filter(|(_, v)| v.effect.is_some())
            .map(|(i, _)| i)
            .collect()
    }

    /// Observed minor-allele frequency of a column.
    pub fn observed_maf(&self, variant: usize) -> f64 {
        let col = self.column(variant);
        col.iter().map(|&g| g as f64).sum::<f64>() / (2.0 * col.len() as f64)
    }

    /// Restricts to a subset of patients, in the given order.
    pub fn select_patients(&self, patients: &[usize]) -> Self {
        let mut dosages = Vec::with_capacity(patients.len() * self.n_variants());
        for v in 0..self.n_variants() {
            let col = self.column(v);
            dosages.extend(patients.iter().map(|&p| col[p]));
        }
        Self {
            n_patients: patients.len(),
            dosages,
            variants: self.variants.clone(),
        }
    }
}

pub const N_PCS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow {
    pub sex: u8,
    pub age: f64,
    pub pcs: [f64; N_PCS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateTable {
    pub patient_ids: Vec<String>,
    pub rows: Vec<CovariateRow>,
}

impl CovariateTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Covariate columns: sex, age, then the first `n_pcs` principal components.
    pub fn columns(&self, n_pcs: usize) -> Vec<Vec<f64>> {
        let n_pcs = n_pcs.min(N_PCS);
        let mut cols = vec![
            self.rows.iter().map(|r| r.sex as f64).collect(),
            self.rows.iter().map(|r| r.age).collect(),
        ];
        for k in 0..n_pcs {
            cols.push(self.rows.iter().map(|r| r.pcs[k]).collect());
        }
        cols
    }

    pub fn select_patients(&self, patients: &[usize]) -> Self {
        Self {
            patient_ids: patients.iter().map(|&p| self.patient_ids[p].clone()).collect(),
            rows: patients.iter().map(|&p| self.rows[p].clone()).collect(),
        }
    }
}
