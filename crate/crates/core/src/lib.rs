//! Anchor-variable phenotyping for genome-wide association studies.
//!
//! Patients' diagnosis-code sequences are treated as positive-unlabeled data:
//! an anchor code marks a subset of true cases, an anchor classifier scores
//! every patient, and the resulting continuous phenotype is tested against
//! genotypes. Synthetic cohorts with planted genotype effects make the power
//! of each phenotype definition measurable.

pub mod anchor;
pub mod classifiers;
pub mod cohort;
pub mod error;
pub mod gwas;
pub mod harness;
pub mod metrics;
pub mod pheprob;
pub(crate) mod util;

pub use error::{Error, Result};
