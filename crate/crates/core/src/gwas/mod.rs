//! Per-variant association tests, LD expansion and truth-catalog matching.

mod ld;
mod regression;
mod scan;

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::util::{fmt_f64, parse_f64};
use crate::{Error, Result};

pub use ld::{ld_expand, ld_r2, match_catalog, CatalogMatch, TruthCatalog};
pub use regression::{linear_assoc, logistic_assoc, two_sided_t_p, two_sided_z_p};
pub use scan::{run_gwas, run_gwas_with, GwasResult, ScanOptions};

/// Genome-wide significance.
pub const GENOME_WIDE_ALPHA: f64 = 5e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestKind {
    Linear,
    Logistic,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::Linear => "linear",
            TestKind::Logistic => "logistic",
        }
    }
}

/// Why a fit did not produce a usable p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitStatus {
    Ok,
    NonFinite,
    Separation,
    NotConverged,
    RankDeficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub variant_id: String,
    pub beta: f64,
    pub standard_error: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub test: TestKind,
    pub n_used: usize,
    pub status: FitStatus,
}

impl AssociationResult {
    pub(crate) fn flagged(
        variant_id: &str,
        test: TestKind,
        n_used: usize,
        beta: f64,
        standard_error: f64,
        status: FitStatus,
    ) -> Self {
        Self {
            variant_id: variant_id.to_string(),
            beta,
            standard_error,
            statistic: f64::NAN,
            p_value: f64::NAN,
            test,
            n_used,
            status,
        }
    }

    pub fn is_usable(&self) -> bool {
        self.status == FitStatus::Ok && self.p_value.is_finite()
    }
}

const SUMSTATS_HEADER: &str = "variant_id\tbeta\tse\tstat\tp\ttest\tn";

/// Summary statistics, one row per variant; flagged fits carry `NaN` statistics.
pub fn write_sumstats(results: &[AssociationResult], mut out: impl Write) -> Result<()> {
    writeln!(out, "{SUMSTATS_HEADER}")?;
    for r in results {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.variant_id,
            fmt_f64(r.beta),
            fmt_f64(r.standard_error),
            fmt_f64(r.statistic),
            fmt_f64(r.p_value),
            r.test.as_str(),
            r.n_used
        )?;
    }
    Ok(())
}

pub fn save_sumstats(results: &[AssociationResult], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_sumstats(results, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Parses a summary-statistics file. Rows with a non-finite statistic come back as `NonFinite`.
pub fn load_sumstats(path: &Path) -> Result<Vec<AssociationResult>> {
    let mut results = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if lineno == 1 {
            if line != SUMSTATS_HEADER {
                return Err(Error::Parse { line: 1, message: "unexpected header".into() });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let perr = |m: &str| Error::Parse { line: lineno, message: m.to_string() };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(perr("expected 7 fields"));
        }
        let num = |s: &str| parse_f64(s).ok_or_else(|| perr("bad number"));
        let test = match f[5] {
            "linear" => TestKind::Linear,
            "logistic" => TestKind::Logistic,
            _ => return Err(perr("bad test kind")),
        };
        let p_value = num(f[4])?;
        results.push(AssociationResult {
            variant_id: f[0].to_string(),
            beta: num(f[1])?,
            standard_error: num(f[2])?,
            statistic: num(f[3])?,
            p_value,
            test,
            n_used: f[6].parse().map_err(|_| perr("bad n"))?,
            status: if p_value.is_finite() { FitStatus::Ok } else { FitStatus::NonFinite },
        });
    }
    Ok(results)
}
