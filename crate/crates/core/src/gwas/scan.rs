use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use super::regression::{check_binary, check_rank, design, fit_logistic, logistic_from_fit, null_start, two_sided_t_p, RANK_TOL};
use super::{AssociationResult, FitStatus, TestKind, GENOME_WIDE_ALPHA};
use crate::anchor::{PhenotypeKind, PhenotypeVector};
use crate::cohort::{CovariateTable, GenotypeMatrix, N_PCS};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOptions {
    pub alpha: f64,
    /// Number of principal components included alongside sex and age.
    pub n_pcs: usize,
    /// Restrict the scan to these variant indices; all variants when `None`.
    pub variants: Option<Vec<usize>>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { alpha: GENOME_WIDE_ALPHA, n_pcs: N_PCS, variants: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GwasResult {
    /// Scanned variant indices, ascending.
    pub variants: Vec<usize>,
    /// One result per scanned variant, same order as `variants`.
    pub results: Vec<AssociationResult>,
    pub significant: BTreeSet<usize>,
    pub alpha: f64,
}

impl GwasResult {
    pub fn result_for(&self, variant: usize) -> Option<&AssociationResult> {
        self.variants.binary_search(&variant).ok().map(|i| &self.results[i])
    }

    pub fn significant_at(&self, alpha: f64) -> BTreeSet<usize> {
        select_significant(&self.variants, &self.results, alpha)
    }

    pub fn significant_ids(&self) -> Vec<String> {
        self.significant.iter().filter_map(|&v| self.result_for(v)).map(|r| r.variant_id.clone()).collect()
    }

    pub fn flagged_count(&self) -> usize {
        self.results.iter().filter(|r| r.status != FitStatus::Ok).count()
    }
}

fn select_significant(variants: &[usize], results: &[AssociationResult], alpha: f64) -> BTreeSet<usize> {
    variants
        .iter()
        .zip(results)
        .filter(|(_, r)| r.is_usable() && r.p_value < alpha)
        .map(|(&v, _)| v)
        .collect()
}

pub fn run_gwas(
    phenotype: &PhenotypeVector,
    genotypes: &GenotypeMatrix,
    covariates: &CovariateTable,
    alpha: f64,
) -> Result<GwasResult> {
    run_gwas_with(phenotype, genotypes, covariates, &ScanOptions { alpha, ..ScanOptions::default() })
}

/// Scans variants with linear regression for continuous phenotypes and logistic
/// regression for binary ones, always adjusting for sex, age and `n_pcs` PCs.
pub fn run_gwas_with(
    phenotype: &PhenotypeVector,
    genotypes: &GenotypeMatrix,
    covariates: &CovariateTable,
    options: &ScanOptions,
) -> Result<GwasResult> {
    let n = phenotype.len();
    if genotypes.n_patients() != n || covariates.len() != n {
        return Err(Error::Misaligned(format!(
            "phenotype has {n} patients, genotypes {}, covariates {}",
            genotypes.n_patients(),
            covariates.len()
        )));
    }
    if !(0.0..=1.0).contains(&options.alpha) {
        return Err(Error::InvalidArgument(format!("alpha {} outside [0, 1]", options.alpha)));
    }
    if options.n_pcs > N_PCS {
        return Err(Error::InvalidArgument(format!("at most {N_PCS} principal components")));
    }
    let variants: Vec<usize> = match &options.variants {
        Some(v) => {
            let set: BTreeSet<usize> = v.iter().copied().collect();
            if let Some(&bad) = set.iter().find(|&&j| j >= genotypes.n_variants()) {
                return Err(Error::InvalidArgument(format!("variant index {bad} out of range")));
            }
            set.into_iter().collect()
        }
        None => (0..genotypes.n_variants()).collect(),
    };
    let cov = covariates.columns(options.n_pcs);
    let y = &phenotype.scores;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("phenotype".into()));
    }
    let p = cov.len() + 2;
    if n < p + 2 {
        return Err(Error::Degenerate(format!("{n} observations for {p} parameters")));
    }

    let results = match phenotype.kind {
        PhenotypeKind::Continuous => linear_scan(y, genotypes, &cov, &variants)?,
        PhenotypeKind::Binary => logistic_scan(y, genotypes, &cov, &variants)?,
    };
    let significant = select_significant(&variants, &results, options.alpha);
    Ok(GwasResult { variants, results, significant, alpha: options.alpha })
}

/// Linear scan using the Frisch–Waugh–Lovell theorem: phenotype and genotype are
/// residualized on the covariate space once, then each variant is a
/// one-regressor fit with `n - p` degrees of freedom.
fn linear_scan(
    y: &[f64],
    genotypes: &GenotypeMatrix,
    cov: &[Vec<f64>],
    variants: &[usize],
) -> Result<Vec<AssociationResult>> {
    let n = y.len();
    let c = design(None, cov, n);
    let qr = c.clone().qr();
    check_rank(&qr.r(), &c)?;
    let q: DMatrix<f64> = qr.q();
    let project_out = |v: DVector<f64>| -> DVector<f64> {
        let coef = q.tr_mul(&v);
        v - &q * coef
    };
    let yv = DVector::from_column_slice(y);
    let y_res = project_out(yv.clone());
    let mean = yv.mean();
    let constant = y.iter().all(|&v| v == mean);
    let df = (n - c.ncols() - 1) as f64;

    let mut results = Vec::with_capacity(variants.len());
    for &j in variants {
        let id = &genotypes.variants[j].id;
        let col = genotypes.column(j);
        let g = DVector::from_iterator(n, col.iter().map(|&d| d as f64));
        let g_norm = g.norm();
        let g_res = project_out(g);
        let gg = g_res.norm_squared();
        if g_norm == 0.0 || gg.sqrt() <= RANK_TOL * g_norm {
            results.push(AssociationResult::flagged(id, TestKind::Linear, n, f64::NAN, f64::NAN, FitStatus::RankDeficient));
            continue;
        }
        if constant {
            results.push(AssociationResult::flagged(id, TestKind::Linear, n, 0.0, f64::NAN, FitStatus::NonFinite));
            continue;
        }
        let beta = g_res.dot(&y_res) / gg;
        let rss = (&y_res - &g_res * beta).norm_squared();
        let se = (rss / df / gg).sqrt();
        if !(se.is_finite() && se > 0.0) {
            results.push(AssociationResult::flagged(id, TestKind::Linear, n, beta, se, FitStatus::NonFinite));
            continue;
        }
        let t = beta / se;
        results.push(AssociationResult {
            variant_id: id.clone(),
            beta,
            standard_error: se,
            statistic: t,
            p_value: two_sided_t_p(t, df),
            test: TestKind::Linear,
            n_used: n,
            status: FitStatus::Ok,
        });
    }
    Ok(results)
}

/// Logistic scan; each variant fit is warm-started from the covariate-only model.
fn logistic_scan(
    y: &[f64],
    genotypes: &GenotypeMatrix,
    cov: &[Vec<f64>],
    variants: &[usize],
) -> Result<Vec<AssociationResult>> {
    let n = y.len();
    let results_flagged = |status| -> Vec<AssociationResult> {
        variants
            .iter()
            .map(|&j| AssociationResult::flagged(&genotypes.variants[j].id, TestKind::Logistic, n, f64::NAN, f64::NAN, status))
            .collect()
    };
    // A one-class phenotype (for example after removing every case) has no
    // estimable association; each variant is reported as flagged.
    if let Err(e) = check_binary(y) {
        return match e {
            Error::Degenerate(_) => Ok(results_flagged(FitStatus::NonFinite)),
            other => Err(other),
        };
    }
    let c = design(None, cov, n);
    check_rank(&c.clone().qr().r(), &c)?;
    let null = fit_logistic(&c, y, null_start(y, c.ncols()));

    let mut x = design(Some(genotypes.column(variants.first().copied().unwrap_or(0))), cov, n);
    let mut results = Vec::with_capacity(variants.len());
    for &j in variants {
        let id = &genotypes.variants[j].id;
        for (i, &d) in genotypes.column(j).iter().enumerate() {
            x[(i, 1)] = d as f64;
        }
        let g_norm = x.column(1).norm();
        let g_mean = x.column(1).mean();
        if g_norm == 0.0 || x.column(1).iter().all(|&v| v == g_mean) {
            results.push(AssociationResult::flagged(id, TestKind::Logistic, n, f64::NAN, f64::NAN, FitStatus::RankDeficient));
            continue;
        }
        let mut start = DVector::zeros(x.ncols());
        start[0] = null.coef[0];
        for k in 1..null.coef.len() {
            start[k + 1] = null.coef[k];
        }
        let fit = fit_logistic(&x, y, start);
        results.push(logistic_from_fit(id, &fit, n));
    }
    Ok(results)
}
