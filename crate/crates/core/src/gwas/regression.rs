use nalgebra::{DMatrix, DVector};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use super::{AssociationResult, FitStatus, TestKind};
use crate::util::sigmoid;
use crate::{Error, Result};

/// Columns whose QR pivot falls below this fraction of their norm are treated as collinear.
pub(crate) const RANK_TOL: f64 = 1e-9;
const LOGISTIC_MAX_ITER: usize = 50;
/// Fitted probabilities this close to 0 or 1 indicate (quasi-)separation.
const SEPARATION_EPS: f64 = 1e-8;

/// Two-sided p-value of a t statistic, via the regularized incomplete beta
/// function so that tiny p-values keep full relative precision.
pub fn two_sided_t_p(t: f64, df: f64) -> f64 {
    if !t.is_finite() || df <= 0.0 {
        return f64::NAN;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

pub fn two_sided_z_p(z: f64) -> f64 {
    if !z.is_finite() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

fn check_inputs(y: &[f64], g: &[u8], covariates: &[Vec<f64>]) -> Result<()> {
    let n = y.len();
    if g.len() != n || covariates.iter().any(|c| c.len() != n) {
        return Err(Error::Misaligned(format!(
            "phenotype has {n} rows; genotype {} and covariates {:?}",
            g.len(),
            covariates.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("phenotype".into()));
    }
    if covariates.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariates".into()));
    }
    let p = covariates.len() + 2;
    if n < p + 2 {
        return Err(Error::Degenerate(format!("{n} observations for {p} parameters")));
    }
    Ok(())
}

/// `[1, g, covariates...]` as an n×p matrix.
pub(crate) fn design(g: Option<&[u8]>, covariates: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    let p = 1 + g.is_some() as usize + covariates.len();
    let mut x = DMatrix::zeros(n, p);
    x.column_mut(0).fill(1.0);
    let mut j = 1;
    if let Some(g) = g {
        for (i, &v) in g.iter().enumerate() {
            x[(i, 1)] = v as f64;
        }
        j = 2;
    }
    for (k, col) in covariates.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            x[(i, j + k)] = v;
        }
    }
    x
}

/// Fails with `RankDeficient` if any column is (numerically) in the span of the previous ones.
pub(crate) fn check_rank(r: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<()> {
    for j in 0..x.ncols() {
        let norm = x.column(j).norm();
        if norm == 0.0 || r[(j, j)].abs() <= RANK_TOL * norm {
            return Err(Error::RankDeficient);
        }
    }
    Ok(())
}

/// Inverse of an upper-triangular matrix by back substitution.
fn upper_inverse(r: &DMatrix<f64>) -> DMatrix<f64> {
    let p = r.ncols();
    let mut inv = DMatrix::zeros(p, p);
    for col in 0..p {
        for i in (0..=col).rev() {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in i + 1..=col {
                s -= r[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = s / r[(i, i)];
        }
    }
    inv
}

/// OLS of `y` on `[1, g, covariates]` with a two-sided t test on the genotype coefficient.
pub fn linear_assoc(
    variant_id: &str,
    y: &[f64],
    g: &[u8],
    covariates: &[Vec<f64>],
) -> Result<AssociationResult> {
    check_inputs(y, g, covariates)?;
    let n = y.len();
    let x = design(Some(g), covariates, n);
    let p = x.ncols();
    let qr = x.clone().qr();
    let r = qr.r();
    check_rank(&r, &x)?;

    let mean = y.iter().sum::<f64>() / n as f64;
    if y.iter().all(|&v| v == mean) {
        return Ok(AssociationResult::flagged(variant_id, TestKind::Linear, n, 0.0, f64::NAN, FitStatus::NonFinite));
    }

    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let r_inv = upper_inverse(&r);
    let coef = &r_inv * qty;
    let resid = &yv - &x * &coef;
    let rss = resid.norm_squared();
    let df = (n - p) as f64;
    let sigma2 = rss / df;
    let var_beta = sigma2 * r_inv.row(1).norm_squared();
    let beta = coef[1];
    let se = var_beta.sqrt();
    if !(se.is_finite() && se > 0.0) {
        return Ok(AssociationResult::flagged(variant_id, TestKind::Linear, n, beta, se, FitStatus::NonFinite));
    }
    let t = beta / se;
    Ok(AssociationResult {
        variant_id: variant_id.to_string(),
        beta,
        standard_error: se,
        statistic: t,
        p_value: two_sided_t_p(t, df),
        test: TestKind::Linear,
        n_used: n,
        status: FitStatus::Ok,
    })
}

pub(crate) struct LogisticFit {
    pub coef: DVector<f64>,
    pub cov_diag: DVector<f64>,
    pub status: FitStatus,
}

fn deviance(x: &DMatrix<f64>, y: &[f64], coef: &DVector<f64>) -> f64 {
    let eta = x * coef;
    let mut d = 0.0;
    for (e, &yi) in eta.iter().zip(y) {
        // -2 log-likelihood, computed stably.
        let log1pexp = if *e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
        d += 2.0 * (log1pexp - yi * e);
    }
    d
}

/// Newton–Raphson logistic fit with step halving.
pub(crate) fn fit_logistic(x: &DMatrix<f64>, y: &[f64], start: DVector<f64>) -> LogisticFit {
    let (n, p) = x.shape();
    let mut coef = start;
    let mut dev = deviance(x, y, &coef);
    let mut converged = false;
    let mut info = DMatrix::zeros(p, p);
    for _ in 0..LOGISTIC_MAX_ITER {
        let eta = x * &coef;
        let mut grad = DVector::zeros(p);
        info.fill(0.0);
        for i in 0..n {
            let mu = sigmoid(eta[i]);
            let w = mu * (1.0 - mu);
            let resid = y[i] - mu;
            for a in 0..p {
                let xa = x[(i, a)];
                grad[a] += xa * resid;
                let wa = w * xa;
                for b in a..p {
                    info[(a, b)] += wa * x[(i, b)];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        let Some(chol) = info.clone().cholesky() else {
            break;
        };
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let mut next = &coef + &step;
        let mut next_dev = deviance(x, y, &next);
        while !(next_dev <= dev + 1e-12 * dev.abs()) && scale > 1e-6 {
            scale *= 0.5;
            next = &coef + &step * scale;
            next_dev = deviance(x, y, &next);
        }
        let delta = (&next - &coef).amax();
        coef = next;
        let change = dev - next_dev;
        dev = next_dev;
        if delta < 1e-10 * (1.0 + coef.amax()) || change.abs() < 1e-12 * (1.0 + dev.abs()) {
            converged = true;
            break;
        }
    }

    let eta = x * &coef;
    let separated = eta
        .iter()
        .map(|&e| sigmoid(e))
        .any(|mu| mu < SEPARATION_EPS || mu > 1.0 - SEPARATION_EPS);
    // Information at the final estimate for the Wald standard errors.
    info.fill(0.0);
    for i in 0..n {
        let mu = sigmoid(eta[i]);
        let w = mu * (1.0 - mu);
        for a in 0..p {
            let wa = w * x[(i, a)];
            for b in a..p {
                info[(a, b)] += wa * x[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            info[(a, b)] = info[(b, a)];
        }
    }
    let cov_diag = match info.cholesky() {
        Some(chol) => chol.inverse().diagonal(),
        None => DVector::from_element(p, f64::NAN),
    };
    let status = if separated {
        FitStatus::Separation
    } else if !converged {
        FitStatus::NotConverged
    } else if cov_diag.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        FitStatus::NonFinite
    } else {
        FitStatus::Ok
    };
    LogisticFit { coef, cov_diag, status }
}

pub(crate) fn check_binary(y: &[f64]) -> Result<()> {
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument("logistic phenotype must be 0/1".into()));
    }
    let cases = y.iter().filter(|&&v| v == 1.0).count();
    if cases == 0 || cases == y.len() {
        return Err(Error::Degenerate("phenotype has a single class".into()));
    }
    Ok(())
}

pub(crate) fn logistic_from_fit(variant_id: &str, fit: &LogisticFit, n: usize) -> AssociationResult {
    let beta = fit.coef[1];
    let se = fit.cov_diag[1].sqrt();
    if fit.status != FitStatus::Ok || !(se.is_finite() && se > 0.0) {
        let status = if fit.status == FitStatus::Ok { FitStatus::NonFinite } else { fit.status };
        return AssociationResult::flagged(variant_id, TestKind::Logistic, n, beta, se, status);
    }
    let z = beta / se;
    AssociationResult {
        variant_id: variant_id.to_string(),
        beta,
        standard_error: se,
        statistic: z,
        p_value: two_sided_z_p(z),
        test: TestKind::Logistic,
        n_used: n,
        status: FitStatus::Ok,
    }
}

pub(crate) fn null_start(y: &[f64], p: usize) -> DVector<f64> {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let mut start = DVector::zeros(p);
    start[0] = (m / (1.0 - m)).ln();
    start
}

/// Logistic regression of a 0/1 phenotype on `[1, g, covariates]` with a Wald test.
/// Separation and non-convergence come back as flagged results.
pub fn logistic_assoc(
    variant_id: &str,
    y: &[f64],
    g: &[u8],
    covariates: &[Vec<f64>],
) -> Result<AssociationResult> {
    check_inputs(y, g, covariates)?;
    check_binary(y)?;
    let n = y.len();
    let x = design(Some(g), covariates, n);
    check_rank(&x.clone().qr().r(), &x)?;
    let fit = fit_logistic(&x, y, null_start(y, x.ncols()));
    Ok(logistic_from_fit(variant_id, &fit, n))
}
