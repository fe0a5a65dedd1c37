use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::features::{CountFeaturizer, CountFeatures};
use crate::anchor::AnchorLabel;
use crate::cohort::PatientRecord;
use crate::util::sigmoid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    pub l2: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { l2: 1.0, tol: 1e-8, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Standard errors from the inverse penalized Hessian, intercept first.
    pub standard_errors: Vec<f64>,
    pub iterations: usize,
    pub l2: f64,
}

impl LogisticModel {
    pub fn z_scores(&self) -> Vec<f64> {
        self.coefficients.iter().zip(&self.standard_errors[1..]).map(|(b, s)| b / s).collect()
    }

    pub fn predict_features(&self, features: &CountFeatures) -> Result<Vec<f64>> {
        if features.n_cols != self.coefficients.len() {
            return Err(Error::Shape(format!(
                "model has {} features, input has {}",
                self.coefficients.len(),
                features.n_cols
            )));
        }
        Ok((0..features.n_rows)
            .map(|i| {
                let eta = self.intercept + features.row(i).iter().zip(&self.coefficients).map(|(x, w)| x * w).sum::<f64>();
                sigmoid(eta)
            })
            .collect())
    }
}

/// `sum_i log(1 + exp(eta_i)) - y_i eta_i + l2/2 |w|^2`, intercept unpenalized.
fn objective(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>, l2: f64) -> f64 {
    let eta = x * beta;
    let mut f = 0.0;
    for (e, yi) in eta.iter().zip(y) {
        let softplus = if *e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
        f += softplus - yi * e;
    }
    f + 0.5 * l2 * beta.rows(1, beta.len() - 1).norm_squared()
}

/// L2-penalized logistic regression by damped Newton iterations; converged when the
/// max-norm of the penalized gradient drops below `tol`.
pub fn train_logistic(
    features: &CountFeatures,
    labels: &AnchorLabel,
    l2: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LogisticModel> {
    let (n, p) = (features.n_rows, features.n_cols);
    if labels.len() != n {
        return Err(Error::Misaligned(format!("{n} feature rows, {} labels", labels.len())));
    }
    let pos = labels.positives();
    if pos == 0 || pos == n {
        return Err(Error::Degenerate("training labels contain a single class".into()));
    }
    if features.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("features".into()));
    }
    if !(l2 >= 0.0 && tol > 0.0) {
        return Err(Error::InvalidArgument("need l2 >= 0 and tol > 0".into()));
    }
    let x = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { features.data[i * p + j - 1] });
    let y: Vec<f64> = labels.as_slice().iter().map(|&v| v as f64).collect();
    let mut beta = DVector::zeros(p + 1);
    let rate = pos as f64 / n as f64;
    beta[0] = (rate / (1.0 - rate)).ln();

    let mut f = objective(&x, &y, &beta, l2);
    let mut iterations = 0;
    let mut converged = false;
    let mut hessian = DMatrix::zeros(p + 1, p + 1);
    while iterations <= max_iter {
        let eta = &x * &beta;
        let mu: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid = DVector::from_iterator(n, mu.iter().zip(&y).map(|(m, yi)| m - yi));
        let mut grad = x.tr_mul(&resid);
        for j in 1..=p {
            grad[j] += l2 * beta[j];
        }
        if grad.amax() < tol {
            converged = true;
            break;
        }
        if iterations == max_iter {
            break;
        }
        let w = DVector::from_iterator(n, mu.iter().map(|m| m * (1.0 - m)));
        let xw = DMatrix::from_fn(n, p + 1, |i, j| x[(i, j)] * w[i]);
        x.tr_mul_to(&xw, &mut hessian);
        for j in 1..=p {
            hessian[(j, j)] += l2;
        }
        let step = match hessian.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => return Err(Error::Degenerate("singular Hessian; increase l2".into())),
        };
        let mut t = 1.0;
        loop {
            let candidate = &beta - &step * t;
            let fc = objective(&x, &y, &candidate, l2);
            // Near the optimum the decrease drops below the objective's rounding error.
            if fc <= f + 8.0 * f64::EPSILON * f.abs() || t < 1e-10 {
                beta = candidate;
                f = fc;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
    }
    if !converged {
        return Err(Error::Degenerate(format!("logistic regression did not converge in {max_iter} iterations")));
    }

    let eta = &x * &beta;
    let xw = DMatrix::from_fn(n, p + 1, |i, j| {
        let m = sigmoid(eta[i]);
        x[(i, j)] * m * (1.0 - m)
    });
    x.tr_mul_to(&xw, &mut hessian);
    for j in 1..=p {
        hessian[(j, j)] += l2;
    }
    let standard_errors = match hessian.cholesky() {
        Some(c) => c.inverse().diagonal().iter().map(|v| v.sqrt()).collect(),
        None => vec![f64::NAN; p + 1],
    };
    Ok(LogisticModel {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        standard_errors,
        iterations,
        l2,
    })
}

/// The count-feature anchor classifier: featurizer plus fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorLogistic {
    pub featurizer: CountFeaturizer,
    pub model: LogisticModel,
}

impl AnchorLogistic {
    pub fn predict(&self, records: &[PatientRecord]) -> Result<Vec<f64>> {
        self.model.predict_features(&self.featurizer.transform(records))
    }
}
