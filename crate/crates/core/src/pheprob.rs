//! Two-component binomial mixture over anchor-code counts.
//!
//! Each patient contributes `C_i` anchor occurrences out of `S_i` total code
//! occurrences. Cases draw anchors with probability `p_case`, controls with
//! `p_control`; the posterior case responsibility is the phenotype.

use rand::Rng;
use statrs::function::factorial::ln_binomial;

use crate::anchor::{PhenotypeKind, PhenotypeVector};
use crate::util::rng_for;
use crate::{Error, Result};

const P_FLOOR: f64 = 1e-12;
const N_STARTS: usize = 5;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BinomialMixtureParams {
    /// Case prior.
    pub pi: f64,
    pub p_case: f64,
    pub p_control: f64,
    /// Observed-data log-likelihood after each EM iteration of the selected start.
    pub log_likelihood: Vec<f64>,
}

fn check(total: &[u32], anchor: &[u32]) -> Result<()> {
    if total.len() != anchor.len() {
        return Err(Error::Shape(format!(
            "{} totals for {} anchor counts",
            total.len(),
            anchor.len()
        )));
    }
    if total.is_empty() {
        return Err(Error::Degenerate("no patients".into()));
    }
    for (i, (&s, &c)) in total.iter().zip(anchor).enumerate() {
        if s == 0 {
            return Err(Error::InvalidArgument(format!("patient {i} has zero total codes")));
        }
        if c > s {
            return Err(Error::InvalidArgument(format!(
                "patient {i}: anchor count {c} exceeds total {s}"
            )));
        }
    }
    Ok(())
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(P_FLOOR, 1.0 - P_FLOOR)
}

/// Log binomial PMF without the binomial coefficient.
fn log_kernel(c: f64, s: f64, p: f64) -> f64 {
    let p = clamp_p(p);
    c * p.ln() + (s - c) * (1.0 - p).ln()
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

struct Data<'a> {
    total: &'a [u32],
    anchor: &'a [u32],
    log_coef: f64,
}

impl Data<'_> {
    /// Case responsibilities and the observed-data log-likelihood.
    fn e_step(&self, pi: f64, p_case: f64, p_control: f64, resp: &mut [f64]) -> f64 {
        let (lpi, l1pi) = (pi.ln(), (1.0 - pi).ln());
        let mut ll = self.log_coef;
        for (r, (&s, &c)) in resp.iter_mut().zip(self.total.iter().zip(self.anchor)) {
            let (s, c) = (s as f64, c as f64);
            let a = lpi + log_kernel(c, s, p_case);
            let b = l1pi + log_kernel(c, s, p_control);
            let norm = log_add(a, b);
            *r = (a - norm).exp();
            ll += norm;
        }
        ll
    }

    fn m_step(&self, resp: &[f64]) -> (f64, f64, f64) {
        let (mut w1, mut c1, mut s1, mut c0, mut s0) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (r, (&s, &c)) in resp.iter().zip(self.total.iter().zip(self.anchor)) {
            w1 += r;
            c1 += r * c as f64;
            s1 += r * s as f64;
            c0 += (1.0 - r) * c as f64;
            s0 += (1.0 - r) * s as f64;
        }
        let n = resp.len() as f64;
        let pi = (w1 / n).clamp(P_FLOOR, 1.0 - P_FLOOR);
        let p_case = if s1 > 0.0 { c1 / s1 } else { 0.5 };
        let p_control = if s0 > 0.0 { c0 / s0 } else { 0.5 };
        (pi, p_case, p_control)
    }

    fn run(&self, start: (f64, f64, f64), tol: f64, max_iter: usize) -> BinomialMixtureParams {
        let (mut pi, mut p1, mut p0) = start;
        let mut resp = vec![0.0; self.total.len()];
        let mut trace = vec![self.e_step(pi, p1, p0, &mut resp)];
        for _ in 0..max_iter {
            (pi, p1, p0) = self.m_step(&resp);
            let ll = self.e_step(pi, p1, p0, &mut resp);
            let improvement = ll - trace[trace.len() - 1];
            trace.push(ll);
            if improvement < tol {
                break;
            }
        }
        if p1 < p0 {
            (pi, p1, p0) = (1.0 - pi, p0, p1);
        }
        BinomialMixtureParams {
            pi,
            p_case: p1,
            p_control: p0,
            log_likelihood: trace,
        }
    }
}

/// Fits the mixture by EM from a ratio-split start plus random restarts,
/// keeping the start with the highest final log-likelihood.
pub fn fit_binomial_mixture(
    total: &[u32],
    anchor: &[u32],
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<BinomialMixtureParams> {
    check(total, anchor)?;
    if anchor.iter().all(|&c| c == 0) {
        return Err(Error::Degenerate(
            "no patient carries an anchor code; the mixture is not identifiable \
             (check the anchor code list)"
                .into(),
        ));
    }
    let log_coef: f64 = total
        .iter()
        .zip(anchor)
        .map(|(&s, &c)| ln_binomial(s as u64, c as u64))
        .sum();
    let data = Data { total, anchor, log_coef };

    // Ratio split: lower half by C/S seeds the control component.
    let mut order: Vec<usize> = (0..total.len()).collect();
    let ratio = |i: usize| anchor[i] as f64 / total[i] as f64;
    order.sort_by(|&a, &b| ratio(a).total_cmp(&ratio(b)).then(a.cmp(&b)));
    let half = order.len() / 2;
    let pooled = |idx: &[usize]| {
        let c: f64 = idx.iter().map(|&i| anchor[i] as f64).sum();
        let s: f64 = idx.iter().map(|&i| total[i] as f64).sum();
        if s > 0.0 { c / s } else { 0.0 }
    };
    let p0 = pooled(&order[..half]);
    let p1 = pooled(&order[half..]);
    let mut starts = vec![(0.5, clamp_p(p1.max(p0 + 1e-6)), clamp_p(p0))];

    let mut rng = rng_for(seed, 0x7068_6570);
    let overall = pooled(&order);
    while starts.len() < N_STARTS {
        let a = overall * rng.random_range(0.05..1.0);
        let b = (overall * rng.random_range(1.0..20.0)).min(0.99);
        starts.push((rng.random_range(0.05..0.95), clamp_p(b), clamp_p(a)));
    }

    let mut best: Option<BinomialMixtureParams> = None;
    for start in starts {
        let fit = data.run(start, tol, max_iter);
        let better = match &best {
            None => true,
            Some(b) => fit.log_likelihood.last() > b.log_likelihood.last(),
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Posterior probability of the case component for each patient.
pub fn posterior(params: &BinomialMixtureParams, total: &[u32], anchor: &[u32]) -> Result<Vec<f64>> {
    check(total, anchor)?;
    let data = Data { total, anchor, log_coef: 0.0 };
    let mut resp = vec![0.0; total.len()];
    data.e_step(params.pi, params.p_case, params.p_control, &mut resp);
    Ok(resp)
}

pub fn pheprob_phenotype(
    params: &BinomialMixtureParams,
    total: &[u32],
    anchor: &[u32],
) -> Result<PhenotypeVector> {
    Ok(PhenotypeVector {
        scores: posterior(params, total, anchor)?,
        kind: PhenotypeKind::Continuous,
        c: 1.0,
    })
}
