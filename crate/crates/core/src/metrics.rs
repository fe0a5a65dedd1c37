//! Ranking metrics for anchor classifiers.
//!
//! Ties are handled explicitly: AUROC gives half credit to tied
//! positive/negative pairs, and average precision admits tied scores as one
//! group.

use std::io::{BufRead, Write};

use crate::util::{fmt_f64, parse_f64};
use crate::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Area under the ROC curve as the Mann–Whitney statistic
/// `P(s+ > s-) + P(s+ = s-) / 2`.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate("AUROC needs both classes".into()));
    }
    let order = descending(scores);
    // Walk groups of tied scores from the top; each positive beats every
    // negative below its group and ties with the negatives inside it.
    let mut wins = 0.0f64;
    let mut neg_above = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut gp, mut gn) = (0usize, 0usize);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] != 0 {
                gp += 1;
            } else {
                gn += 1;
            }
            j += 1;
        }
        let neg_below = neg - neg_above - gn;
        wins += gp as f64 * neg_below as f64 + 0.5 * gp as f64 * gn as f64;
        neg_above += gn;
        i = j;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Average precision `sum_k (R_k - R_{k-1}) P_k` over descending score groups.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::Degenerate("average precision needs a positive".into()));
    }
    let order = descending(scores);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut gp = 0usize;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            gp += (labels[order[j]] != 0) as usize;
            j += 1;
        }
        tp += gp;
        seen += j - i;
        if gp > 0 {
            ap += (gp as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
        i = j;
    }
    Ok(ap)
}

/// Ordered `metric<TAB>value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub entries: Vec<(String, f64)>,
}

impl MetricsReport {
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.entries.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn write(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "metric\tvalue")?;
        for (name, value) in &self.entries {
            writeln!(out, "{name}\t{}", fmt_f64(*value))?;
        }
        Ok(())
    }

    pub fn parse(input: impl BufRead) -> Result<Self> {
        let mut report = MetricsReport::default();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 || line.is_empty() {
                continue;
            }
            let perr = |m: &str| Error::Parse { line: i + 1, message: m.to_string() };
            let (name, value) = line.split_once('\t').ok_or_else(|| perr("missing tab"))?;
            let value = parse_f64(value).ok_or_else(|| perr("bad value"))?;
            report.push(name, value);
        }
        Ok(report)
    }
}
