use serde::{Deserialize, Serialize};

use crate::anchor::AnchorSpec;
use crate::cohort::{PatientRecord, Vocabulary};
use crate::{Error, Result};

/// Per-code total counts, standardized with training-split statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CountFeatures {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row-major `n_rows × n_cols`.
    pub data: Vec<f64>,
}

impl CountFeatures {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Shape("ragged feature rows".into()));
        }
        Ok(Self { n_rows: rows.len(), n_cols, data: rows.into_iter().flatten().collect() })
    }
}

/// Maps records to standardized count vectors over the vocabulary codes,
/// with anchor-code columns left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountFeaturizer {
    pub codes: Vec<String>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl CountFeaturizer {
    fn raw_counts(codes: &[String], records: &[PatientRecord]) -> Vec<Vec<f64>> {
        let index: std::collections::HashMap<&str, usize> =
            codes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        records
            .iter()
            .map(|r| {
                let mut row = vec![0.0; codes.len()];
                for code in r.codes() {
                    if let Some(&j) = index.get(code) {
                        row[j] += 1.0;
                    }
                }
                row
            })
            .collect()
    }

    /// Fits standardization on `train`; a column constant on the training split keeps scale 1.
    pub fn fit(train: &[PatientRecord], vocab: &Vocabulary, anchor: &AnchorSpec) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("empty training split".into()));
        }
        let codes: Vec<String> = vocab.codes().iter().filter(|c| !anchor.contains(c)).cloned().collect();
        let raw = Self::raw_counts(&codes, train);
        let n = raw.len() as f64;
        let mut means = vec![0.0; codes.len()];
        for row in &raw {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut scales = vec![0.0; codes.len()];
        for row in &raw {
            for ((s, v), m) in scales.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut scales {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Ok(Self { codes, means, scales })
    }

    pub fn transform(&self, records: &[PatientRecord]) -> CountFeatures {
        let raw = Self::raw_counts(&self.codes, records);
        let n_cols = self.codes.len();
        let mut data = Vec::with_capacity(raw.len() * n_cols);
        for row in raw {
            data.extend(row.iter().zip(&self.means).zip(&self.scales).map(|((v, m), s)| (v - m) / s));
        }
        CountFeatures { n_rows: records.len(), n_cols, data }
    }
}
