use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::PatientRecord;
use crate::util::sha256_hex;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const SEP: u32 = 2;
pub const CLS: u32 = 3;
pub const N_SPECIAL: u32 = 4;

const SPECIAL_NAMES: [&str; N_SPECIAL as usize] = ["[PAD]", "[UNK]", "[SEP]", "[CLS]"];

/// A code needs at least this fraction of all code occurrences to get its own token.
pub const DEFAULT_MIN_FREQUENCY_FRACTION: f64 = 0.0001;

/// Code-to-token map. Ids `0..4` are the special tokens; codes follow in
/// descending corpus frequency, ties broken by code string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabularyFile", into = "VocabularyFile")]
pub struct Vocabulary {
    codes: Vec<String>,
    index: HashMap<String, u32>,
    pub min_frequency_fraction: f64,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    codes: Vec<String>,
    min_frequency_fraction: f64,
}

impl From<VocabularyFile> for Vocabulary {
    fn from(f: VocabularyFile) -> Self {
        Vocabulary::from_codes(f.codes, f.min_frequency_fraction)
    }
}

impl From<Vocabulary> for VocabularyFile {
    fn from(v: Vocabulary) -> Self {
        VocabularyFile {
            codes: v.codes,
            min_frequency_fraction: v.min_frequency_fraction,
        }
    }
}

impl Vocabulary {
    pub fn from_codes(codes: Vec<String>, min_frequency_fraction: f64) -> Self {
        let index = codes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i as u32 + N_SPECIAL))
            .collect();
        Self {
            codes,
            index,
            min_frequency_fraction,
        }
    }

    /// Token count including the special tokens.
    pub fn len(&self) -> usize {
        self.codes.len() + N_SPECIAL as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn contains(&self, code: &str) -> bool {
        self.index.contains_key(code)
    }

    pub fn token_id(&self, code: &str) -> u32 {
        self.index.get(code).copied().unwrap_or(UNK)
    }

    pub fn token_name(&self, id: u32) -> Option<&str> {
        if id < N_SPECIAL {
            Some(SPECIAL_NAMES[id as usize])
        } else {
            self.codes.get((id - N_SPECIAL) as usize).map(String::as_str)
        }
    }

    /// Appends codes that did not pass the frequency threshold (anchor codes must never be [UNK]).
    pub fn force_codes<'a>(&mut self, codes: impl IntoIterator<Item = &'a str>) {
        for code in codes {
            if !self.contains(code) {
                let id = self.len() as u32;
                self.codes.push(code.to_string());
                self.index.insert(code.to_string(), id);
            }
        }
    }

    pub fn hash(&self) -> String {
        let mut buf = String::new();
        for c in &self.codes {
            buf.push_str(c);
            buf.push('\n');
        }
        sha256_hex(buf.as_bytes())
    }
}

pub fn build_vocabulary(records: &[PatientRecord], min_frequency_fraction: f64) -> Vocabulary {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total = 0usize;
    for code in records.iter().flat_map(|r| r.codes()) {
        *counts.entry(code).or_default() += 1;
        total += 1;
    }
    // Inclusive boundary; the relative slack absorbs rounding in fraction * total.
    let threshold = min_frequency_fraction * total as f64 * (1.0 - 1e-12);
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, n)| n as f64 >= threshold)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_codes(
        kept.into_iter().map(|(c, _)| c.to_string()).collect(),
        min_frequency_fraction,
    )
}
