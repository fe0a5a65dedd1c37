//! Positive-unlabeled anchor labelling and phenotype definitions.
//!
//! A patient is labelled (`s = 1`) when any anchor code appears in any visit.
//! Unlabelled patients may still be cases; an anchor classifier's score
//! `h(x) = p(s=1|x)` ranks them, and the phenotype becomes 1 for labelled
//! patients and `h(x) / c` otherwise.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::cohort::PatientRecord;
use crate::util::{fmt_f64, parse_f64, rng_for};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSpec {
    codes: BTreeSet<String>,
}

impl AnchorSpec {
    /// One or more codes; a patient is labelled if any of them is observed.
    pub fn new<I, S>(codes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let codes: BTreeSet<String> = codes.into_iter().map(Into::into).collect();
        if codes.is_empty() || codes.iter().any(String::is_empty) {
            return Err(Error::InvalidArgument(
                "anchor needs at least one non-empty code".into(),
            ));
        }
        Ok(Self { codes })
    }

    pub fn codes(&self) -> impl Iterator<Item = &str> {
        self.codes.iter().map(String::as_str)
    }

    pub fn contains(&self, code: &str) -> bool {
        self.codes.contains(code)
    }

    /// Occurrences of anchor codes: one per visit per matching code.
    pub fn count_in(&self, record: &PatientRecord) -> usize {
        record
            .visits
            .iter()
            .map(|v| self.codes.iter().filter(|c| v.contains(*c)).count())
            .sum()
    }
}

/// Observed labels `s` for a cohort.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorLabel(pub Vec<u8>);

impl AnchorLabel {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.0.iter().filter(|&&s| s == 1).count()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn select(&self, idx: &[usize]) -> AnchorLabel {
        AnchorLabel(idx.iter().map(|&i| self.0[i]).collect())
    }
}

pub fn label_anchor(records: &[PatientRecord], anchor: &AnchorSpec) -> AnchorLabel {
    AnchorLabel(
        records
            .iter()
            .map(|r| r.codes().any(|c| anchor.contains(c)) as u8)
            .collect(),
    )
}

/// Flips exactly `floor(proportion * positives)` randomly chosen positives to 0.
pub fn inject_label_noise(labels: &AnchorLabel, proportion: f64, seed: u64) -> Result<AnchorLabel> {
    if !(0.0..=1.0).contains(&proportion) {
        return Err(Error::InvalidArgument(format!(
            "noise proportion {proportion} is outside [0, 1]"
        )));
    }
    let positives: Vec<usize> = labels
        .0
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == 1)
        .map(|(i, _)| i)
        .collect();
    let n_flip = ((proportion * positives.len() as f64) + 1e-9).floor() as usize;
    let n_flip = n_flip.min(positives.len());
    let mut out = labels.clone();
    let mut rng = rng_for(seed, 0x6e6f697365);
    for k in sample(&mut rng, positives.len(), n_flip) {
        out.0[positives[k]] = 0;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhenotypeKind {
    Binary,
    Continuous,
}

impl PhenotypeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PhenotypeKind::Binary => "binary",
            PhenotypeKind::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeVector {
    pub scores: Vec<f64>,
    pub kind: PhenotypeKind,
    /// Calibration constant `c = p(s=1|y=1)` used for the unlabelled branch.
    pub c: f64,
}

impl PhenotypeVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> PhenotypeVector {
        PhenotypeVector {
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            kind: self.kind,
            c: self.c,
        }
    }
}

/// `1` for labelled patients, `min(score / c, 1)` otherwise.
pub fn phenotype_from_scores(scores: &[f64], labels: &AnchorLabel, c: f64) -> Result<PhenotypeVector> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidArgument(format!("c = {c} must lie in (0, 1]")));
    }
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::InvalidArgument(format!("score {bad} is outside [0, 1]")));
    }
    let scores = scores
        .iter()
        .zip(&labels.0)
        .map(|(&h, &s)| if s == 1 { 1.0 } else { (h / c).min(1.0) })
        .collect();
    Ok(PhenotypeVector {
        scores,
        kind: PhenotypeKind::Continuous,
        c,
    })
}

/// Binary phenotype: case iff the anchor occurs at least `k` times.
pub fn threshold_phenotype(
    records: &[PatientRecord],
    anchor: &AnchorSpec,
    k: usize,
) -> Result<PhenotypeVector> {
    if k < 1 {
        return Err(Error::InvalidArgument("threshold k must be >= 1".into()));
    }
    Ok(PhenotypeVector {
        scores: records
            .iter()
            .map(|r| if anchor.count_in(r) >= k { 1.0 } else { 0.0 })
            .collect(),
        kind: PhenotypeKind::Binary,
        c: 1.0,
    })
}

/// `patient_id<TAB>score<TAB>kind` with a header row.
pub fn save_phenotype(phenotype: &PhenotypeVector, patient_ids: &[String], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_phenotype(phenotype, patient_ids, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_phenotype(phenotype: &PhenotypeVector, patient_ids: &[String], mut out: impl Write) -> Result<()> {
    if patient_ids.len() != phenotype.len() {
        return Err(Error::Misaligned(format!(
            "{} patient ids for {} scores",
            patient_ids.len(),
            phenotype.len()
        )));
    }
    writeln!(out, "patient_id\tscore\tkind")?;
    for (id, s) in patient_ids.iter().zip(&phenotype.scores) {
        writeln!(out, "{id}\t{}\t{}", fmt_f64(*s), phenotype.kind.as_str())?;
    }
    Ok(())
}

pub fn load_phenotype(path: &Path) -> Result<(Vec<String>, PhenotypeVector)> {
    let mut ids = Vec::new();
    let mut scores = Vec::new();
    let mut kind = None;
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if lineno == 1 || line.is_empty() {
            continue;
        }
        let perr = |m: &str| Error::Parse { line: lineno, message: m.to_string() };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(perr("expected 3 fields"));
        }
        let k = match f[2] {
            "binary" => PhenotypeKind::Binary,
            "continuous" => PhenotypeKind::Continuous,
            _ => return Err(perr("kind must be binary or continuous")),
        };
        if kind.is_some_and(|prev| prev != k) {
            return Err(perr("mixed phenotype kinds"));
        }
        kind = Some(k);
        ids.push(f[0].to_string());
        scores.push(parse_f64(f[1]).ok_or_else(|| perr("bad score"))?);
    }
    Ok((
        ids,
        PhenotypeVector {
            scores,
            kind: kind.unwrap_or(PhenotypeKind::Continuous),
            c: 1.0,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::Visit;
    use proptest::prelude::*;

    fn rec(visits: &[&[&str]]) -> PatientRecord {
        let visits = visits
            .iter()
            .map(|v| v.iter().map(|c| c.to_string()).collect::<Visit>())
            .collect();
        PatientRecord::new("p", visits).unwrap()
    }

    #[test]
    fn anchor_in_middle_visit_labels_patient() {
        let a = AnchorSpec::new(["411.1"]).unwrap();
        let mut visits: Vec<&[&str]> = vec![&["x"]; 7];
        visits[2] = &["x", "411.1"];
        let l = label_anchor(&[rec(&visits), rec(&[&["x"], &["y"]])], &a);
        assert_eq!(l.0, vec![1, 0]);
    }

    #[test]
    fn disjunctive_anchor() {
        let a = AnchorSpec::new(["714.0", "714.1"]).unwrap();
        assert_eq!(label_anchor(&[rec(&[&["714.1"]])], &a).0, vec![1]);
        assert!(AnchorSpec::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn noise_extremes_and_exact_count() {
        let labels = AnchorLabel((0..2000).map(|i| (i % 2) as u8).collect());
        assert_eq!(inject_label_noise(&labels, 0.0, 1).unwrap(), labels);
        assert_eq!(inject_label_noise(&labels, 1.0, 1).unwrap().positives(), 0);
        let a = inject_label_noise(&labels, 0.3, 1).unwrap();
        let b = inject_label_noise(&labels, 0.3, 2).unwrap();
        assert_eq!(a.positives(), 700);
        assert_eq!(b.positives(), 700);
        assert_ne!(a, b);
        assert!(inject_label_noise(&labels, 1.5, 1).is_err());
        assert!(inject_label_noise(&labels, -0.1, 1).is_err());
    }

    #[test]
    fn phenotype_transform_cases() {
        let l = AnchorLabel(vec![1, 0, 0]);
        let p = phenotype_from_scores(&[0.2, 0.3, 0.8], &l, 1.0).unwrap();
        assert_eq!(p.scores, vec![1.0, 0.3, 0.8]);
        let p = phenotype_from_scores(&[0.2, 0.3, 0.8], &l, 0.5).unwrap();
        assert_eq!(p.scores, vec![1.0, 0.6, 1.0]);
        assert!(phenotype_from_scores(&[0.2, 0.3, 0.8], &l, 0.0).is_err());
        assert!(phenotype_from_scores(&[0.2, 0.3, 1.8], &l, 1.0).is_err());
    }

    #[test]
    fn threshold_boundaries() {
        let a = AnchorSpec::new(["A"]).unwrap();
        let r = rec(&[&["A"], &["x"], &["A", "y"]]);
        assert_eq!(threshold_phenotype(std::slice::from_ref(&r), &a, 3).unwrap().scores, vec![0.0]);
        assert_eq!(threshold_phenotype(std::slice::from_ref(&r), &a, 2).unwrap().scores, vec![1.0]);
        assert!(threshold_phenotype(&[r], &a, 0).is_err());
    }

    #[test]
    fn disjunctive_codes_in_one_visit_count_twice() {
        let a = AnchorSpec::new(["714.0", "714.1"]).unwrap();
        assert_eq!(a.count_in(&rec(&[&["714.0", "714.1"]])), 2);
    }

    #[test]
    fn phenotype_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ph.tsv");
        let p = PhenotypeVector { scores: vec![0.1, 1.0 / 3.0], kind: PhenotypeKind::Continuous, c: 1.0 };
        save_phenotype(&p, &["a".into(), "b".into()], &path).unwrap();
        let (ids, q) = load_phenotype(&path).unwrap();
        assert_eq!(ids, vec!["a", "b"]);
        assert_eq!(q, p);
    }

    proptest! {
        #[test]
        fn labelled_patients_score_one(scores in prop::collection::vec(0.0f64..=1.0, 1..50), seed in 0u64..1000) {
            let labels = AnchorLabel(scores.iter().enumerate().map(|(i, _)| ((i as u64 * 7 + seed) % 3 == 0) as u8).collect());
            let p = phenotype_from_scores(&scores, &labels, 0.7).unwrap();
            for (x, &s) in p.scores.iter().zip(&labels.0) {
                if s == 1 { prop_assert_eq!(*x, 1.0); } else { prop_assert!((0.0..=1.0).contains(x)); }
            }
        }

        #[test]
        fn unlabelled_order_invariant_in_c(scores in prop::collection::vec(0.0f64..=0.25, 2..40)) {
            let labels = AnchorLabel(vec![0; scores.len()]);
            let base = phenotype_from_scores(&scores, &labels, 1.0).unwrap();
            for c in [0.25, 0.5] {
                let p = phenotype_from_scores(&scores, &labels, c).unwrap();
                for i in 0..scores.len() {
                    for j in 0..scores.len() {
                        prop_assert_eq!(base.scores[i] < base.scores[j], p.scores[i] < p.scores[j]);
                    }
                }
            }
        }

        #[test]
        fn noise_only_touches_positives(bits in prop::collection::vec(0u8..=1, 0..200), prop in 0.0f64..=1.0, seed in 0u64..50) {
            let labels = AnchorLabel(bits);
            let noisy = inject_label_noise(&labels, prop, seed).unwrap();
            for (a, b) in labels.0.iter().zip(&noisy.0) {
                prop_assert!(*b <= *a);
            }
            let expected = labels.positives() - ((prop * labels.positives() as f64) + 1e-9).floor() as usize;
            prop_assert_eq!(noisy.positives(), expected);
        }
    }
}
