//! Tab-separated cohort, genotype, truth and covariate files.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{
    CohortTruth, CovariateRow, CovariateTable, GenotypeMatrix, PatientRecord, VariantInfo, Visit,
    N_PCS,
};
use crate::util::{fmt_f64, parse_f64};
use crate::{Error, Result};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = fs::File::open(path)?;
    Ok(BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

/// One patient per line: `patient_id<TAB>code,code<TAB>code...`.
pub fn write_cohort(records: &[PatientRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        write!(out, "{}", r.patient_id)?;
        for visit in &r.visits {
            let codes: Vec<&str> = visit.iter().map(String::as_str).collect();
            write!(out, "\t{}", codes.join(","))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_cohort(records: &[PatientRecord], path: &Path) -> Result<()> {
    for r in records {
        if r.patient_id.contains(['\t', '\n']) || r.codes().any(|c| c.contains(['\t', ',', '\n'])) {
            return Err(Error::InvalidArgument(format!(
                "patient `{}` contains a separator character",
                r.patient_id
            )));
        }
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_cohort(records, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn parse_cohort(text: impl BufRead) -> Result<Vec<PatientRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default();
        if id.is_empty() {
            return Err(parse_err(lineno, "empty patient id"));
        }
        let mut visits = Vec::new();
        for field in fields {
            let visit: Visit = field.split(',').map(str::to_string).collect();
            if visit.iter().any(String::is_empty) {
                return Err(parse_err(lineno, format!("empty code in visit {:?}", field)));
            }
            visits.push(visit);
        }
        if visits.is_empty() {
            return Err(parse_err(lineno, format!("patient `{id}` has no visits")));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicatePatient(id.to_string()));
        }
        records.push(PatientRecord::new(id, visits).map_err(|e| parse_err(lineno, e.to_string()))?);
    }
    Ok(records)
}

pub fn load_cohort(path: &Path) -> Result<Vec<PatientRecord>> {
    parse_cohort(BufReader::new(fs::File::open(path)?))
}

/// Writes `genotypes.tsv`-style dosages and the per-variant metadata sidecar.
pub fn save_genotypes(
    genotypes: &GenotypeMatrix,
    patient_ids: &[String],
    path: &Path,
    metadata_path: &Path,
) -> Result<()> {
    if patient_ids.len() != genotypes.n_patients() {
        return Err(Error::Misaligned(format!(
            "{} patient ids for {} genotype rows",
            patient_ids.len(),
            genotypes.n_patients()
        )));
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "patient_id")?;
    for v in &genotypes.variants {
        write!(out, "\t{}", v.id)?;
    }
    writeln!(out)?;
    let mut row = String::with_capacity(2 * genotypes.n_variants() + 16);
    for (p, id) in patient_ids.iter().enumerate() {
        row.clear();
        row.push_str(id);
        for v in 0..genotypes.n_variants() {
            row.push('\t');
            row.push((b'0' + genotypes.get(p, v)) as char);
        }
        writeln!(out, "{row}")?;
    }
    out.flush()?;

    let mut meta = BufWriter::new(fs::File::create(metadata_path)?);
    writeln!(meta, "variant_id\tmaf\tcausal\teffect\tld_block")?;
    for v in &genotypes.variants {
        writeln!(
            meta,
            "{}\t{}\t{}\t{}\t{}",
            v.id,
            fmt_f64(v.maf),
            v.effect.is_some() as u8,
            fmt_f64(v.effect.unwrap_or(0.0)),
            v.ld_block
        )?;
    }
    meta.flush()?;
    Ok(())
}

/// Returns patient ids in file order and the genotype matrix.
pub fn load_genotypes(path: &Path, metadata_path: &Path) -> Result<(Vec<String>, GenotypeMatrix)> {
    let mut meta_rows = Vec::new();
    for (lineno, line) in lines(metadata_path)? {
        let line = line?;
        if lineno == 1 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(parse_err(lineno, "expected 5 metadata fields"));
        }
        let num = |s: &str| parse_f64(s).ok_or_else(|| parse_err(lineno, format!("bad number {s:?}")));
        let causal = match f[2] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(lineno, format!("bad causal flag {other:?}"))),
        };
        let effect = num(f[3])?;
        meta_rows.push(VariantInfo {
            id: f[0].to_string(),
            maf: num(f[1])?,
            effect: causal.then_some(effect),
            ld_block: f[4]
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad block {:?}", f[4])))?,
        });
    }

    let mut ids = Vec::new();
    let mut columns: Vec<Vec<u8>> = Vec::new();
    for (lineno, line) in lines(path)? {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let first = fields.next().unwrap_or_default();
        if lineno == 1 {
            let header: Vec<&str> = fields.collect();
            if header.len() != meta_rows.len()
                || header.iter().zip(&meta_rows).any(|(h, m)| *h != m.id)
            {
                return Err(parse_err(1, "genotype header does not match variant metadata"));
            }
            columns = vec![Vec::new(); header.len()];
            continue;
        }
        ids.push(first.to_string());
        let mut count = 0;
        for (col, field) in columns.iter_mut().zip(fields.by_ref()) {
            let g = match field {
                "0" => 0,
                "1" => 1,
                "2" => 2,
                other => return Err(parse_err(lineno, format!("dosage {other:?} not in {{0,1,2}}"))),
            };
            col.push(g);
            count += 1;
        }
        if count != columns.len() || fields.next().is_some() {
            return Err(parse_err(lineno, "wrong number of genotype fields"));
        }
    }
    Ok((ids, GenotypeMatrix::from_columns(columns, meta_rows)?))
}

pub fn save_truth(truth: &CohortTruth, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "patient_id\ty\tliability")?;
    for ((id, y), l) in truth.patient_ids.iter().zip(&truth.y).zip(&truth.liability) {
        writeln!(out, "{id}\t{y}\t{}", fmt_f64(*l))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `(patient_id, y, liability)` rows.
pub fn load_truth(path: &Path) -> Result<Vec<(String, u8, f64)>> {
    let mut rows = Vec::new();
    for (lineno, line) in lines(path)? {
        let line = line?;
        if lineno == 1 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(parse_err(lineno, "expected 3 fields"));
        }
        let y = match f[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(lineno, format!("bad label {other:?}"))),
        };
        let l = parse_f64(f[2]).ok_or_else(|| parse_err(lineno, "bad liability"))?;
        rows.push((f[0].to_string(), y, l));
    }
    Ok(rows)
}

pub fn save_covariates(covariates: &CovariateTable, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write!(out, "patient_id\tsex\tage")?;
    for k in 1..=N_PCS {
        write!(out, "\tpc{k}")?;
    }
    writeln!(out)?;
    for (id, row) in covariates.patient_ids.iter().zip(&covariates.rows) {
        write!(out, "{id}\t{}\t{}", row.sex, fmt_f64(row.age))?;
        for pc in &row.pcs {
            write!(out, "\t{}", fmt_f64(*pc))?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_covariates(path: &Path) -> Result<CovariateTable> {
    let mut patient_ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in lines(path)? {
        let line = line?;
        if lineno == 1 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 + N_PCS {
            return Err(parse_err(lineno, format!("expected {} fields", 3 + N_PCS)));
        }
        let num = |s: &str| {
            parse_f64(s)
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(lineno, format!("bad number {s:?}")))
        };
        let sex = match f[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(lineno, format!("bad sex {other:?}"))),
        };
        let mut pcs = [0.0; N_PCS];
        for (k, pc) in pcs.iter_mut().enumerate() {
            *pc = num(f[3 + k])?;
        }
        if !seen.insert(f[0].to_string()) {
            return Err(Error::DuplicatePatient(f[0].to_string()));
        }
        patient_ids.push(f[0].to_string());
        rows.push(CovariateRow {
            sex,
            age: num(f[2])?,
            pcs,
        });
    }
    Ok(CovariateTable { patient_ids, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, GeneratorConfig};

    #[test]
    fn empty_input_is_empty_cohort() {
        assert!(parse_cohort(&b""[..]).unwrap().is_empty());
    }

    #[test]
    fn parses_two_visits() {
        let recs = parse_cohort(&b"p1\tA,B\tC\n"[..]).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].visit_count(), 2);
        assert_eq!(recs[0].code_count(), 3);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_cohort(&b"p1\tA\np2\tA,,B\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_cohort(&b"p1\tA\np2\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_patient_rejected() {
        let err = parse_cohort(&b"p1\tA\np1\tB\n"[..]).unwrap_err();
        assert!(matches!(err, Error::DuplicatePatient(ref id) if id == "p1"));
    }

    #[test]
    fn generated_files_round_trip() {
        let cfg = GeneratorConfig { n_patients: 1000, n_variants: 12, ..Default::default() };
        let cfg = GeneratorConfig {
            causal_variants: vec![crate::cohort::CausalVariant { index: 3, beta: 0.4, maf: None }],
            ..cfg
        };
        let c = generate_cohort(&cfg, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = |name: &str| dir.path().join(name);

        save_cohort(&c.records, &p("cohort.tsv")).unwrap();
        assert_eq!(load_cohort(&p("cohort.tsv")).unwrap(), c.records);

        save_genotypes(&c.genotypes, &c.truth.patient_ids, &p("g.tsv"), &p("v.tsv")).unwrap();
        let (ids, g) = load_genotypes(&p("g.tsv"), &p("v.tsv")).unwrap();
        assert_eq!(ids, c.truth.patient_ids);
        assert_eq!(g, c.genotypes);

        save_covariates(&c.covariates, &p("cov.tsv")).unwrap();
        assert_eq!(load_covariates(&p("cov.tsv")).unwrap(), c.covariates);

        save_truth(&c.truth, &p("truth.tsv")).unwrap();
        let truth = load_truth(&p("truth.tsv")).unwrap();
        assert_eq!(truth.len(), 1000);
        assert!(truth.iter().zip(&c.truth.liability).all(|(row, &l)| row.2 == l));
    }

    #[test]
    fn genotype_loader_rejects_bad_dosage() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.tsv");
        let v = dir.path().join("v.tsv");
        fs::write(&v, "variant_id\tmaf\tcausal\teffect\tld_block\nv1\t0.3\t0\t0\t0\n").unwrap();
        fs::write(&g, "patient_id\tv1\np1\t3\n").unwrap();
        assert!(matches!(load_genotypes(&g, &v), Err(Error::Parse { line: 2, .. })));
    }
}
