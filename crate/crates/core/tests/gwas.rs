use std::collections::BTreeSet;

use anchorpheno::anchor::{PhenotypeKind, PhenotypeVector};
use anchorpheno::cohort::{generate_cohort, GeneratorConfig, GenotypeMatrix, VariantInfo};
use anchorpheno::gwas::{
    ld_expand, ld_r2, linear_assoc, load_sumstats, logistic_assoc, match_catalog, run_gwas, save_sumstats, FitStatus,
    TestKind, TruthCatalog,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn dosages(rng: &mut ChaCha8Rng, n: usize, maf: f64) -> Vec<u8> {
    (0..n).map(|_| rng.random_bool(maf) as u8 + rng.random_bool(maf) as u8).collect()
}

/// Plain Newton-Raphson on the unpenalized logistic likelihood, solved by Gaussian elimination.
fn newton_logistic(cols: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (p, n) = (cols.len(), y.len());
    let mut beta = vec![0.0; p];
    let mut info = vec![vec![0.0; p]; p];
    for _ in 0..50 {
        let mu: Vec<f64> = (0..n)
            .map(|i| 1.0 / (1.0 + (-(0..p).map(|j| cols[j][i] * beta[j]).sum::<f64>()).exp()))
            .collect();
        let grad: Vec<f64> = (0..p).map(|j| (0..n).map(|i| cols[j][i] * (y[i] - mu[i])).sum()).collect();
        info = (0..p)
            .map(|a| (0..p).map(|b| (0..n).map(|i| cols[a][i] * cols[b][i] * mu[i] * (1.0 - mu[i])).sum()).collect())
            .collect();
        let step = gauss(info.clone(), grad);
        beta.iter_mut().zip(&step).for_each(|(b, s)| *b += s);
    }
    let inv_diag: Vec<f64> = (0..p)
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            gauss(info.clone(), e)[j]
        })
        .collect();
    (beta, inv_diag.iter().map(|v| v.sqrt()).collect())
}

fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

#[test]
fn logistic_matches_newton_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 1500;
    let g = dosages(&mut rng, n, 0.3);
    let cov: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let eta = -1.0 + 0.4 * g[i] as f64 + 0.5 * cov[0][i];
            rng.random_bool(1.0 / (1.0 + (-eta).exp())) as u8 as f64
        })
        .collect();
    let r = logistic_assoc("v", &y, &g, &cov).unwrap();
    let cols: Vec<Vec<f64>> = [vec![1.0; n], g.iter().map(|&v| v as f64).collect()]
        .into_iter()
        .chain(cov.iter().cloned())
        .collect();
    let (beta, se) = newton_logistic(&cols, &y);
    assert_eq!(r.test, TestKind::Logistic);
    assert!(((r.beta - beta[1]) / beta[1]).abs() < 1e-8, "{} vs {}", r.beta, beta[1]);
    assert!(((r.standard_error - se[1]) / se[1]).abs() < 1e-6);
}

#[test]
fn run_gwas_picks_test_by_phenotype_kind() {
    let cfg = GeneratorConfig { n_patients: 600, n_variants: 20, causal_variants: vec![], ..GeneratorConfig::default() };
    let c = generate_cohort(&cfg, 2).unwrap();
    let binary = PhenotypeVector { scores: c.truth.y.iter().map(|&v| v as f64).collect(), kind: PhenotypeKind::Binary, c: 1.0 };
    let cont = PhenotypeVector { kind: PhenotypeKind::Continuous, ..binary.clone() };
    let rb = run_gwas(&binary, &c.genotypes, &c.covariates, 0.05).unwrap();
    let rc = run_gwas(&cont, &c.genotypes, &c.covariates, 0.05).unwrap();
    assert!(rb.results.iter().all(|r| r.test == TestKind::Logistic));
    assert!(rc.results.iter().all(|r| r.test == TestKind::Linear));
    assert_eq!(rb.results.len(), 20);
    // Significant set is exactly the usable results under alpha.
    let expect: BTreeSet<usize> =
        rc.results.iter().enumerate().filter(|(_, r)| r.is_usable() && r.p_value < 0.05).map(|(i, _)| i).collect();
    assert_eq!(rc.significant, expect);
}

#[test]
fn sumstats_round_trip() {
    let cfg = GeneratorConfig { n_patients: 300, n_variants: 12, causal_variants: vec![], ..GeneratorConfig::default() };
    let c = generate_cohort(&cfg, 8).unwrap();
    let ph = PhenotypeVector { scores: c.truth.liability.clone(), kind: PhenotypeKind::Continuous, c: 1.0 };
    let res = run_gwas(&ph, &c.genotypes, &c.covariates, 5e-8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.tsv");
    save_sumstats(&res.results, &path).unwrap();
    let back = load_sumstats(&path).unwrap();
    assert_eq!(back.len(), res.results.len());
    for (a, b) in back.iter().zip(&res.results) {
        assert_eq!(a.variant_id, b.variant_id);
        assert_eq!(a.beta.to_bits(), b.beta.to_bits());
        assert_eq!(a.p_value.to_bits(), b.p_value.to_bits());
    }
}

fn matrix(columns: Vec<Vec<u8>>) -> GenotypeMatrix {
    let variants = (0..columns.len())
        .map(|i| VariantInfo { id: format!("v{i}"), maf: 0.3, effect: (i == 0).then_some(0.5), ld_block: i })
        .collect();
    GenotypeMatrix::from_columns(columns, variants).unwrap()
}

#[test]
fn ld_expansion_and_catalog_matching() {
    let a = vec![0, 1, 2, 1, 0, 2, 1, 0];
    let mut b = a.clone();
    b[0] = 1; // almost a copy
    let c = vec![2, 0, 0, 1, 2, 0, 1, 2];
    let constant = vec![1; 8];
    let g = matrix(vec![a, b, c, constant]);
    assert!((ld_r2(&g, 0, 0).unwrap() - 1.0).abs() < 1e-12);
    assert!(ld_r2(&g, 0, 1).unwrap() > 0.8);
    assert!(ld_r2(&g, 0, 3).is_err());
    let expanded = ld_expand(&BTreeSet::from([0]), &g, 0.8);
    assert!(expanded.contains(&0) && expanded.contains(&1) && !expanded.contains(&3));

    let catalog = TruthCatalog::from_planted(&g, 0.8);
    assert!(catalog.variants.contains(&0) && catalog.variants.contains(&1));
    // A hit on the LD partner alone still matches the causal entry.
    let m = match_catalog(&BTreeSet::from([1]), &catalog, &g, 0.8);
    assert_eq!(m.matched, m.catalog_size);
    assert_eq!(match_catalog(&BTreeSet::new(), &catalog, &g, 0.8).matched, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linear_test_is_affine_equivariant(seed in 0u64..1000, scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 120;
        let g = dosages(&mut rng, n, 0.35);
        let cov: Vec<Vec<f64>> = vec![(0..n).map(|_| rng.sample(StandardNormal)).collect()];
        let y: Vec<f64> = (0..n).map(|i| 0.3 * g[i] as f64 + rng.sample::<f64, _>(StandardNormal)).collect();
        let y2: Vec<f64> = y.iter().map(|v| scale * v + shift).collect();
        let (a, b) = (linear_assoc("v", &y, &g, &cov).unwrap(), linear_assoc("v", &y2, &g, &cov).unwrap());
        prop_assume!(a.status == FitStatus::Ok);
        prop_assert!((b.beta - scale * a.beta).abs() <= 1e-9 * (1.0 + (scale * a.beta).abs()));
        prop_assert!((b.p_value - a.p_value).abs() <= 1e-9 * (1.0 + a.p_value));
    }

    #[test]
    fn p_values_are_probabilities(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 80;
        let g = dosages(&mut rng, n, 0.2);
        let y: Vec<f64> = (0..n).map(|_| rng.random_bool(0.4) as u8 as f64).collect();
        for r in [linear_assoc("v", &y, &g, &[]).unwrap(), logistic_assoc("v", &y, &g, &[]).unwrap()] {
            prop_assert!(!r.is_usable() || (0.0..=1.0).contains(&r.p_value));
        }
    }
}
