use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cohort::GenotypeMatrix;
use crate::{Error, Result};

/// Centered dosage column and its sum of squares; `None` for a constant column.
fn centered(genotypes: &GenotypeMatrix, j: usize) -> Option<(Vec<f64>, f64)> {
    let col = genotypes.column(j);
    let mean = col.iter().map(|&d| d as f64).sum::<f64>() / col.len() as f64;
    let c: Vec<f64> = col.iter().map(|&d| d as f64 - mean).collect();
    let ss: f64 = c.iter().map(|v| v * v).sum();
    (ss > 0.0).then_some((c, ss))
}

fn r2_centered(a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)) -> f64 {
    let cross: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    (cross * cross / (a.1 * b.1)).min(1.0)
}

/// Squared Pearson correlation of two dosage columns.
pub fn ld_r2(genotypes: &GenotypeMatrix, i: usize, j: usize) -> Result<f64> {
    for v in [i, j] {
        if v >= genotypes.n_variants() {
            return Err(Error::InvalidArgument(format!("variant index {v} out of range")));
        }
    }
    let a = centered(genotypes, i).ok_or_else(|| Error::Degenerate(format!("variant {i} is constant")))?;
    let b = centered(genotypes, j).ok_or_else(|| Error::Degenerate(format!("variant {j} is constant")))?;
    Ok(r2_centered(&a, &b))
}

/// One expansion step: the input plus every variant with `r2 > threshold` to some input
/// variant. Constant columns have no LD partners. Out-of-range indices are ignored.
pub fn ld_expand(variants: &BTreeSet<usize>, genotypes: &GenotypeMatrix, r2_threshold: f64) -> BTreeSet<usize> {
    let m = genotypes.n_variants();
    let mut out: BTreeSet<usize> = variants.iter().copied().filter(|&v| v < m).collect();
    if out.is_empty() {
        return out;
    }
    let cols: Vec<Option<(Vec<f64>, f64)>> = (0..m).map(|j| centered(genotypes, j)).collect();
    for &u in variants.iter().filter(|&&v| v < m) {
        let Some(cu) = &cols[u] else { continue };
        for (v, cv) in cols.iter().enumerate() {
            if let Some(cv) = cv {
                if r2_centered(cu, cv) > r2_threshold {
                    out.insert(v);
                }
            }
        }
    }
    out
}

/// Planted causal variants and their LD neighbours.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthCatalog {
    pub variants: BTreeSet<usize>,
}

impl TruthCatalog {
    pub fn new(variants: BTreeSet<usize>) -> Self {
        Self { variants }
    }

    /// Catalog built from the causal annotations carried by the genotype matrix.
    pub fn from_planted(genotypes: &GenotypeMatrix, r2_threshold: f64) -> Self {
        Self { variants: ld_expand(&genotypes.causal_variants(), genotypes, r2_threshold) }
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }

    pub fn ids(&self, genotypes: &GenotypeMatrix) -> Vec<String> {
        self.variants.iter().map(|&v| genotypes.variants[v].id.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CatalogMatch {
    pub matched: usize,
    pub catalog_size: usize,
    pub proportion: f64,
}

/// A catalog entry counts as reproduced when its LD expansion meets the LD
/// expansion of the significant set. An empty catalog gives proportion 0.
pub fn match_catalog(
    significant: &BTreeSet<usize>,
    catalog: &TruthCatalog,
    genotypes: &GenotypeMatrix,
    r2_threshold: f64,
) -> CatalogMatch {
    let expanded = ld_expand(significant, genotypes, r2_threshold);
    let matched = catalog
        .variants
        .iter()
        .filter(|&&c| {
            let mut single = BTreeSet::new();
            single.insert(c);
            !ld_expand(&single, genotypes, r2_threshold).is_disjoint(&expanded)
        })
        .count();
    let catalog_size = catalog.len();
    let proportion = if catalog_size == 0 { 0.0 } else { matched as f64 / catalog_size as f64 };
    CatalogMatch { matched, catalog_size, proportion }
}
