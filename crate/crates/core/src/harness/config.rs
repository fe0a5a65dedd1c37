use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifiers::{LogisticConfig, TransformerConfig};
use crate::cohort::{GeneratorConfig, DEFAULT_MIN_FREQUENCY_FRACTION, N_PCS};
use crate::gwas::GENOME_WIDE_ALPHA;
use crate::util::sha256_hex;
use crate::{Error, Result};

/// A phenotyping method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKind {
    AnchorBert,
    AnchorLr,
    Pheprob,
    /// Case iff anchor codes occur at least `k` times.
    Threshold(usize),
}

impl ModelKind {
    /// Whether the method is a trained anchor classifier.
    pub fn is_classifier(self) -> bool {
        matches!(self, ModelKind::AnchorBert | ModelKind::AnchorLr)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::AnchorBert => write!(f, "anchorbert"),
            ModelKind::AnchorLr => write!(f, "anchor-lr"),
            ModelKind::Pheprob => write!(f, "pheprob"),
            ModelKind::Threshold(k) => write!(f, "threshold-{k}"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anchorbert" => Ok(ModelKind::AnchorBert),
            "anchor-lr" => Ok(ModelKind::AnchorLr),
            "pheprob" => Ok(ModelKind::Pheprob),
            _ => match s.strip_prefix("threshold-").and_then(|k| k.parse::<usize>().ok()) {
                Some(k) if k >= 1 => Ok(ModelKind::Threshold(k)),
                _ => Err(Error::InvalidArgument(format!(
                    "unknown model {s:?}; expected anchorbert, anchor-lr, pheprob or threshold-<k>"
                ))),
            },
        }
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(m: ModelKind) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train: 0.6, validation: 0.2, test: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GwasSettings {
    pub alpha: f64,
    pub r2_threshold: f64,
    pub n_pcs: usize,
}

impl Default for GwasSettings {
    fn default() -> Self {
        Self { alpha: GENOME_WIDE_ALPHA, r2_threshold: 0.5, n_pcs: N_PCS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PheprobConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PheprobConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base seed; repeat `r` uses `seed + r`.
    pub seed: u64,
    pub repeats: usize,
    pub models: Vec<ModelKind>,
    pub noise_proportions: Vec<f64>,
    pub ablation_proportions: Vec<f64>,
    /// Removal draws per ablation proportion.
    pub ablation_repeats: usize,
    /// Label frequency `c = p(s=1 | y=1)` used in the phenotype transform.
    pub label_frequency: f64,
    pub min_code_frequency: f64,
    pub split: SplitConfig,
    pub gwas: GwasSettings,
    pub cohort: GeneratorConfig,
    pub transformer: TransformerConfig,
    pub logistic: LogisticConfig,
    pub pheprob: PheprobConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            repeats: 10,
            models: vec![
                ModelKind::AnchorBert,
                ModelKind::AnchorLr,
                ModelKind::Pheprob,
                ModelKind::Threshold(1),
                ModelKind::Threshold(2),
                ModelKind::Threshold(3),
            ],
            noise_proportions: vec![0.0, 0.2, 0.4, 0.6, 0.8],
            ablation_proportions: vec![0.0, 0.25, 0.5, 0.75, 0.9, 1.0],
            ablation_repeats: 10,
            label_frequency: 1.0,
            min_code_frequency: DEFAULT_MIN_FREQUENCY_FRACTION,
            split: SplitConfig::default(),
            gwas: GwasSettings::default(),
            cohort: GeneratorConfig::default(),
            transformer: TransformerConfig::default(),
            logistic: LogisticConfig::default(),
            pheprob: PheprobConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let s = &self.split;
        if [s.train, s.validation, s.test].iter().any(|v| !(0.0..=1.0).contains(v))
            || (s.train + s.validation + s.test - 1.0).abs() > 1e-9
        {
            return bad(format!("split ratios {s:?} must be in [0, 1] and sum to 1"));
        }
        if s.train == 0.0 || s.validation == 0.0 {
            return bad("train and validation splits must be non-empty".into());
        }
        if self.repeats == 0 || self.ablation_repeats == 0 {
            return bad("repeat counts must be at least 1".into());
        }
        if self.models.is_empty() {
            return bad("model roster is empty".into());
        }
        for (name, props) in [("noise", &self.noise_proportions), ("ablation", &self.ablation_proportions)] {
            if let Some(p) = props.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return bad(format!("{name} proportion {p} outside [0, 1]"));
            }
        }
        if !(self.label_frequency > 0.0 && self.label_frequency <= 1.0) {
            return bad(format!("label_frequency {} outside (0, 1]", self.label_frequency));
        }
        if !(0.0..=1.0).contains(&self.gwas.alpha) || !(0.0..=1.0).contains(&self.gwas.r2_threshold) {
            return bad("gwas alpha and r2_threshold must lie in [0, 1]".into());
        }
        if self.gwas.n_pcs > N_PCS {
            return bad(format!("at most {N_PCS} principal components"));
        }
        self.cohort.validate()?;
        self.transformer.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Short digest of the canonical TOML serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_toml()?.as_bytes())[..16].to_string())
    }

    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        self.seed.wrapping_add(repeat as u64)
    }
}
