use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelKind, SplitConfig};
use crate::anchor::{label_anchor, phenotype_from_scores, threshold_phenotype, AnchorLabel, AnchorSpec, PhenotypeVector};
use crate::classifiers::transformer::{load_checkpoint, save_checkpoint};
use crate::classifiers::{
    train_logistic, train_transformer, AnchorLogistic, CountFeaturizer, TransformerConfig, TransformerModel,
};
use crate::cohort::{build_vocabulary, PatientRecord, Vocabulary};
use crate::pheprob::{fit_binomial_mixture, pheprob_phenotype, BinomialMixtureParams};
use crate::util::rng_for;
use crate::{Error, Result};

const STREAM_SPLIT: u64 = 0x73706c6974;

/// Patient indices per split, each ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_patients(n: usize, ratios: &SplitConfig, seed: u64) -> Result<Split> {
    let n_train = (n as f64 * ratios.train).round() as usize;
    let n_val = ((n as f64 * ratios.validation).round() as usize).min(n - n_train.min(n));
    if n_train == 0 || n_val == 0 || n_train + n_val > n {
        return Err(Error::InvalidArgument(format!("cannot split {n} patients by {ratios:?}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, STREAM_SPLIT));
    let take = |range: std::ops::Range<usize>| {
        let mut v = order[range].to_vec();
        v.sort_unstable();
        v
    };
    Ok(Split { train: take(0..n_train), validation: take(n_train..n_train + n_val), test: take(n_train + n_val..n) })
}

pub(crate) fn subset<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Everything the models see: records, anchor labels, the split and the training vocabulary.
#[derive(Debug, Clone)]
pub struct PreparedCohort {
    pub records: Vec<PatientRecord>,
    pub anchor: AnchorSpec,
    pub labels: AnchorLabel,
    pub split: Split,
    pub vocab: Vocabulary,
}

impl PreparedCohort {
    pub fn new(records: Vec<PatientRecord>, config: &ExperimentConfig, seed: u64) -> Result<Self> {
        let anchor = AnchorSpec::new(config.cohort.anchor_codes.iter().cloned())?;
        let labels = label_anchor(&records, &anchor);
        let split = split_patients(records.len(), &config.split, seed)?;
        let mut vocab = build_vocabulary(&subset(&records, &split.train), config.min_code_frequency);
        vocab.force_codes(anchor.codes());
        Ok(Self { records, anchor, labels, split, vocab })
    }

    pub fn records_in(&self, idx: &[usize]) -> Vec<PatientRecord> {
        subset(&self.records, idx)
    }

    pub fn labels_in(&self, idx: &[usize]) -> AnchorLabel {
        self.labels.select(idx)
    }

    /// Total code count and anchor-visit count per patient.
    pub fn pheprob_counts(&self) -> (Vec<u32>, Vec<u32>) {
        self.records
            .iter()
            .map(|r| (r.code_count() as u32, self.anchor.count_in(r) as u32))
            .unzip()
    }
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    AnchorBert(Box<TransformerModel>),
    AnchorLr(AnchorLogistic),
    Pheprob(BinomialMixtureParams),
    Threshold(usize),
}

/// Fits one method. `train_labels` are the (possibly corrupted) anchor labels of
/// the training split; validation always uses the observed labels.
pub fn train_model(
    kind: ModelKind,
    data: &PreparedCohort,
    train_labels: &AnchorLabel,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<TrainedModel> {
    match kind {
        ModelKind::AnchorBert => {
            let tcfg = TransformerConfig { seed, ..config.transformer.clone() };
            let trained = train_transformer(
                &data.records_in(&data.split.train),
                train_labels,
                &data.records_in(&data.split.validation),
                &data.labels_in(&data.split.validation),
                &data.vocab,
                &data.anchor,
                &tcfg,
            )?;
            Ok(TrainedModel::AnchorBert(Box::new(trained.model)))
        }
        ModelKind::AnchorLr => {
            let train = data.records_in(&data.split.train);
            let featurizer = CountFeaturizer::fit(&train, &data.vocab, &data.anchor)?;
            let lc = &config.logistic;
            let model = train_logistic(&featurizer.transform(&train), train_labels, lc.l2, lc.tol, lc.max_iter)?;
            Ok(TrainedModel::AnchorLr(AnchorLogistic { featurizer, model }))
        }
        ModelKind::Pheprob => {
            let (total, anchor) = data.pheprob_counts();
            let params = fit_binomial_mixture(&total, &anchor, config.pheprob.tol, config.pheprob.max_iter, seed)?;
            Ok(TrainedModel::Pheprob(params))
        }
        ModelKind::Threshold(k) => Ok(TrainedModel::Threshold(k)),
    }
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::AnchorBert(_) => ModelKind::AnchorBert,
            TrainedModel::AnchorLr(_) => ModelKind::AnchorLr,
            TrainedModel::Pheprob(_) => ModelKind::Pheprob,
            TrainedModel::Threshold(k) => ModelKind::Threshold(*k),
        }
    }

    /// Classifier output `h(x)`; only defined for anchor classifiers.
    pub fn anchor_scores(&self, records: &[PatientRecord]) -> Result<Vec<f64>> {
        match self {
            TrainedModel::AnchorBert(m) => m.predict(records),
            TrainedModel::AnchorLr(m) => m.predict(records),
            other => Err(Error::InvalidArgument(format!("{} is not an anchor classifier", other.kind()))),
        }
    }

    /// Phenotype for `records`, whose observed anchor labels are `labels`.
    pub fn phenotype(
        &self,
        records: &[PatientRecord],
        labels: &AnchorLabel,
        anchor: &AnchorSpec,
        label_frequency: f64,
    ) -> Result<PhenotypeVector> {
        match self {
            TrainedModel::AnchorBert(_) | TrainedModel::AnchorLr(_) => {
                phenotype_from_scores(&self.anchor_scores(records)?, labels, label_frequency)
            }
            TrainedModel::Pheprob(params) => {
                let (total, counts): (Vec<u32>, Vec<u32>) =
                    records.iter().map(|r| (r.code_count() as u32, anchor.count_in(r) as u32)).unzip();
                pheprob_phenotype(params, &total, &counts)
            }
            TrainedModel::Threshold(k) => threshold_phenotype(records, anchor, *k),
        }
    }
}

const MODEL_FORMAT: &str = "anchorpheno-model/1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    model: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    logistic: Option<AnchorLogistic>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pheprob: Option<BinomialMixtureParams>,
}

/// Writes a model file; transformers use the checkpoint format.
pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let file = match model {
        TrainedModel::AnchorBert(m) => return save_checkpoint(m, path),
        TrainedModel::AnchorLr(m) => ModelFile { format: MODEL_FORMAT.into(), model: model.kind(), logistic: Some(m.clone()), pheprob: None },
        TrainedModel::Pheprob(p) => ModelFile { format: MODEL_FORMAT.into(), model: model.kind(), logistic: None, pheprob: Some(p.clone()) },
        TrainedModel::Threshold(_) => ModelFile { format: MODEL_FORMAT.into(), model: model.kind(), logistic: None, pheprob: None },
    };
    let json = serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if value.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
        return Ok(TrainedModel::AnchorBert(Box::new(load_checkpoint(path)?)));
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let missing = || Error::Checkpoint(format!("model file for {} is missing its parameters", file.model));
    Ok(match file.model {
        ModelKind::AnchorLr => TrainedModel::AnchorLr(file.logistic.clone().ok_or_else(missing)?),
        ModelKind::Pheprob => TrainedModel::Pheprob(file.pheprob.clone().ok_or_else(missing)?),
        ModelKind::Threshold(k) => TrainedModel::Threshold(k),
        ModelKind::AnchorBert => return Err(Error::Checkpoint("transformer stored in generic model format".into())),
    })
}
