use rand::seq::SliceRandom;

use super::model::bce_with_logit;
use super::{TransformerConfig, TransformerModel};
use crate::anchor::{AnchorLabel, AnchorSpec};
use crate::cohort::{EncodedSequence, PatientRecord, Vocabulary};
use crate::metrics::average_precision;
use crate::util::{rng_for, sigmoid};
use crate::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-6;

/// Learning-rate multiplier at training progress `x` in [0, 1]: linear warmup
/// over the first `warmup` fraction, then linear decay to zero.
pub fn warmup_linear(x: f64, warmup: f64) -> f64 {
    if warmup > 0.0 && x < warmup {
        x / warmup
    } else {
        ((x - 1.0) / (warmup - 1.0)).max(0.0)
    }
}

/// Adam without bias correction, per-tensor gradient clipping and decoupled weight decay.
struct BertAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    t_total: usize,
}

impl BertAdam {
    fn new(n: usize, t_total: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0, t_total }
    }

    fn update(&mut self, model: &mut TransformerModel, grad: &mut [f64]) {
        let cfg = &model.config;
        let lr = cfg.learning_rate * warmup_linear(self.step as f64 / self.t_total as f64, cfg.warmup_proportion);
        for t in &model.layout.tensors {
            let r = t.range();
            let norm = grad[r.clone()].iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > cfg.max_grad_norm {
                let s = cfg.max_grad_norm / norm;
                grad[r.clone()].iter_mut().for_each(|g| *g *= s);
            }
            let decay = if t.decay { cfg.weight_decay } else { 0.0 };
            for i in r {
                let g = grad[i];
                self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                let step = self.m[i] / (self.v[i].sqrt() + ADAM_EPS) + decay * model.params[i];
                model.params[i] -= lr * step;
            }
        }
        self.step += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    /// `None` when the validation labels have no positives.
    pub validation_auprc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedTransformer {
    /// Parameters from the epoch with the best validation AUPRC.
    pub model: TransformerModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainedTransformer {
    pub fn best(&self) -> &EpochStats {
        &self.history[self.best_epoch]
    }
}

fn evaluate(model: &TransformerModel, seqs: &[EncodedSequence], labels: &AnchorLabel) -> Result<(f64, Option<f64>)> {
    let mut loss = 0.0;
    let mut scores = Vec::with_capacity(seqs.len());
    for (seq, &y) in seqs.iter().zip(labels.as_slice()) {
        let logit = model.logit(seq)?;
        loss += bce_with_logit(logit, y as f64).0;
        scores.push(sigmoid(logit));
    }
    let auprc = if labels.positives() > 0 { Some(average_precision(&scores, labels.as_slice())?) } else { None };
    Ok((loss / seqs.len() as f64, auprc))
}

/// Trains with mini-batch BertAdam for `n_epochs` and keeps the checkpoint with
/// the best validation AUPRC (lowest validation loss if validation has no positives).
pub fn train_transformer(
    train: &[PatientRecord],
    train_labels: &AnchorLabel,
    validation: &[PatientRecord],
    validation_labels: &AnchorLabel,
    vocab: &Vocabulary,
    anchor: &AnchorSpec,
    config: &TransformerConfig,
) -> Result<TrainedTransformer> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::InvalidArgument("training and validation splits must be non-empty".into()));
    }
    if train.len() != train_labels.len() || validation.len() != validation_labels.len() {
        return Err(Error::Misaligned("records and labels differ in length".into()));
    }
    if train_labels.positives() == 0 {
        return Err(Error::Degenerate("no positive anchor labels in the training split".into()));
    }
    let mut model = TransformerModel::new(config, vocab, anchor)?;
    let train_seqs: Vec<EncodedSequence> = train.iter().map(|r| model.encode(r)).collect();
    let val_seqs: Vec<EncodedSequence> = validation.iter().map(|r| model.encode(r)).collect();

    let mut rng = rng_for(config.seed, 0x747261696e);
    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let mut optimizer = BertAdam::new(model.parameter_count(), steps_per_epoch * config.n_epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = vec![0.0; model.parameter_count()];
    let mut history = Vec::with_capacity(config.n_epochs);
    let mut best: Option<(usize, Vec<f64>)> = None;

    for epoch in 0..config.n_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let cache = model.forward(&model.params, &train_seqs[i], Some(&mut rng))?;
                let (loss, dlogit) = bce_with_logit(cache.logit, train_labels.0[i] as f64);
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("training loss in epoch {epoch}")));
                }
                epoch_loss += loss;
                model.backward(&model.params, &cache, dlogit * scale, &mut grad);
            }
            optimizer.update(&mut model, &mut grad);
        }
        let (validation_loss, validation_auprc) = evaluate(&model, &val_seqs, validation_labels)?;
        history.push(EpochStats { epoch, train_loss: epoch_loss / train.len() as f64, validation_loss, validation_auprc });
        let improved = match &best {
            None => true,
            Some((b, _)) => match (validation_auprc, history[*b].validation_auprc) {
                (Some(now), Some(then)) => now > then,
                _ => validation_loss < history[*b].validation_loss,
            },
        };
        if improved {
            best = Some((epoch, model.params.clone()));
        }
    }
    let (best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainedTransformer { model, history, best_epoch })
}
