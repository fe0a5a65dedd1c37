//! Small BERT-style encoder over visit sequences with anchor-key masking,
//! trained from scratch with hand-written backpropagation.

mod checkpoint;
mod gradcheck;
mod model;
pub mod ops;
mod train;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::anchor::AnchorSpec;
use crate::cohort::{encode_record, EncodedSequence, PatientRecord, Vocabulary};
use crate::util::rng_for;
use crate::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{gradient_check, gradient_check_indices, sample_parameter_indices, GradientComparison};
pub use ops::{attention, attention_weights, build_anchor_mask, AttentionMask, Matrix, MASK_VALUE};
pub use train::{train_transformer, warmup_linear, EpochStats, TrainedTransformer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub d_model: usize,
    /// Encoder depth.
    pub n_layers: usize,
    pub n_heads: usize,
    pub intermediate_size: usize,
    /// Dense tanh layers between the pooled `[CLS]` vector and the output head.
    pub n_hidden_layers: usize,
    pub hidden_dropout: f64,
    pub attention_dropout: f64,
    pub init_range: f64,
    pub max_len: usize,
    pub learning_rate: f64,
    pub warmup_proportion: f64,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub seed: u64,
}

/// Desk-scale settings; [`TransformerConfig::table4`] has the full-size ones.
impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            intermediate_size: 64,
            n_hidden_layers: 0,
            hidden_dropout: 0.2,
            attention_dropout: 0.22,
            init_range: 0.02,
            max_len: 64,
            learning_rate: 1e-3,
            warmup_proportion: 0.1,
            weight_decay: 0.001,
            max_grad_norm: 1.0,
            batch_size: 32,
            n_epochs: 10,
            seed: 0,
        }
    }
}

impl TransformerConfig {
    /// Full-size settings (hidden 360, 12 heads, batch 256, length 256).
    pub fn table4() -> Self {
        Self {
            d_model: 360,
            n_layers: 12,
            n_heads: 12,
            intermediate_size: 1440,
            n_hidden_layers: 2,
            max_len: 256,
            batch_size: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} must be a positive multiple of n_heads {}", self.d_model, self.n_heads));
        }
        if self.n_layers == 0 || self.intermediate_size == 0 {
            return bad("n_layers and intermediate_size must be positive".into());
        }
        for (name, p) in [("hidden_dropout", self.hidden_dropout), ("attention_dropout", self.attention_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1)"));
            }
        }
        if !(self.init_range > 0.0 && self.learning_rate > 0.0 && self.max_grad_norm > 0.0) {
            return bad("init_range, learning_rate and max_grad_norm must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_proportion) || self.weight_decay < 0.0 {
            return bad("warmup_proportion must be in [0, 1) and weight_decay >= 0".into());
        }
        if self.max_len < 3 || self.batch_size == 0 || self.n_epochs == 0 {
            return bad("max_len >= 3, batch_size >= 1 and n_epochs >= 1 required".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Location of one named parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// Whether decoupled weight decay applies (not for biases and LayerNorm).
    pub decay: bool,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub wq: usize,
    pub bq: usize,
    /// No key bias: it shifts every score of a query equally and so never changes attention.
    pub wk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok: usize,
    pub seg: usize,
    pub emb_ln_g: usize,
    pub emb_ln_b: usize,
    pub layers: Vec<LayerOffsets>,
    /// (weight, bias) offsets per dense pooling layer.
    pub pooler: Vec<(usize, usize)>,
    pub head_w: usize,
    pub head_b: usize,
    pub total: usize,
    pub tensors: Vec<TensorSpec>,
}

impl Layout {
    pub fn new(config: &TransformerConfig, vocab_size: usize) -> Self {
        let d = config.d_model;
        let f = config.intermediate_size;
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, rows: usize, cols: usize, decay: bool| {
            tensors.push(TensorSpec { name, offset, rows, cols, decay });
            offset += rows * cols;
            offset - rows * cols
        };
        let tok = add("token_embedding".into(), vocab_size, d, true);
        let seg = add("segment_embedding".into(), 2, d, true);
        let emb_ln_g = add("embedding_norm.gamma".into(), 1, d, false);
        let emb_ln_b = add("embedding_norm.beta".into(), 1, d, false);
        let mut layers = Vec::new();
        for l in 0..config.n_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            layers.push(LayerOffsets {
                wq: add(p("query.weight"), d, d, true),
                bq: add(p("query.bias"), 1, d, false),
                wk: add(p("key.weight"), d, d, true),
                wv: add(p("value.weight"), d, d, true),
                bv: add(p("value.bias"), 1, d, false),
                wo: add(p("attention_output.weight"), d, d, true),
                bo: add(p("attention_output.bias"), 1, d, false),
                ln1_g: add(p("attention_norm.gamma"), 1, d, false),
                ln1_b: add(p("attention_norm.beta"), 1, d, false),
                w1: add(p("intermediate.weight"), d, f, true),
                b1: add(p("intermediate.bias"), 1, f, false),
                w2: add(p("output.weight"), f, d, true),
                b2: add(p("output.bias"), 1, d, false),
                ln2_g: add(p("output_norm.gamma"), 1, d, false),
                ln2_b: add(p("output_norm.beta"), 1, d, false),
            });
        }
        let pooler = (0..config.n_hidden_layers)
            .map(|k| (add(format!("pooler{k}.weight"), d, d, true), add(format!("pooler{k}.bias"), 1, d, false)))
            .collect();
        let head_w = add("head.weight".into(), 1, d, true);
        let head_b = add("head.bias".into(), 1, 1, false);
        Layout { tok, seg, emb_ln_g, emb_ln_b, layers, pooler, head_w, head_b, total: offset, tensors }
    }
}

#[derive(Debug, Clone)]
pub struct TransformerModel {
    pub config: TransformerConfig,
    pub vocab: Vocabulary,
    pub anchor_codes: Vec<String>,
    pub params: Vec<f64>,
    pub(crate) layout: Layout,
    pub(crate) positional: Vec<f64>,
    pub(crate) anchor_token_ids: Vec<u32>,
}

impl TransformerModel {
    /// Fresh model: weights and embeddings drawn from `normal(0, init_range)`,
    /// biases zero, LayerNorm gains one.
    pub fn new(config: &TransformerConfig, vocab: &Vocabulary, anchor: &AnchorSpec) -> Result<Self> {
        config.validate()?;
        let mut model = Self::with_params(config.clone(), vocab.clone(), anchor.codes().map(String::from).collect(), None)?;
        let mut rng = rng_for(config.seed, 0x696e6974);
        let normal = Normal::new(0.0, config.init_range).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for t in &model.layout.tensors {
            for i in t.range() {
                model.params[i] = if t.name.ends_with(".gamma") {
                    1.0
                } else if t.name.ends_with(".beta") || t.name.ends_with(".bias") {
                    0.0
                } else {
                    normal.sample(&mut rng)
                };
            }
        }
        Ok(model)
    }

    pub(crate) fn with_params(
        config: TransformerConfig,
        vocab: Vocabulary,
        anchor_codes: Vec<String>,
        params: Option<Vec<f64>>,
    ) -> Result<Self> {
        config.validate()?;
        let mut anchor_token_ids = Vec::new();
        for code in &anchor_codes {
            if !vocab.contains(code) {
                return Err(Error::VocabularyMismatch(format!("anchor code {code} is not in the vocabulary")));
            }
            anchor_token_ids.push(vocab.token_id(code));
        }
        let layout = Layout::new(&config, vocab.len());
        let params = match params {
            Some(p) if p.len() != layout.total => {
                return Err(Error::Shape(format!("{} parameters, layout needs {}", p.len(), layout.total)))
            }
            Some(p) => p,
            None => vec![0.0; layout.total],
        };
        let positional = ops::sinusoidal_table(config.max_len, config.d_model);
        Ok(Self { config, vocab, anchor_codes, params, layout, positional, anchor_token_ids })
    }

    pub fn parameter_count(&self) -> usize {
        self.layout.total
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.layout.tensors.iter().find(|t| t.name == name)
    }

    pub fn anchor_token_ids(&self) -> &[u32] {
        &self.anchor_token_ids
    }

    /// Zeroes the output head so every input scores exactly 0.5.
    pub fn zero_head(&mut self) {
        let d = self.config.d_model;
        let w = self.layout.head_w;
        self.params[w..w + d].fill(0.0);
        self.params[self.layout.head_b] = 0.0;
    }

    pub fn encode(&self, record: &PatientRecord) -> EncodedSequence {
        encode_record(record, &self.vocab, self.config.max_len)
    }

    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.hash() != self.vocab.hash() {
            return Err(Error::VocabularyMismatch("vocabulary differs from the one used in training".into()));
        }
        Ok(())
    }

    /// Evaluation-mode logit (no dropout).
    pub fn logit(&self, seq: &EncodedSequence) -> Result<f64> {
        Ok(self.forward(&self.params, seq, None)?.logit)
    }

    /// Evaluation-mode logit under an explicit additive key mask.
    pub fn logit_with_mask(&self, seq: &EncodedSequence, mask: &AttentionMask) -> Result<f64> {
        Ok(self.forward_with_mask(&self.params, seq, mask, None)?.logit)
    }

    /// Predicted anchor probabilities, in input order.
    pub fn predict(&self, records: &[PatientRecord]) -> Result<Vec<f64>> {
        records
            .iter()
            .map(|r| self.logit(&self.encode(r)).map(crate::util::sigmoid))
            .collect()
    }

    /// Like `predict`, after checking that `vocab` matches the training vocabulary.
    pub fn predict_with_vocabulary(&self, records: &[PatientRecord], vocab: &Vocabulary) -> Result<Vec<f64>> {
        self.check_vocabulary(vocab)?;
        self.predict(records)
    }

    /// Evaluation-mode binary cross-entropy and its gradient for one sequence.
    pub fn loss_and_gradient(&self, seq: &EncodedSequence, label: u8) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward(&self.params, seq, None)?;
        let (loss, dlogit) = model::bce_with_logit(cache.logit, label as f64);
        let mut grad = vec![0.0; self.layout.total];
        self.backward(&self.params, &cache, dlogit, &mut grad);
        Ok((loss, grad))
    }

    pub fn loss(&self, params: &[f64], seq: &EncodedSequence, label: u8) -> Result<f64> {
        let cache = self.forward(params, seq, None)?;
        Ok(model::bce_with_logit(cache.logit, label as f64).0)
    }
}
