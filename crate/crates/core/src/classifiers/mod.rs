//! Anchor classifiers: count-feature logistic regression and the transformer.

mod features;
mod logistic;
pub mod transformer;

pub use features::{CountFeaturizer, CountFeatures};
pub use logistic::{train_logistic, AnchorLogistic, LogisticConfig, LogisticModel};
pub use transformer::{train_transformer, TrainedTransformer, TransformerConfig, TransformerModel};
