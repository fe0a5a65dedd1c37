use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TransformerConfig, TransformerModel};
use crate::cohort::Vocabulary;
use crate::{Error, Result};

const FORMAT: &str = "anchorpheno-transformer/1";

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    config: TransformerConfig,
    vocabulary_hash: String,
    vocabulary: Vocabulary,
    anchor_codes: Vec<String>,
    params: Vec<f64>,
}

pub fn save_checkpoint(model: &TransformerModel, path: &Path) -> Result<()> {
    let file = CheckpointFile {
        format: FORMAT.into(),
        config: model.config.clone(),
        vocabulary_hash: model.vocab.hash(),
        vocabulary: model.vocab.clone(),
        anchor_codes: model.anchor_codes.clone(),
        params: model.params.clone(),
    };
    let json = serde_json::to_string(&file).map_err(|e| Error::Checkpoint(e.to_string()))?;
    fs::write(path, json)?;
    Ok(())
}

/// Loads a checkpoint, verifying that the stored vocabulary matches its recorded hash.
pub fn load_checkpoint(path: &Path) -> Result<TransformerModel> {
    let text = fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if file.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format {}", file.format)));
    }
    if file.vocabulary.hash() != file.vocabulary_hash {
        return Err(Error::VocabularyMismatch("checkpoint vocabulary does not match its hash".into()));
    }
    TransformerModel::with_params(file.config, file.vocabulary, file.anchor_codes, Some(file.params))
}
