//! Trained models on disk: parameters in the binary checkpoint, with the
//! configuration and vocabulary as JSON metadata.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sedst_autodiff::checkpoint::{self, RngState};
use sedst_autodiff::ParamStore;

use crate::model::{Model, ModelConfig};
use crate::training::{Mode, StopReason, TrainingConfig};
use crate::vocab::Vocabulary;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub mode: Mode,
    pub best_epoch: usize,
    pub stop: StopReason,
    pub vocab_fingerprint: String,
    pub vocab: Vec<String>,
}

pub struct SavedModel {
    pub model: Model,
    pub params: ParamStore,
    pub meta: ModelMeta,
    pub vocab: Vocabulary,
}

pub fn save_model(path: impl AsRef<Path>, params: &ParamStore, meta: &ModelMeta, rng: &ChaCha8Rng) -> Result<()> {
    let json = serde_json::to_string(meta)?;
    checkpoint::save(path, params, &RngState::capture(rng), &json, false)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let ck = checkpoint::load(path)?;
    let meta: ModelMeta = serde_json::from_str(&ck.meta)?;
    let vocab = Vocabulary::from_tokens(meta.vocab.iter().skip(crate::vocab::NUM_RESERVED));
    if vocab.tokens() != meta.vocab.as_slice() || vocab.fingerprint() != meta.vocab_fingerprint {
        return Err(Error::Contract("checkpoint vocabulary does not match its fingerprint".into()));
    }
    let model = Model::bind(meta.model.clone(), &ck.params)?;
    Ok(SavedModel {
        model,
        params: ck.params,
        meta,
        vocab,
    })
}

/// Errors unless the corpus vocabulary is the one the model was trained on.
pub fn check_vocab(model_vocab: &Vocabulary, corpus_vocab: &Vocabulary) -> Result<()> {
    if model_vocab.fingerprint() != corpus_vocab.fingerprint() {
        return Err(Error::VocabMismatch {
            checkpoint: model_vocab.fingerprint(),
            corpus: corpus_vocab.fingerprint(),
        });
    }
    Ok(())
}
