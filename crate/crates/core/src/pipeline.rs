//! The steps shared by the command line and experiments: splitting and
//! masking a corpus, training, and evaluating on a split.

use crate::corpus::{apply_supervision, DialogueSession, KnowledgeBase, Split};
use crate::decoding::DialogueConfig;
use crate::evaluation::{evaluate, DialogueTranscript, Embeddings, EvalOptions, EvalReport};
use crate::model::{SpanDecodeConfig, SpanStop};
use crate::persist::{ModelMeta, SavedModel};
use crate::training::{fit, prepare, FitOutcome, Mode, PreparedSession, TrainingConfig};
use crate::vocab::Vocabulary;
use crate::Result;

/// A corpus with its knowledge base, split and vocabulary (built over all
/// sessions so every split shares it).
pub struct Dataset {
    pub sessions: Vec<DialogueSession>,
    pub kb: KnowledgeBase,
    pub split: Split,
    pub vocab: Vocabulary,
}

impl Dataset {
    pub fn new(sessions: Vec<DialogueSession>, kb: KnowledgeBase, split: Split) -> Self {
        let vocab = Vocabulary::build(&sessions, &kb.schema);
        Dataset {
            sessions,
            kb,
            split,
            vocab,
        }
    }

    pub fn part(&self, ids: &[String]) -> Result<Vec<DialogueSession>> {
        Ok(Split::select(ids, &self.sessions)?.into_iter().cloned().collect())
    }
}

/// Train and validation sets with the configured share of sessions keeping
/// their gold spans. Returns the annotated count of the training set too.
pub fn training_sets(ds: &Dataset, cfg: &TrainingConfig) -> Result<(Vec<PreparedSession>, Vec<PreparedSession>, usize)> {
    let mut train = ds.part(&ds.split.train)?;
    let mut valid = ds.part(&ds.split.valid)?;
    let annotated = apply_supervision(&mut train, cfg.supervision, cfg.seed)?;
    apply_supervision(&mut valid, cfg.supervision, cfg.seed)?;
    Ok((
        prepare(&train, &ds.vocab, &ds.kb.schema),
        prepare(&valid, &ds.vocab, &ds.kb.schema),
        annotated,
    ))
}

pub fn train(ds: &Dataset, cfg: &TrainingConfig) -> Result<(FitOutcome, ModelMeta)> {
    let (train, valid, _) = training_sets(ds, cfg)?;
    let out = fit(&train, &valid, ds.vocab.len(), cfg)?;
    let meta = ModelMeta {
        model: out.model.config.clone(),
        training: cfg.clone(),
        mode: cfg.mode(),
        best_epoch: out.best_epoch,
        stop: out.stop.clone(),
        vocab_fingerprint: ds.vocab.fingerprint(),
        vocab: ds.vocab.tokens().to_vec(),
    };
    Ok((out, meta))
}

/// Inference settings matching how a model of `mode` was trained: token
/// copy and end-terminated spans with full supervision; distribution copy
/// otherwise, and fixed-length no-repeat spans read by slot intersection
/// without supervision.
pub fn dialogue_config(mode: Mode, span_len: usize, beam_size: usize) -> DialogueConfig {
    let unsupervised = mode == Mode::Unsupervised;
    DialogueConfig {
        span: SpanDecodeConfig {
            stop: if unsupervised { SpanStop::FixedLength } else { SpanStop::EosTerminated },
            span_len,
            no_repeat: unsupervised,
        },
        beam_size,
        deterministic_copy: mode == Mode::Supervised,
        slot_intersection: unsupervised,
    }
}

/// Seeded embeddings over the vocabulary, for corpora without pretrained
/// vectors.
pub fn synthetic_embeddings(vocab: &Vocabulary, seed: u64) -> Result<Embeddings> {
    Embeddings::synthesize(vocab.tokens(), 32, seed)
}

pub fn evaluate_saved(
    saved: &SavedModel,
    ds: &Dataset,
    sessions: &[DialogueSession],
    embeddings: &Embeddings,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<DialogueTranscript>)> {
    crate::persist::check_vocab(&saved.vocab, &ds.vocab)?;
    evaluate(&saved.params, &saved.model, &saved.vocab, Some(&ds.kb), sessions, embeddings, opts)
}
