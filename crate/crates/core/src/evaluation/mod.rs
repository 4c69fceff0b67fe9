//! Metrics over decoded dialogues and the report that collects them.

mod embedding;
mod metrics;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sedst_autodiff::ParamStore;

use crate::corpus::{DialogueSession, KnowledgeBase, StateAnnotation};
use crate::decoding::{format_span_trace, DialogueConfig, DialogueRunner};
use crate::model::Model;
use crate::vocab::{Vocabulary, EOS_SPAN, EOS_UTTERANCE, PAD, SPAN_DELIM};
use crate::Result;

pub use embedding::{embedding_metric, pair_similarity, EmbeddingScore, EmbeddingVariant, Embeddings};
pub use metrics::{
    bleu, entity_match_rate, is_thanks_only, joint_goal_accuracy, predicted_keyword_proportion,
    EntityMatch, EntityMatchInput, Rate, STOP_WORDS, THANKS_KEYWORDS,
};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub turns_total: usize,
    pub turns_evaluated: usize,
    /// Thanks-only turns and turns without a gold state.
    pub turns_excluded: usize,
    pub dialogues_total: usize,
    pub dialogues_evaluated: usize,
    pub dialogues_skipped: usize,
    pub embedding_pairs_skipped: usize,
    pub embedding_missing_tokens: usize,
    pub keyword_candidates: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub joint_goal_accuracy: f64,
    pub entity_match_rate: f64,
    pub emb_average: f64,
    pub emb_greedy: f64,
    pub emb_extrema: f64,
    pub predicted_keyword_proportion: f64,
    /// No dialogue could be judged for entity match rate.
    pub entity_match_undefined: bool,
    /// No span token outside the context was decoded.
    pub keyword_undefined: bool,
    pub counts: EvalCounts,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_table(&self) -> String {
        let flag = |u: bool| if u { " (undefined)" } else { "" };
        let rows = [
            ("BLEU", format!("{:.4}", self.bleu)),
            ("joint goal accuracy", format!("{:.4}", self.joint_goal_accuracy)),
            (
                "entity match rate",
                format!("{:.4}{}", self.entity_match_rate, flag(self.entity_match_undefined)),
            ),
            ("embedding average", format!("{:.4}", self.emb_average)),
            ("embedding greedy", format!("{:.4}", self.emb_greedy)),
            ("embedding extrema", format!("{:.4}", self.emb_extrema)),
            (
                "predicted keywords",
                format!("{:.4}{}", self.predicted_keyword_proportion, flag(self.keyword_undefined)),
            ),
            ("turns evaluated", self.counts.turns_evaluated.to_string()),
            ("turns excluded", self.counts.turns_excluded.to_string()),
            ("dialogues evaluated", self.counts.dialogues_evaluated.to_string()),
            ("dialogues skipped", self.counts.dialogues_skipped.to_string()),
        ];
        let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<w$}  {v}");
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub user: String,
    pub gold_response: String,
    pub span: String,
    pub span_trace: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<StateAnnotation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matches: Option<usize>,
    pub response: String,
    pub surface: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueTranscript {
    pub id: String,
    pub turns: Vec<TranscriptTurn>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub dialogue: DialogueConfig,
    /// Also treat turns made only of thanks keywords as thanks-only.
    pub keyword_thanks: bool,
    pub stop_words: Vec<String>,
}

impl EvalOptions {
    pub fn new(dialogue: DialogueConfig) -> Self {
        EvalOptions {
            dialogue,
            keyword_thanks: false,
            stop_words: STOP_WORDS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Decodes every session with gold previous responses as history and
/// scores the result. Without a knowledge base the state metrics are 0 and
/// flagged undefined.
pub fn evaluate(
    store: &ParamStore,
    model: &Model,
    vocab: &Vocabulary,
    kb: Option<&KnowledgeBase>,
    sessions: &[DialogueSession],
    embeddings: &Embeddings,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<DialogueTranscript>)> {
    let mut counts = EvalCounts {
        dialogues_total: sessions.len(),
        ..EvalCounts::default()
    };
    let (mut cands, mut refs) = (Vec::new(), Vec::new());
    let (mut pred_states, mut gold_states, mut excluded) = (Vec::new(), Vec::new(), Vec::new());
    let (mut spans, mut contexts) = (Vec::new(), Vec::new());
    let mut emr_inputs = Vec::new();
    let mut transcripts = Vec::new();

    for s in sessions {
        let mut runner = DialogueRunner::new(store, model, vocab, kb, opts.dialogue.clone())?;
        let mut emr = EntityMatchInput {
            target_entity: s.target_entity,
            ..EntityMatchInput::default()
        };
        let mut turns = Vec::new();
        let mut prev_gold: Vec<usize> = Vec::new();
        for t in &s.turns {
            counts.turns_total += 1;
            let user = vocab.encode(&t.user);
            let out = runner.turn(&user, Some(&prev_gold))?;
            let response: Vec<String> = vocab.decode(&out.response).iter().map(|w| w.to_string()).collect();
            let gold_resp = words(&t.resp_delex);
            let span_words: Vec<String> = vocab.decode(&out.span).iter().map(|w| w.to_string()).collect();

            let predicted = out.state.as_ref().map(|st| st.inf.clone()).unwrap_or_default();
            let thanks = t.thanks || (opts.keyword_thanks && is_thanks_only(&t.user, THANKS_KEYWORDS));
            let gold_state = t.state.as_ref().map(|st| st.inf.clone());
            excluded.push(thanks || gold_state.is_none() || kb.is_none());
            gold_states.push(gold_state.unwrap_or_default());
            pred_states.push(predicted.clone());

            let mut ctx = vocab.decode(&prev_gold).iter().map(|w| w.to_string()).collect::<Vec<_>>();
            ctx.extend(words(&t.user));
            contexts.push(ctx);
            spans.push(span_words.clone());

            emr.predicted.push(predicted);
            emr.decoded.push(response.clone());
            emr.gold.push(gold_resp.clone());

            turns.push(TranscriptTurn {
                user: t.user.clone(),
                gold_response: t.resp_delex.clone(),
                span: span_words.join(" "),
                span_trace: format_span_trace(&out, vocab),
                state: out.state.clone(),
                matches: out.matches,
                response: response.join(" "),
                surface: out.surface.clone(),
            });
            cands.push(response);
            refs.push(gold_resp);
            prev_gold = vocab.encode(&t.resp_delex);
        }
        emr_inputs.push(emr);
        transcripts.push(DialogueTranscript {
            id: s.id.clone(),
            turns,
        });
    }

    let jga = joint_goal_accuracy(&pred_states, &gold_states, &excluded)?;
    counts.turns_evaluated = jga.denominator;
    counts.turns_excluded = counts.turns_total - jga.denominator;
    let emr = match kb {
        Some(kb) => entity_match_rate(&emr_inputs, kb)?,
        None => EntityMatch {
            rate: Rate::of(0, 0),
            skipped: sessions.len(),
        },
    };
    counts.dialogues_evaluated = emr.rate.denominator;
    counts.dialogues_skipped = emr.skipped;
    let average = embedding_metric(EmbeddingVariant::Average, &cands, &refs, embeddings)?;
    let greedy = embedding_metric(EmbeddingVariant::Greedy, &cands, &refs, embeddings)?;
    let extrema = embedding_metric(EmbeddingVariant::Extrema, &cands, &refs, embeddings)?;
    counts.embedding_pairs_skipped = average.skipped_pairs;
    counts.embedding_missing_tokens = average.missing_tokens;
    let stop: Vec<&str> = opts.stop_words.iter().map(String::as_str).collect();
    let kw = predicted_keyword_proportion(&spans, &contexts, &refs, &stop, &[PAD, EOS_UTTERANCE, EOS_SPAN, SPAN_DELIM])?;
    counts.keyword_candidates = kw.denominator;
    let report = EvalReport {
        bleu: if cands.is_empty() { 0.0 } else { bleu(&cands, &refs)? },
        joint_goal_accuracy: jga.value,
        entity_match_rate: emr.rate.value,
        emb_average: average.value,
        emb_greedy: greedy.value,
        emb_extrema: extrema.value,
        predicted_keyword_proportion: kw.value,
        entity_match_undefined: emr.rate.undefined,
        keyword_undefined: kw.undefined,
        counts,
    };
    Ok((report, transcripts))
}
