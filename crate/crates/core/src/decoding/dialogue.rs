//! Turn-by-turn inference: span, knowledge-base query, response.

use serde::{Deserialize, Serialize};
use sedst_autodiff::{Graph, ParamStore, Var};

use super::beam::{beam_search, BeamConfig, StepModel};
use crate::corpus::{lexicalize, KnowledgeBase, StateAnnotation};
use crate::model::{
    prior_span_distributions, response_decoder, Component, Encoded, FlowDecoder, Model,
    SpanDecodeConfig, SpanMode, SpanSource, SpanTrace, TurnInput,
};
use crate::vocab::{Vocabulary, EOU_ID};
use crate::Result;

/// The prior network's free-running span for one turn.
pub fn decode_span(
    g: &mut Graph,
    model: &Model,
    turn: &TurnInput,
    prev: Option<SpanSource>,
    cfg: SpanDecodeConfig,
) -> Result<(Encoded, SpanTrace)> {
    prior_span_distributions(g, model, turn, prev, SpanMode::Free(cfg))
}

/// A bound response decoder as a [`StepModel`] whose state is the hidden
/// vector.
pub struct ResponseSteps<'a, 'g, 'p> {
    pub g: &'g mut Graph<'p>,
    pub fd: &'a FlowDecoder,
}

impl StepModel for ResponseSteps<'_, '_, '_> {
    type State = Var;

    fn step(&mut self, state: &Var, prev: usize) -> Result<(Var, Vec<f64>)> {
        let (h, d) = self.fd.step(self.g, prev, *state)?;
        Ok((h, self.g.value(d.probs).to_vec()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueConfig {
    pub span: SpanDecodeConfig,
    pub beam_size: usize,
    /// Response copy and next-turn span copy read the decoded span tokens
    /// rather than their distributions.
    pub deterministic_copy: bool,
    /// Read constraints from every span token, not just the informable
    /// region.
    pub slot_intersection: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnOutput {
    pub span: Vec<usize>,
    /// Mixture shares per span step, generation first.
    pub span_shares: Vec<Vec<(Component, f64)>>,
    pub span_truncated: bool,
    /// Constraints read from the span, in task mode.
    pub state: Option<StateAnnotation>,
    /// KB matches for the constraints, in task mode.
    pub matches: Option<usize>,
    pub entity: Option<usize>,
    /// Delexicalized response ids, end token excluded.
    pub response: Vec<usize>,
    pub response_log_prob: f64,
    pub response_truncated: bool,
    /// Lexicalized response text.
    pub surface: String,
}

/// Keeps the graph and previous span alive between turns so the next turn
/// can copy from it.
pub struct DialogueRunner<'m, 'p> {
    g: Graph<'p>,
    model: &'m Model,
    vocab: &'m Vocabulary,
    kb: Option<&'m KnowledgeBase>,
    cfg: DialogueConfig,
    prev_span: Option<SpanTrace>,
    prev_response: Vec<usize>,
}

impl<'m, 'p> DialogueRunner<'m, 'p> {
    pub fn new(
        store: &'p ParamStore,
        model: &'m Model,
        vocab: &'m Vocabulary,
        kb: Option<&'m KnowledgeBase>,
        cfg: DialogueConfig,
    ) -> Result<Self> {
        cfg.span.validate(model.config.vocab_size)?;
        Ok(DialogueRunner {
            g: Graph::new(store),
            model,
            vocab,
            kb,
            cfg,
            prev_span: None,
            prev_response: Vec::new(),
        })
    }

    /// One turn. `gold_prev` replaces the generated previous response as
    /// R_{t-1} when given.
    pub fn turn(&mut self, user: &[usize], gold_prev: Option<&[usize]>) -> Result<TurnOutput> {
        let input = TurnInput {
            prev_response: gold_prev.map_or_else(|| self.prev_response.clone(), <[usize]>::to_vec),
            user: user.to_vec(),
            response: None,
        };
        let det = self.cfg.deterministic_copy;
        let prev = self.prev_span.as_ref().map(|trace| SpanSource {
            trace,
            deterministic: det,
        });
        let (enc, span) = decode_span(&mut self.g, self.model, &input, prev, self.cfg.span)?;

        let (mut state, mut matches, mut entity) = (None, None, None);
        if let Some(kb) = self.kb {
            let words = self.vocab.decode(&span.tokens);
            let st = StateAnnotation::from_span_tokens(&words, &kb.schema, self.cfg.slot_intersection);
            let found = kb.search(&st.inf);
            matches = Some(found.len());
            entity = found.first().map(|e| e.id);
            state = Some(st);
        }

        let (fd, h0) = response_decoder(&mut self.g, self.model, &enc, &span, det)?;
        let beam = BeamConfig {
            beam_size: self.cfg.beam_size,
            max_len: self.model.config.utterance_len + 1,
            start: EOU_ID,
            end: EOU_ID,
        };
        let r = beam_search(&mut ResponseSteps { g: &mut self.g, fd: &fd }, h0, &beam)?;
        let template = self.vocab.decode(&r.tokens).join(" ");
        let surface = match (self.kb, entity) {
            (Some(kb), Some(id)) => lexicalize(&template, kb.get(id).expect("search result exists")),
            _ => template,
        };
        let out = TurnOutput {
            span: span.tokens.clone(),
            span_shares: span.dists.iter().map(|d| d.shares()).collect(),
            span_truncated: span.truncated,
            state,
            matches,
            entity,
            response: r.tokens.clone(),
            response_log_prob: r.log_prob,
            response_truncated: r.truncated,
            surface,
        };
        self.prev_span = Some(span);
        self.prev_response = r.tokens;
        Ok(out)
    }
}

/// A session's user turns, with gold previous responses when the history
/// should follow the reference rather than the model.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DialogueInput {
    pub user: Vec<usize>,
    pub gold_prev_response: Option<Vec<usize>>,
}

pub fn run_dialogue(
    store: &ParamStore,
    model: &Model,
    vocab: &Vocabulary,
    kb: Option<&KnowledgeBase>,
    turns: &[DialogueInput],
    cfg: &DialogueConfig,
) -> Result<Vec<TurnOutput>> {
    let mut runner = DialogueRunner::new(store, model, vocab, kb, cfg.clone())?;
    turns
        .iter()
        .map(|t| runner.turn(&t.user, t.gold_prev_response.as_deref()))
        .collect()
}

/// Span trace line: each step's token and its component shares.
pub fn format_span_trace(out: &TurnOutput, vocab: &Vocabulary) -> String {
    let steps: Vec<String> = out
        .span
        .iter()
        .zip(&out.span_shares)
        .map(|(&t, shares)| {
            let parts: Vec<String> = shares
                .iter()
                .map(|(c, m)| format!("{}={m:.3}", c.short_name()))
                .collect();
            format!("{}[{}]", vocab.token(t), parts.join(" "))
        })
        .collect();
    steps.join(" ")
}
