//! Corpus sessions converted to token ids.

use crate::corpus::{DialogueSession, SlotSchema};
use crate::model::TurnInput;
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedTurn {
    /// R_{t-1} is the gold previous response; empty at the first turn.
    pub input: TurnInput,
    /// Gold span ids ending with the end-of-span token, for annotated turns.
    pub span: Option<Vec<usize>>,
    pub thanks: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreparedSession {
    pub id: String,
    pub turns: Vec<PreparedTurn>,
}

impl PreparedSession {
    /// A session belongs to 𝒜 when every turn carries a gold span.
    pub fn annotated(&self) -> bool {
        self.turns.iter().all(|t| t.span.is_some())
    }
}

pub fn prepare_session(s: &DialogueSession, vocab: &Vocabulary, schema: &SlotSchema) -> PreparedSession {
    let mut prev = Vec::new();
    let turns = s
        .turns
        .iter()
        .map(|t| {
            let response = vocab.encode(&t.resp_delex);
            let turn = PreparedTurn {
                input: TurnInput {
                    prev_response: std::mem::replace(&mut prev, response.clone()),
                    user: vocab.encode(&t.user),
                    response: Some(response),
                },
                span: t.state.as_ref().map(|st| {
                    st.to_span_tokens(schema).iter().map(|tok| vocab.id(tok)).collect()
                }),
                thanks: t.thanks,
            };
            turn
        })
        .collect();
    PreparedSession {
        id: s.id.clone(),
        turns,
    }
}

pub fn prepare(sessions: &[DialogueSession], vocab: &Vocabulary, schema: &SlotSchema) -> Vec<PreparedSession> {
    sessions
        .iter()
        .map(|s| prepare_session(s, vocab, schema))
        .collect()
}
