//! Dialogue data model and the JSON-lines corpus format.
//!
//! A corpus file starts with a header line
//! `{"format":"sedst-corpus","version":1}` followed by one session per line:
//!
//! ```text
//! {"id":"s0001","turns":[{"user":"...","resp_delex":"...","resp_surface":"...",
//!   "state":{"inf":{"food":"thai"},"req":["phone"]},"thanks":false}],"target_entity":17}
//! ```
//!
//! `state` is `null` for unannotated turns; `thanks` may be omitted.

pub mod camrest;
mod kb;
pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use kb::{
    delexicalize, lexicalize, Entity, InformableSlot, KnowledgeBase, SlotSchema, NAME_ATTR,
    PLACEHOLDER_SUFFIX,
};

use crate::vocab::{EOS_SPAN, SPAN_DELIM};
use crate::{Error, Result};

const CORPUS_FORMAT: &str = "sedst-corpus";
const CORPUS_VERSION: u32 = 1;

/// Informable constraints plus requested slots at one turn.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateAnnotation {
    pub inf: BTreeMap<String, String>,
    pub req: Vec<String>,
}

impl StateAnnotation {
    /// Values in schema slot order, the delimiter, requestables in schema
    /// order, then the end-of-span token.
    pub fn to_span_tokens(&self, schema: &SlotSchema) -> Vec<String> {
        let mut out: Vec<String> = schema
            .informable
            .iter()
            .filter_map(|s| self.inf.get(&s.name).cloned())
            .collect();
        out.push(SPAN_DELIM.to_string());
        out.extend(
            schema
                .requestable
                .iter()
                .filter(|r| self.req.contains(r))
                .cloned(),
        );
        out.push(EOS_SPAN.to_string());
        out
    }

    /// Parses a decoded span. Informable values are read from the region
    /// before the delimiter unless `intersect_all` is set, in which case every
    /// span token is intersected with the schema's value lists. The first value
    /// seen for a slot wins.
    pub fn from_span_tokens<S: AsRef<str>>(
        tokens: &[S],
        schema: &SlotSchema,
        intersect_all: bool,
    ) -> Self {
        let mut st = StateAnnotation::default();
        let mut after_delim = false;
        for t in tokens {
            let t = t.as_ref();
            if t == EOS_SPAN && !intersect_all {
                break;
            }
            if t == SPAN_DELIM {
                after_delim = true;
                continue;
            }
            if intersect_all || !after_delim {
                if let Some(i) = schema.slot_of_value(t) {
                    st.inf
                        .entry(schema.informable[i].name.clone())
                        .or_insert_with(|| t.to_string());
                    continue;
                }
            }
            if (intersect_all || after_delim) && schema.is_requestable(t) && !st.req.iter().any(|r| r == t) {
                st.req.push(t.to_string());
            }
        }
        st.req.sort_by_key(|r| schema.requestable.iter().position(|x| x == r));
        st
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub user: String,
    pub resp_delex: String,
    pub resp_surface: String,
    pub state: Option<StateAnnotation>,
    /// The user merely thanks; excluded from joint goal accuracy.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub thanks: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub id: String,
    pub turns: Vec<Turn>,
    pub target_entity: Option<usize>,
}

impl DialogueSession {
    pub fn is_annotated(&self) -> bool {
        self.turns.iter().all(|t| t.state.is_some())
    }

    /// Copy with every gold state removed.
    pub fn without_annotation(&self) -> Self {
        let mut s = self.clone();
        for t in &mut s.turns {
            t.state = None;
        }
        s
    }
}

fn validate(session: &DialogueSession, schema: &SlotSchema) -> Vec<String> {
    let mut bad = Vec::new();
    if session.turns.is_empty() {
        bad.push("turns (empty)".to_string());
    }
    for (i, t) in session.turns.iter().enumerate() {
        if t.user.trim().is_empty() {
            bad.push(format!("turns[{i}].user"));
        }
        if let Some(st) = &t.state {
            for (slot, value) in &st.inf {
                match schema.informable_index(slot) {
                    None => bad.push(format!("turns[{i}].state.inf.{slot}")),
                    Some(k) if !schema.informable[k].values.contains(value) => {
                        bad.push(format!("turns[{i}].state.inf.{slot}={value}"))
                    }
                    _ => {}
                }
            }
            for r in &st.req {
                if !schema.is_requestable(r) {
                    bad.push(format!("turns[{i}].state.req.{r}"));
                }
            }
        }
    }
    bad
}

pub fn corpus_to_string(sessions: &[DialogueSession]) -> Result<String> {
    let header = serde_json::json!({ "format": CORPUS_FORMAT, "version": CORPUS_VERSION });
    let mut out = format!("{header}\n");
    for s in sessions {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parses and validates a corpus. An empty input is an empty corpus.
pub fn parse_corpus(text: &str, schema: &SlotSchema) -> Result<Vec<DialogueSession>> {
    let mut sessions = Vec::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, head)) = lines.next() else {
        return Ok(sessions);
    };
    kb::check_header(head, CORPUS_FORMAT, CORPUS_VERSION, 1)?;
    for (i, line) in lines {
        let session: DialogueSession = serde_json::from_str(line).map_err(|e| Error::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        let bad = validate(&session, schema);
        if !bad.is_empty() {
            return Err(Error::Schema {
                line: i + 1,
                fields: bad,
            });
        }
        sessions.push(session);
    }
    Ok(sessions)
}

pub fn load_corpus(path: impl AsRef<Path>, schema: &SlotSchema) -> Result<Vec<DialogueSession>> {
    parse_corpus(&fs::read_to_string(path)?, schema)
}

pub fn save_corpus(path: impl AsRef<Path>, sessions: &[DialogueSession]) -> Result<()> {
    fs::write(path, corpus_to_string(sessions)?)?;
    Ok(())
}

/// Train / validation / test partition by session id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    /// Contiguous 3:1:1 split in corpus order.
    pub fn three_one_one(sessions: &[DialogueSession]) -> Self {
        let n = sessions.len();
        let n_train = n * 3 / 5;
        let n_valid = n / 5;
        let ids: Vec<String> = sessions.iter().map(|s| s.id.clone()).collect();
        Split {
            train: ids[..n_train].to_vec(),
            valid: ids[n_train..n_train + n_valid].to_vec(),
            test: ids[n_train + n_valid..].to_vec(),
        }
    }

    pub fn select<'a>(
        ids: &[String],
        sessions: &'a [DialogueSession],
    ) -> Result<Vec<&'a DialogueSession>> {
        let by_id: BTreeMap<&str, &DialogueSession> =
            sessions.iter().map(|s| (s.id.as_str(), s)).collect();
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Config(format!("split names unknown session `{id}`")))
            })
            .collect()
    }
}

/// Seeded random subset of sessions, of size `round(proportion · n)`, that
/// keeps its gold states; all other sessions lose theirs. Returns the number
/// of annotated sessions.
pub fn apply_supervision(
    sessions: &mut [DialogueSession],
    proportion: f64,
    seed: u64,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&proportion) {
        return Err(Error::Config(format!(
            "supervision proportion must be in [0, 1], got {proportion}"
        )));
    }
    let n = sessions.len();
    let keep = (proportion * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut annotated = vec![false; n];
    for &i in &order[..keep] {
        annotated[i] = true;
    }
    for (s, &a) in sessions.iter_mut().zip(&annotated) {
        if !a {
            for t in &mut s.turns {
                t.state = None;
            }
        }
    }
    Ok(keep)
}
