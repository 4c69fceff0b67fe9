//! Adapter for CamRest676-style data: a JSON list of dialogues with
//! `dial[].usr.{transcript,slu}` and `dial[].sys.sent`, plus a JSON list of
//! restaurant records as the knowledge base.
//!
//! Text is lowercased and split on whitespace with punctuation detached.
//! Multi-word slot values become single tokens joined by `_`, both in the
//! schema and wherever they occur in user utterances.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use super::{
    delexicalize, DialogueSession, Entity, InformableSlot, KnowledgeBase, SlotSchema,
    StateAnnotation, Turn, NAME_ATTR,
};
use crate::{Error, Result};

pub const INFORMABLE: [&str; 3] = ["food", "pricerange", "area"];
pub const REQUESTABLE: [&str; 3] = ["phone", "address", "postcode"];

/// Values that mean "no constraint" and are dropped from states.
const DONTCARE: [&str; 2] = ["dontcare", "none"];

#[derive(Deserialize)]
struct RawDialogue {
    #[serde(default)]
    dialogue_id: Option<serde_json::Value>,
    dial: Vec<RawTurn>,
}

#[derive(Deserialize)]
struct RawTurn {
    usr: RawUser,
    sys: RawSys,
}

#[derive(Deserialize)]
struct RawUser {
    transcript: String,
    #[serde(default)]
    slu: Vec<RawAct>,
}

#[derive(Deserialize)]
struct RawSys {
    sent: String,
}

#[derive(Deserialize)]
struct RawAct {
    act: String,
    slots: Vec<(String, String)>,
}

pub fn tokenize(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 8);
    for c in text.to_lowercase().chars() {
        if c.is_ascii_punctuation() && c != '\'' && c != '_' {
            out.push(' ');
            out.push(c);
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn join_value(v: &str) -> String {
    tokenize(v).replace(' ', "_")
}

/// Rewrites multi-word values to their joined single-token form.
fn join_values(text: &str, multi: &[(String, String)]) -> String {
    let mut t = format!(" {text} ");
    for (spaced, joined) in multi {
        t = t.replace(&format!(" {spaced} "), &format!(" {joined} "));
    }
    t.trim().to_string()
}

/// Builds the schema and knowledge base from restaurant records.
pub fn parse_kb(json: &str) -> Result<KnowledgeBase> {
    let records: Vec<BTreeMap<String, serde_json::Value>> = serde_json::from_str(json)?;
    let mut values: Vec<BTreeSet<String>> = vec![BTreeSet::new(); INFORMABLE.len()];
    let mut entities = Vec::new();
    for (id, rec) in records.iter().enumerate() {
        let text = |k: &str| rec.get(k).and_then(|v| v.as_str()).map(tokenize);
        let mut attrs = BTreeMap::new();
        for (k, slot) in INFORMABLE.iter().enumerate() {
            let v = text(slot).map(|v| join_value(&v)).ok_or_else(|| {
                Error::Schema {
                    line: id + 1,
                    fields: vec![format!("entities[{id}].{slot}")],
                }
            })?;
            values[k].insert(v.clone());
            attrs.insert(slot.to_string(), v);
        }
        for attr in std::iter::once(NAME_ATTR).chain(REQUESTABLE) {
            if let Some(v) = text(attr) {
                attrs.insert(attr.to_string(), v);
            }
        }
        entities.push(Entity { id, attrs });
    }
    let schema = SlotSchema::new(
        INFORMABLE
            .iter()
            .zip(values)
            .map(|(name, vals)| InformableSlot {
                name: name.to_string(),
                values: vals.into_iter().collect(),
            })
            .collect(),
        REQUESTABLE.iter().map(|s| s.to_string()).collect(),
    )?;
    KnowledgeBase::new(schema, entities)
}

/// Converts dialogues to sessions annotated from the user-side SLU labels.
/// Informable values outside the knowledge base's value lists are dropped.
pub fn parse_dialogues(json: &str, kb: &KnowledgeBase) -> Result<Vec<DialogueSession>> {
    let raw: Vec<RawDialogue> = serde_json::from_str(json)?;
    let mut multi: Vec<(String, String)> = kb
        .schema
        .informable
        .iter()
        .flat_map(|s| s.values.iter())
        .filter(|v| v.contains('_'))
        .map(|v| (v.replace('_', " "), v.clone()))
        .collect();
    multi.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));

    let mut sessions = Vec::with_capacity(raw.len());
    for (i, d) in raw.iter().enumerate() {
        let id = match &d.dialogue_id {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
            None => format!("d{i:05}"),
        };
        let mut state = StateAnnotation::default();
        let mut turns = Vec::with_capacity(d.dial.len());
        for t in &d.dial {
            for act in &t.usr.slu {
                for (slot, value) in &act.slots {
                    let value = join_value(value);
                    if act.act == "request" || slot == "slot" {
                        let r = if slot == "slot" { &value } else { slot };
                        if kb.schema.is_requestable(r) && !state.req.contains(r) {
                            state.req.push(r.clone());
                        }
                    } else if let Some(k) = kb.schema.informable_index(slot) {
                        if DONTCARE.contains(&value.as_str()) {
                            state.inf.remove(slot);
                        } else if kb.schema.informable[k].values.contains(&value) {
                            state.inf.insert(slot.clone(), value);
                        }
                    }
                }
            }
            state
                .req
                .sort_by_key(|r| kb.schema.requestable.iter().position(|x| x == r));
            let surface = tokenize(&t.sys.sent);
            // Prefer an entity named in the sentence, else the current best match.
            let mentioned = kb
                .entities
                .iter()
                .find(|e| {
                    e.get(NAME_ATTR)
                        .is_some_and(|n| format!(" {surface} ").contains(&format!(" {n} ")))
                })
                .or_else(|| {
                    if state.inf.is_empty() {
                        None
                    } else {
                        kb.search(&state.inf).first().copied()
                    }
                });
            let resp_delex = match mentioned {
                Some(e) => delexicalize(&surface, e, &kb.schema),
                None => surface.clone(),
            };
            turns.push(Turn {
                user: join_values(&tokenize(&t.usr.transcript), &multi),
                resp_delex,
                resp_surface: surface,
                state: Some(state.clone()),
                thanks: false,
            });
        }
        let target_entity = if state.inf.is_empty() {
            None
        } else {
            kb.search(&state.inf).first().map(|e| e.id)
        };
        sessions.push(DialogueSession {
            id,
            turns,
            target_entity,
        });
    }
    Ok(sessions)
}
