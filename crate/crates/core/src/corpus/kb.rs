//! Slot schema, knowledge base and (de)lexicalization.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Entity attribute holding the display name, filled into `name_SLOT`.
pub const NAME_ATTR: &str = "name";
pub const PLACEHOLDER_SUFFIX: &str = "_SLOT";

const KB_FORMAT: &str = "sedst-kb";
const KB_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformableSlot {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSchema {
    pub informable: Vec<InformableSlot>,
    pub requestable: Vec<String>,
}

impl SlotSchema {
    pub fn new(informable: Vec<InformableSlot>, requestable: Vec<String>) -> Result<Self> {
        let s = SlotSchema {
            informable,
            requestable,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        let all = self
            .informable
            .iter()
            .map(|s| &s.name)
            .chain(&self.requestable);
        for n in all {
            if !names.insert(n.as_str()) || n == NAME_ATTR {
                return Err(Error::Config(format!("duplicate or reserved slot name `{n}`")));
            }
        }
        let mut values = BTreeSet::new();
        for slot in &self.informable {
            for v in &slot.values {
                if !values.insert(v.as_str()) || v.contains(char::is_whitespace) {
                    return Err(Error::Config(format!(
                        "slot value `{v}` must be a single token unique across slots"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn placeholder(attr: &str) -> String {
        format!("{attr}{PLACEHOLDER_SUFFIX}")
    }

    pub fn is_placeholder(token: &str) -> bool {
        token.len() > PLACEHOLDER_SUFFIX.len() && token.ends_with(PLACEHOLDER_SUFFIX)
    }

    /// `name_SLOT` followed by one placeholder per requestable slot.
    pub fn placeholders(&self) -> Vec<String> {
        std::iter::once(NAME_ATTR)
            .chain(self.requestable.iter().map(String::as_str))
            .map(Self::placeholder)
            .collect()
    }

    pub fn informable_index(&self, name: &str) -> Option<usize> {
        self.informable.iter().position(|s| s.name == name)
    }

    /// Informable slot whose closed value list contains `token`.
    pub fn slot_of_value(&self, token: &str) -> Option<usize> {
        self.informable
            .iter()
            .position(|s| s.values.iter().any(|v| v == token))
    }

    pub fn is_requestable(&self, token: &str) -> bool {
        self.requestable.iter().any(|r| r == token)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: usize,
    pub attrs: BTreeMap<String, String>,
}

impl Entity {
    pub fn get(&self, attr: &str) -> Option<&str> {
        self.attrs.get(attr).map(String::as_str)
    }

    pub fn satisfies(&self, constraints: &BTreeMap<String, String>) -> bool {
        constraints
            .iter()
            .all(|(slot, value)| self.attrs.get(slot) == Some(value))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub schema: SlotSchema,
    pub entities: Vec<Entity>,
}

impl KnowledgeBase {
    /// Validates ids and informable values; entities are kept sorted by id.
    pub fn new(schema: SlotSchema, mut entities: Vec<Entity>) -> Result<Self> {
        schema.validate()?;
        entities.sort_by_key(|e| e.id);
        for w in entities.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Config(format!("duplicate entity id {}", w[0].id)));
            }
        }
        for e in &entities {
            for slot in &schema.informable {
                match e.attrs.get(&slot.name) {
                    Some(v) if slot.values.contains(v) => {}
                    other => {
                        return Err(Error::Config(format!(
                            "entity {} has invalid {}: {:?}",
                            e.id, slot.name, other
                        )))
                    }
                }
            }
        }
        Ok(KnowledgeBase { schema, entities })
    }

    /// Entities satisfying every constraint exactly, in id order.
    pub fn search(&self, constraints: &BTreeMap<String, String>) -> Vec<&Entity> {
        self.entities
            .iter()
            .filter(|e| e.satisfies(constraints))
            .collect()
    }

    pub fn get(&self, id: usize) -> Option<&Entity> {
        self.entities
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.entities[i])
    }

    /// Header line, then the knowledge base as one JSON document.
    pub fn to_file_string(&self) -> Result<String> {
        let header = serde_json::json!({ "format": KB_FORMAT, "version": KB_VERSION });
        Ok(format!("{header}\n{}\n", serde_json::to_string_pretty(self)?))
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let (head, body) = text.split_once('\n').unwrap_or((text, ""));
        check_header(head, KB_FORMAT, KB_VERSION, 1)?;
        let kb: KnowledgeBase = serde_json::from_str(body)?;
        KnowledgeBase::new(kb.schema, kb.entities)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_file_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file_str(&fs::read_to_string(path)?)
    }
}

pub(crate) fn check_header(line: &str, format: &str, version: u32, lineno: usize) -> Result<()> {
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Malformed {
        line: lineno,
        message: format!("bad header: {e}"),
    })?;
    if v["format"] != format || v["version"] != version {
        return Err(Error::Malformed {
            line: lineno,
            message: format!("expected {format} version {version}, found {line}"),
        });
    }
    Ok(())
}

/// Replaces the entity's name and requestable values by placeholders,
/// preferring the longest match at each position.
pub fn delexicalize(surface: &str, entity: &Entity, schema: &SlotSchema) -> String {
    let mut patterns: Vec<(Vec<&str>, String)> = std::iter::once(NAME_ATTR)
        .chain(schema.requestable.iter().map(String::as_str))
        .filter_map(|attr| {
            entity
                .get(attr)
                .map(|v| (v.split_whitespace().collect::<Vec<_>>(), SlotSchema::placeholder(attr)))
        })
        .filter(|(toks, _)| !toks.is_empty())
        .collect();
    patterns.sort_by(|a, b| b.0.len().cmp(&a.0.len()));

    let toks: Vec<&str> = surface.split_whitespace().collect();
    let mut out: Vec<String> = Vec::with_capacity(toks.len());
    let mut i = 0;
    'outer: while i < toks.len() {
        for (pat, ph) in &patterns {
            if toks[i..].starts_with(pat) {
                out.push(ph.clone());
                i += pat.len();
                continue 'outer;
            }
        }
        out.push(toks[i].to_string());
        i += 1;
    }
    out.join(" ")
}

/// Fills placeholders from the entity; placeholders it lacks stay as they are.
pub fn lexicalize(template: &str, entity: &Entity) -> String {
    template
        .split_whitespace()
        .map(|t| {
            if SlotSchema::is_placeholder(t) {
                let attr = &t[..t.len() - PLACEHOLDER_SUFFIX.len()];
                if let Some(v) = entity.get(attr) {
                    return v.to_string();
                }
            }
            t.to_string()
        })
        .collect::<Vec<_>>()
        .join(" ")
}
