use std::collections::{BTreeSet, HashMap};

use crate::corpus::{DialogueSession, SlotSchema};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
/// Terminates user utterances and responses.
pub const EOS_UTTERANCE: &str = "</u>";
pub const EOS_SPAN: &str = "</span>";
/// Separates the informable region of a state span from the requestable one.
pub const SPAN_DELIM: &str = "<delim>";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const EOU_ID: usize = 2;
pub const EOS_SPAN_ID: usize = 3;
pub const DELIM_ID: usize = 4;
pub const NUM_RESERVED: usize = 5;

const RESERVED: [&str; NUM_RESERVED] = [PAD, UNK, EOS_UTTERANCE, EOS_SPAN, SPAN_DELIM];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens first, then the remaining tokens in the given order.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.push(t);
        }
        for t in tokens {
            v.push(t.as_ref());
        }
        v
    }

    fn push(&mut self, t: &str) {
        if !self.index.contains_key(t) {
            self.index.insert(t.to_string(), self.tokens.len());
            self.tokens.push(t.to_string());
        }
    }

    /// Every token of user turns, delexicalized responses and the schema,
    /// sorted, after the reserved block.
    pub fn build(sessions: &[DialogueSession], schema: &SlotSchema) -> Self {
        let mut set = BTreeSet::new();
        for s in sessions {
            for t in &s.turns {
                set.extend(t.user.split_whitespace().map(str::to_string));
                set.extend(t.resp_delex.split_whitespace().map(str::to_string));
            }
        }
        for slot in &schema.informable {
            set.extend(slot.values.iter().cloned());
        }
        set.extend(schema.requestable.iter().cloned());
        set.extend(schema.placeholders());
        for r in RESERVED {
            set.remove(r);
        }
        Vocabulary::from_tokens(set)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    pub fn is_reserved(id: usize) -> bool {
        id < NUM_RESERVED
    }

    /// FNV-1a over the newline-joined token list, as 16 hex digits.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tokens {
            for b in t.bytes().chain(std::iter::once(b'\n')) {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        format!("{h:016x}")
    }
}
