//! Text and state metrics over decoded turns.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{KnowledgeBase, SlotSchema};
use crate::{Error, Result};

/// A rate with the number of items it was computed over. `undefined` marks
/// an empty denominator, in which case `value` is 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub value: f64,
    pub numerator: usize,
    pub denominator: usize,
    pub undefined: bool,
}

impl Rate {
    pub fn of(numerator: usize, denominator: usize) -> Self {
        Rate {
            value: if denominator == 0 { 0.0 } else { numerator as f64 / denominator as f64 },
            numerator,
            denominator,
            undefined: denominator == 0,
        }
    }
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4: clipped n-gram precisions summed over the corpus, uniform
/// weights and the brevity penalty `exp(1 − r/c)` when `c < r`. A
/// higher-order precision with no matches is smoothed to `1 / (total + 1)`;
/// unigram precision is never smoothed.
pub fn bleu<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Domain("BLEU of an empty corpus".into()));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c_len, mut r_len) = (0, 0);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            let cg = ngrams(c, n);
            let rg = ngrams(r, n);
            for (g, &k) in &cg {
                matched[n - 1] += k.min(rg.get(g).copied().unwrap_or(0));
                total[n - 1] += k;
            }
        }
    }
    if c_len == 0 || matched[0] == 0 {
        return Ok(0.0);
    }
    let mut log_p = 0.0;
    for n in 0..4 {
        let p = if n > 0 && matched[n] == 0 {
            1.0 / (total[n] + 1) as f64
        } else {
            matched[n] as f64 / total[n] as f64
        };
        log_p += p.ln() / 4.0;
    }
    let bp = if c_len < r_len { (1.0 - r_len as f64 / c_len as f64).exp() } else { 1.0 };
    Ok(bp * log_p.exp())
}

/// Share of non-excluded turns whose predicted informable constraints equal
/// the gold ones exactly.
pub fn joint_goal_accuracy(
    predicted: &[BTreeMap<String, String>],
    gold: &[BTreeMap<String, String>],
    excluded: &[bool],
) -> Result<Rate> {
    if predicted.len() != gold.len() || gold.len() != excluded.len() {
        return Err(Error::Contract(format!(
            "misaligned turns: {} predicted, {} gold, {} flags",
            predicted.len(),
            gold.len(),
            excluded.len()
        )));
    }
    let mut correct = 0;
    let mut counted = 0;
    for ((p, g), &x) in predicted.iter().zip(gold).zip(excluded) {
        if x {
            continue;
        }
        counted += 1;
        correct += (p == g) as usize;
    }
    Ok(Rate::of(correct, counted))
}

/// One decoded dialogue as entity match rate needs it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EntityMatchInput {
    /// Predicted informable constraints per turn.
    pub predicted: Vec<BTreeMap<String, String>>,
    /// Decoded delexicalized responses per turn.
    pub decoded: Vec<Vec<String>>,
    /// Gold delexicalized responses per turn.
    pub gold: Vec<Vec<String>>,
    pub target_entity: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityMatch {
    pub rate: Rate,
    /// Dialogues without a placeholder in any gold response.
    pub skipped: usize,
}

/// A dialogue is judged at the last turn whose gold response holds a
/// placeholder: it matches when the constraints predicted there select the
/// target entity as the first knowledge-base result. Dialogues in which the
/// model never decodes a placeholder fail; dialogues without gold
/// placeholders (or without a target) are skipped.
pub fn entity_match_rate(dialogues: &[EntityMatchInput], kb: &KnowledgeBase) -> Result<EntityMatch> {
    let mut skipped = 0;
    let mut matched = 0;
    let mut judged = 0;
    for d in dialogues {
        if d.predicted.len() != d.gold.len() || d.decoded.len() != d.gold.len() {
            return Err(Error::Contract("entity match input has misaligned turns".into()));
        }
        let has_ph = |r: &Vec<String>| r.iter().any(|t| SlotSchema::is_placeholder(t));
        let (Some(k), Some(target)) = (d.gold.iter().rposition(has_ph), d.target_entity) else {
            skipped += 1;
            continue;
        };
        judged += 1;
        if !d.decoded.iter().any(has_ph) {
            continue;
        }
        let first = kb.search(&d.predicted[k]).first().map(|e| e.id);
        matched += (first == Some(target)) as usize;
    }
    Ok(EntityMatch {
        rate: Rate::of(matched, judged),
        skipped,
    })
}

/// Function words ignored by [`predicted_keyword_proportion`].
pub const STOP_WORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "of", "to", "in", "on", "at", "for", "with", "is", "are",
    "was", "be", "it", "this", "that", "i", "you", "we", "he", "she", "they", "me", "my", "your",
    "do", "does", "not", "no", "yes", "so", "what", "there", "here", "can", "will", "would", "have",
    "has", "as", "by", "from", "if", "please", ".", ",", "?", "!",
];

/// Of the span tokens not found in the context, the share that appears in
/// the gold response. Tokens are taken per turn as sets; stop words and
/// the given `ignore` tokens (markers such as the span delimiter) never
/// count.
pub fn predicted_keyword_proportion<S: AsRef<str>>(
    spans: &[Vec<S>],
    contexts: &[Vec<S>],
    gold: &[Vec<S>],
    stop_words: &[&str],
    ignore: &[&str],
) -> Result<Rate> {
    if spans.len() != contexts.len() || spans.len() != gold.len() {
        return Err(Error::Contract("predicted keyword inputs are misaligned".into()));
    }
    let mut num = 0;
    let mut den = 0;
    for ((s, c), g) in spans.iter().zip(contexts).zip(gold) {
        let ctx: BTreeSet<&str> = c.iter().map(AsRef::as_ref).collect();
        let resp: BTreeSet<&str> = g.iter().map(AsRef::as_ref).collect();
        let toks: BTreeSet<&str> = s
            .iter()
            .map(AsRef::as_ref)
            .filter(|t| !stop_words.contains(t) && !ignore.contains(t))
            .collect();
        for t in toks {
            if ctx.contains(t) {
                continue;
            }
            den += 1;
            num += resp.contains(t) as usize;
        }
    }
    Ok(Rate::of(num, den))
}

/// Keyword rule for corpora without thanks flags: every token of the user
/// turn is in `keywords`.
pub fn is_thanks_only(user: &str, keywords: &[&str]) -> bool {
    let mut toks = user.split_whitespace().peekable();
    toks.peek().is_some() && toks.all(|t| keywords.contains(&t))
}

pub const THANKS_KEYWORDS: &[&str] = &[
    "thank", "thanks", "you", "very", "much", "that", "is", "all", "great", "ok", "okay", "bye",
    "goodbye", "cheers", "good", ".", "!",
];
