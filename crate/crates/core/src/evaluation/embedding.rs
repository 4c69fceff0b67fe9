//! Embedding-based similarity: average, greedy matching and vector extrema.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingVariant {
    Average,
    Greedy,
    Extrema,
}

/// Token vectors. Text format: one `token v_1 … v_d` line per token, all
/// with the same `d`; blank lines and lines starting with `#` are ignored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Embeddings {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl Embeddings {
    pub fn new(vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        let dim = vectors.values().next().map_or(0, Vec::len);
        if dim == 0 || vectors.values().any(|v| v.len() != dim) {
            return Err(Error::Config("embeddings need one positive, shared dimension".into()));
        }
        Ok(Embeddings { dim, vectors })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("nonempty line");
            let v: std::result::Result<Vec<f64>, _> = parts.map(str::parse).collect();
            let v = v.map_err(|e| Error::Malformed {
                line: i + 1,
                message: format!("bad component: {e}"),
            })?;
            vectors.insert(token.to_string(), v);
        }
        Self::new(vectors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut toks: Vec<&String> = self.vectors.keys().collect();
        toks.sort();
        toks.iter()
            .map(|t| {
                let v: Vec<String> = self.vectors[*t].iter().map(|x| format!("{x}")).collect();
                format!("{t} {}\n", v.join(" "))
            })
            .collect()
    }

    /// Seeded uniform vectors in `[-1, 1]^dim` for the given tokens.
    pub fn synthesize<S: AsRef<str>>(tokens: &[S], dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = tokens
            .iter()
            .map(|t| (t.as_ref().to_string(), (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        Self::new(vectors)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingScore {
    /// Mean over scored pairs; 0 when none could be scored.
    pub value: f64,
    pub pairs: usize,
    pub skipped_pairs: usize,
    pub missing_tokens: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn mean(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for v in vs {
        for (a, b) in m.iter_mut().zip(*v) {
            *a += b;
        }
    }
    m.iter().map(|x| x / vs.len() as f64).collect()
}

/// Per dimension, the component of largest magnitude (sign kept).
fn extrema(vs: &[&[f64]], dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|k| {
            vs.iter()
                .map(|v| v[k])
                .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best })
        })
        .collect()
}

fn greedy_one_way(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    let s: f64 = a
        .iter()
        .map(|x| b.iter().map(|y| cosine(x, y)).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    s / a.len() as f64
}

/// Similarity of one embedded pair.
pub fn pair_similarity(variant: EmbeddingVariant, cand: &[&[f64]], refr: &[&[f64]], dim: usize) -> f64 {
    match variant {
        EmbeddingVariant::Average => cosine(&mean(cand, dim), &mean(refr, dim)),
        EmbeddingVariant::Greedy => 0.5 * (greedy_one_way(cand, refr) + greedy_one_way(refr, cand)),
        EmbeddingVariant::Extrema => cosine(&extrema(cand, dim), &extrema(refr, dim)),
    }
}

/// Mean pair similarity. Tokens without a vector are dropped and counted;
/// a pair left with no vectors on either side is skipped.
pub fn embedding_metric<S: AsRef<str>>(
    variant: EmbeddingVariant,
    candidates: &[Vec<S>],
    references: &[Vec<S>],
    emb: &Embeddings,
) -> Result<EmbeddingScore> {
    if candidates.len() != references.len() {
        return Err(Error::Contract("embedding metric inputs are misaligned".into()));
    }
    let mut score = EmbeddingScore::default();
    let mut sum = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        let mut lookup = |toks: &[S]| -> Vec<&[f64]> {
            toks.iter()
                .filter_map(|t| {
                    let v = emb.get(t.as_ref());
                    score.missing_tokens += v.is_none() as usize;
                    v
                })
                .collect()
        };
        let (cv, rv) = (lookup(c), lookup(r));
        if cv.is_empty() || rv.is_empty() {
            score.skipped_pairs += 1;
            continue;
        }
        sum += pair_similarity(variant, &cv, &rv, emb.dim);
        score.pairs += 1;
    }
    if score.pairs > 0 {
        score.value = sum / score.pairs as f64;
    }
    Ok(score)
}
