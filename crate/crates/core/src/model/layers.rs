//! Attention, decoder step, generation and copy scoring, and the
//! shared-normalizer mixture.

use serde::{Deserialize, Serialize};
use sedst_autodiff::{Error as TensorError, Graph, Var};

use super::Decoder;
use crate::{Error, Result};

/// Origin of a share of a mixture distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    Generation,
    /// Copy from R_{t-1} U_t (and R_t for the posterior).
    ContextCopy,
    /// Copy from the previous turn's span S_{t-1}.
    PreviousSpanCopy,
    /// Copy from the current span S_t into the response.
    SpanCopy,
}

impl Component {
    pub fn short_name(self) -> &'static str {
        match self {
            Component::Generation => "gen",
            Component::ContextCopy => "ctx",
            Component::PreviousSpanCopy => "prev",
            Component::SpanCopy => "span",
        }
    }
}

/// Rows a decoder attends over, with their `W_1` projections precomputed.
#[derive(Clone, Copy, Debug)]
pub struct Memory {
    pub rows: Var,
    keys: Var,
}

impl Memory {
    pub fn new(g: &mut Graph, dec: &Decoder, rows: Var) -> Self {
        let w1 = g.param(dec.w1);
        let keys = g.linear_rows(rows, w1);
        Memory { rows, keys }
    }

    pub fn len(&self, g: &Graph) -> usize {
        g.shape(self.rows)[0]
    }
}

/// Additive attention: `a = softmax(v_1ᵀ tanh(W_1 h_i + W_2 h_prev))`,
/// context `Σ_i a_i h_i`. Returns `(weights, context)`.
pub fn attend(g: &mut Graph, dec: &Decoder, mem: &Memory, h_prev: Var) -> (Var, Var) {
    let (w2, v1) = (g.param(dec.w2), g.param(dec.v1));
    let q = g.matvec(w2, h_prev);
    let s = g.add_row(mem.keys, q);
    let s = g.tanh(s);
    let scores = g.linear_rows(s, v1);
    let a = g.softmax(scores);
    let ctx = g.vecmat(a, mem.rows);
    (a, ctx)
}

/// GRU over the previous token's embedding concatenated with the context.
pub fn decode_step(
    g: &mut Graph,
    dec: &Decoder,
    prev_embedding: Var,
    h_prev: Var,
    context: Var,
) -> Result<Var> {
    let x = g.concat(&[prev_embedding, context]);
    Ok(dec.gru.step(g, x, h_prev)?)
}

/// Unnormalized generation scores `W_3 h`.
pub fn generation_scores(g: &mut Graph, dec: &Decoder, h: Var) -> Var {
    let w3 = g.param(dec.w3);
    g.matvec(w3, h)
}

/// What sits at each position of a copy source.
#[derive(Clone, Debug)]
pub enum SourceContent {
    /// Observed tokens; copying is deterministic.
    Tokens(Vec<usize>),
    /// One distribution over the vocabulary per position, as a `[L, V]`
    /// matrix; copying is implicit.
    Dists(Var),
}

#[derive(Clone, Debug)]
pub struct CopySource {
    pub component: Component,
    pub hidden: Var,
    keys: Var,
    pub content: SourceContent,
}

impl CopySource {
    /// `hidden` holds one row per source position; PAD positions must
    /// already be removed.
    pub fn new(
        g: &mut Graph,
        dec: &Decoder,
        component: Component,
        hidden: Var,
        content: SourceContent,
    ) -> Result<Self> {
        let rows = g.shape(hidden)[0];
        let n = match &content {
            SourceContent::Tokens(t) => t.len(),
            SourceContent::Dists(d) => g.shape(*d)[0],
        };
        if rows != n {
            return Err(TensorError::Dimension {
                op: "copy source",
                expected: rows.to_string(),
                found: n.to_string(),
            }
            .into());
        }
        let w4 = g.param(dec.w4);
        let keys = g.linear_rows(hidden, w4);
        Ok(CopySource {
            component,
            hidden,
            keys,
            content,
        })
    }

    pub fn len(&self, g: &Graph) -> usize {
        g.shape(self.hidden)[0]
    }
}

/// `ψ_i = v_2ᵀ tanh(W_4 h_i + W_5 h)` for every source position.
pub fn copy_scores(g: &mut Graph, dec: &Decoder, src: &CopySource, h: Var) -> Var {
    let (w5, v2) = (g.param(dec.w5), g.param(dec.v2));
    let q = g.matvec(w5, h);
    let s = g.add_row(src.keys, q);
    let s = g.tanh(s);
    g.linear_rows(s, v2)
}

/// Vocabulary-space mass `Σ_i p_i(v) · exp(ψ_i − shift)`, with `p_i` one-hot
/// for token sources.
pub fn project_copy_mass(g: &mut Graph, src: &CopySource, psi: Var, shift: f64, vocab: usize) -> Var {
    let s = g.offset(psi, -shift);
    let e = g.exp(s);
    match &src.content {
        SourceContent::Tokens(t) => g.scatter(e, t, vocab),
        SourceContent::Dists(d) => g.vecmat(e, *d),
    }
}

/// Per-step output distribution with its component bookkeeping.
///
/// Masses are stored relative to `exp(shift)`, i.e. the true unnormalized
/// mass of a component is `mass · exp(shift)`; likewise for `normalizer`.
#[derive(Clone, Debug)]
pub struct MixtureDistribution {
    pub probs: Var,
    pub components: Vec<(Component, f64)>,
    pub normalizer: f64,
    pub shift: f64,
}

impl MixtureDistribution {
    pub fn mass(&self, c: Component) -> Option<f64> {
        self.components.iter().find(|(k, _)| *k == c).map(|(_, m)| *m)
    }

    /// Component masses divided by the normalizer.
    pub fn shares(&self) -> Vec<(Component, f64)> {
        self.components
            .iter()
            .map(|&(c, m)| (c, m / self.normalizer))
            .collect()
    }
}

/// `p(v) = (exp(gen_v) + Σ_sources mass_v) / Z` with one normalizer `Z`
/// shared by generation and every copy source.
pub fn mix_distribution(
    g: &mut Graph,
    gen: Var,
    copies: &[(&CopySource, Var)],
) -> Result<MixtureDistribution> {
    let vocab = g.value(gen).len();
    let shift = copies
        .iter()
        .flat_map(|(_, psi)| g.value(*psi).iter())
        .chain(g.value(gen))
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !shift.is_finite() {
        return Err(Error::Numerical(format!("non-finite score {shift} in mixture")));
    }
    let s = g.offset(gen, -shift);
    let gen_e = g.exp(s);
    let mut components = vec![(Component::Generation, g.value(gen_e).iter().sum::<f64>())];
    let mut total = gen_e;
    for (src, psi) in copies {
        let m = project_copy_mass(g, src, *psi, shift, vocab);
        components.push((src.component, g.value(m).iter().sum()));
        total = g.add(total, m);
    }
    let normalizer: f64 = g.value(total).iter().sum();
    if !(normalizer > 0.0) || !normalizer.is_finite() {
        return Err(Error::Degenerate(format!("normalizer {normalizer}")));
    }
    let probs = g.normalize(total);
    Ok(MixtureDistribution {
        probs,
        components,
        normalizer,
        shift,
    })
}
