//! Context encoding, span decoding, and the response and reconstruction
//! decoders wired together by copy flows.

use serde::{Deserialize, Serialize};
use sedst_autodiff::nn::Gru;
use sedst_autodiff::{Graph, ParamId, Var};

use super::layers::{
    attend, copy_scores, decode_step, generation_scores, mix_distribution, Component, CopySource,
    Memory, MixtureDistribution, SourceContent,
};
use super::{Decoder, Model, Network};
use crate::vocab::{EOS_SPAN_ID, EOU_ID, NUM_RESERVED, PAD_ID};
use crate::{Error, Result};

/// Token ids of one turn; `response` is the gold R_t when known.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TurnInput {
    pub prev_response: Vec<usize>,
    pub user: Vec<usize>,
    pub response: Option<Vec<usize>>,
}

/// Pads or truncates every segment to `n` and concatenates them.
pub fn context_tokens(segments: &[&[usize]], n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(segments.len() * n);
    for s in segments {
        let k = s.len().min(n);
        out.extend_from_slice(&s[..k]);
        out.extend(std::iter::repeat(PAD_ID).take(n - k));
    }
    out
}

/// Encoder output. Rows of `hidden` cover every position; `kept` lists the
/// non-PAD positions that attention and copying may use.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub tokens: Vec<usize>,
    pub hidden: Var,
    pub kept: Vec<usize>,
    pub kept_hidden: Var,
    /// Hidden state after the last non-PAD token.
    pub final_hidden: Var,
}

impl Encoded {
    pub fn kept_tokens(&self) -> Vec<usize> {
        self.kept.iter().map(|&i| self.tokens[i]).collect()
    }
}

fn check_tokens(tokens: &[usize], vocab: usize) -> Result<()> {
    match tokens.iter().find(|&&t| t >= vocab) {
        Some(t) => Err(Error::Index(format!("token id {t} outside vocabulary of {vocab}"))),
        None => Ok(()),
    }
}

fn run_gru(g: &mut Graph, gru: &Gru, embedding: ParamId, tokens: &[usize]) -> Result<Vec<Var>> {
    let emb = g.param(embedding);
    let mut h = g.zeros(gru.hidden_size);
    let mut hs = Vec::with_capacity(tokens.len());
    for &t in tokens {
        let x = g.row(emb, t);
        h = gru.step(g, x, h)?;
        hs.push(h);
    }
    Ok(hs)
}

/// One forward GRU over the embedded (already padded) token sequence.
pub fn encode_context(g: &mut Graph, net: &Network, tokens: &[usize], vocab: usize) -> Result<Encoded> {
    if tokens.is_empty() {
        return Err(Error::Contract("cannot encode an empty sequence".into()));
    }
    check_tokens(tokens, vocab)?;
    let hs = run_gru(g, &net.encoder, net.embedding, tokens)?;
    let hidden = g.stack_rows(&hs);
    let kept: Vec<usize> = (0..tokens.len()).filter(|&i| tokens[i] != PAD_ID).collect();
    let kept_hidden = g.select_rows(hidden, &kept);
    let last = kept.last().copied().unwrap_or(tokens.len() - 1);
    Ok(Encoded {
        tokens: tokens.to_vec(),
        hidden,
        kept,
        kept_hidden,
        final_hidden: hs[last],
    })
}

/// How a free-running span decoder stops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanStop {
    /// Until the end-of-span token, at most `2 · span_len` steps.
    EosTerminated,
    /// Exactly `span_len` steps, reserved tokens never emitted.
    FixedLength,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanDecodeConfig {
    pub stop: SpanStop,
    pub span_len: usize,
    pub no_repeat: bool,
}

impl SpanDecodeConfig {
    pub fn validate(&self, vocab: usize) -> Result<()> {
        if self.span_len == 0 {
            return Err(Error::Config("span length must be at least 1".into()));
        }
        if self.stop == SpanStop::FixedLength
            && self.no_repeat
            && self.span_len > vocab.saturating_sub(NUM_RESERVED)
        {
            return Err(Error::Config(format!(
                "{} distinct span tokens requested from {} usable vocabulary entries",
                self.span_len,
                vocab.saturating_sub(NUM_RESERVED)
            )));
        }
        Ok(())
    }

    pub fn max_steps(&self) -> usize {
        match self.stop {
            SpanStop::EosTerminated => 2 * self.span_len,
            SpanStop::FixedLength => self.span_len,
        }
    }

    /// Highest-probability admissible token, lowest id on ties.
    pub fn choose(&self, probs: &[f64], emitted: &[usize]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (v, &p) in probs.iter().enumerate() {
            let reserved = v < NUM_RESERVED;
            let banned = match self.stop {
                SpanStop::FixedLength => reserved,
                SpanStop::EosTerminated => v == PAD_ID,
            } || (self.no_repeat && !reserved && emitted.contains(&v));
            if !banned && best.map_or(true, |(_, bp)| p > bp) {
                best = Some((v, p));
            }
        }
        best.map(|(v, _)| v)
    }
}

#[derive(Clone, Copy, Debug)]
pub enum SpanMode<'a> {
    /// Condition on the given tokens, which are also the targets.
    TeacherForced(&'a [usize]),
    /// Feed back the decoder's own choices.
    Free(SpanDecodeConfig),
}

/// A decoded or teacher-forced span with everything later copy flows need.
#[derive(Clone, Debug)]
pub struct SpanTrace {
    pub tokens: Vec<usize>,
    /// One decoder hidden state per emitted token, `[T, H]`.
    pub hidden: Var,
    /// Per-step distributions stacked as `[T, V]`.
    pub probs: Var,
    pub dists: Vec<MixtureDistribution>,
    pub final_hidden: Var,
    /// Free-running decode hit its step cap without an end token.
    pub truncated: bool,
}

impl SpanTrace {
    /// Copy-source content: the tokens themselves, or the distributions.
    pub fn content(&self, deterministic: bool) -> SourceContent {
        if deterministic {
            SourceContent::Tokens(self.tokens.clone())
        } else {
            SourceContent::Dists(self.probs)
        }
    }
}

/// The previous turn's span as a copy source.
#[derive(Clone, Copy, Debug)]
pub struct SpanSource<'a> {
    pub trace: &'a SpanTrace,
    /// Copy the tokens (gold spans) rather than the distributions.
    pub deterministic: bool,
}

/// A decoder bound to its attention memory and copy sources.
#[derive(Clone, Debug)]
pub struct FlowDecoder {
    pub decoder: Decoder,
    pub embedding: ParamId,
    pub memory: Memory,
    pub sources: Vec<CopySource>,
    pub vocab: usize,
}

impl FlowDecoder {
    /// Attention with the previous hidden state, the GRU update, then the
    /// mixture over generation and every copy source.
    pub fn step(&self, g: &mut Graph, prev_token: usize, h_prev: Var) -> Result<(Var, MixtureDistribution)> {
        check_tokens(&[prev_token], self.vocab)?;
        let (_, ctx) = attend(g, &self.decoder, &self.memory, h_prev);
        let emb = g.param(self.embedding);
        let e = g.row(emb, prev_token);
        let h = decode_step(g, &self.decoder, e, h_prev, ctx)?;
        let gen = generation_scores(g, &self.decoder, h);
        let psis: Vec<Var> = self
            .sources
            .iter()
            .map(|s| copy_scores(g, &self.decoder, s, h))
            .collect();
        let copies: Vec<(&CopySource, Var)> = self.sources.iter().zip(psis).collect();
        let dist = mix_distribution(g, gen, &copies)?;
        Ok((h, dist))
    }
}

/// Runs `fd` from `h0` on `start` followed by `targets[..n-1]`, returning
/// the per-step distributions (aligned with `targets`) and hidden states.
pub fn teacher_force(
    g: &mut Graph,
    fd: &FlowDecoder,
    h0: Var,
    start: usize,
    targets: &[usize],
) -> Result<(Vec<MixtureDistribution>, Vec<Var>)> {
    check_tokens(targets, fd.vocab)?;
    let mut h = h0;
    let mut prev = start;
    let mut dists = Vec::with_capacity(targets.len());
    let mut hs = Vec::with_capacity(targets.len());
    for &t in targets {
        let (h2, d) = fd.step(g, prev, h)?;
        h = h2;
        dists.push(d);
        hs.push(h);
        prev = t;
    }
    Ok((dists, hs))
}

fn span_decoder(
    g: &mut Graph,
    net: &Network,
    enc: &Encoded,
    prev: Option<SpanSource>,
    vocab: usize,
) -> Result<FlowDecoder> {
    if enc.kept.is_empty() {
        return Err(Error::Contract("context has no non-PAD token".into()));
    }
    let memory = Memory::new(g, &net.span, enc.kept_hidden);
    let mut sources = vec![CopySource::new(
        g,
        &net.span,
        Component::ContextCopy,
        enc.kept_hidden,
        SourceContent::Tokens(enc.kept_tokens()),
    )?];
    if let Some(p) = prev {
        sources.push(CopySource::new(
            g,
            &net.span,
            Component::PreviousSpanCopy,
            p.trace.hidden,
            p.trace.content(p.deterministic),
        )?);
    }
    Ok(FlowDecoder {
        decoder: net.span.clone(),
        embedding: net.embedding,
        memory,
        sources,
        vocab,
    })
}

fn run_span(
    g: &mut Graph,
    net: &Network,
    enc: &Encoded,
    prev: Option<SpanSource>,
    mode: SpanMode,
    vocab: usize,
) -> Result<SpanTrace> {
    let fd = span_decoder(g, net, enc, prev, vocab)?;
    let (tokens, dists, hs, truncated) = match mode {
        SpanMode::TeacherForced(targets) => {
            if targets.is_empty() {
                return Err(Error::Contract("empty teacher-forced span".into()));
            }
            let (d, h) = teacher_force(g, &fd, enc.final_hidden, EOS_SPAN_ID, targets)?;
            (targets.to_vec(), d, h, false)
        }
        SpanMode::Free(cfg) => {
            cfg.validate(vocab)?;
            let mut h = enc.final_hidden;
            let mut prev_tok = EOS_SPAN_ID;
            let (mut tokens, mut dists, mut hs) = (Vec::new(), Vec::new(), Vec::new());
            let mut finished = false;
            for _ in 0..cfg.max_steps() {
                let (h2, d) = fd.step(g, prev_tok, h)?;
                h = h2;
                let tok = cfg
                    .choose(g.value(d.probs), &tokens)
                    .ok_or_else(|| Error::Degenerate("no admissible span token".into()))?;
                tokens.push(tok);
                dists.push(d);
                hs.push(h);
                prev_tok = tok;
                if cfg.stop == SpanStop::EosTerminated && tok == EOS_SPAN_ID {
                    finished = true;
                    break;
                }
            }
            let truncated = cfg.stop == SpanStop::EosTerminated && !finished;
            (tokens, dists, hs, truncated)
        }
    };
    let hidden = g.stack_rows(&hs);
    let rows: Vec<Var> = dists.iter().map(|d| d.probs).collect();
    let probs = g.stack_rows(&rows);
    Ok(SpanTrace {
        tokens,
        hidden,
        probs,
        final_hidden: *hs.last().expect("span has at least one step"),
        dists,
        truncated,
    })
}

/// Prior span distributions over an encoding of R_{t-1} U_t.
pub fn prior_span_distributions(
    g: &mut Graph,
    model: &Model,
    turn: &TurnInput,
    prev: Option<SpanSource>,
    mode: SpanMode,
) -> Result<(Encoded, SpanTrace)> {
    let n = model.config.utterance_len;
    let tokens = context_tokens(&[&turn.prev_response, &turn.user], n);
    let enc = encode_context(g, &model.prior, &tokens, model.config.vocab_size)?;
    let span = run_span(g, &model.prior, &enc, prev, mode, model.config.vocab_size)?;
    Ok((enc, span))
}

/// Posterior span distributions; the encoder also reads the gold R_t.
pub fn posterior_span_distributions(
    g: &mut Graph,
    model: &Model,
    turn: &TurnInput,
    prev: Option<SpanSource>,
    mode: SpanMode,
) -> Result<(Encoded, SpanTrace)> {
    let response = turn.response.as_ref().ok_or_else(|| {
        Error::Contract("the posterior network needs the gold response; use the prior at inference".into())
    })?;
    let n = model.config.utterance_len;
    let tokens = context_tokens(&[&turn.prev_response, &turn.user, response], n);
    let enc = encode_context(g, &model.posterior, &tokens, model.config.vocab_size)?;
    let span = run_span(g, &model.posterior, &enc, prev, mode, model.config.vocab_size)?;
    Ok((enc, span))
}

/// Response decoder attending over R_{t-1} U_t and S_t and copying from S_t.
/// Returns the bound decoder and its initial hidden state.
pub fn response_decoder(
    g: &mut Graph,
    model: &Model,
    enc: &Encoded,
    span: &SpanTrace,
    deterministic: bool,
) -> Result<(FlowDecoder, Var)> {
    let rows = if enc.kept.is_empty() {
        span.hidden
    } else {
        g.stack_rows(&[enc.kept_hidden, span.hidden])
    };
    let memory = Memory::new(g, &model.response, rows);
    let source = CopySource::new(
        g,
        &model.response,
        Component::SpanCopy,
        span.hidden,
        span.content(deterministic),
    )?;
    Ok((
        FlowDecoder {
            decoder: model.response.clone(),
            embedding: model.prior.embedding,
            memory,
            sources: vec![source],
            vocab: model.config.vocab_size,
        },
        span.final_hidden,
    ))
}

/// Gold response tokens truncated to N with the end-of-utterance token.
pub fn response_target(response: &[usize], n: usize) -> Vec<usize> {
    let mut t = response[..response.len().min(n)].to_vec();
    t.push(EOU_ID);
    t
}

/// Teacher-forced response distributions, one per token of
/// [`response_target`].
pub fn response_distributions(
    g: &mut Graph,
    model: &Model,
    enc: &Encoded,
    span: &SpanTrace,
    deterministic: bool,
    response: &[usize],
) -> Result<Vec<MixtureDistribution>> {
    let (fd, h0) = response_decoder(g, model, enc, span, deterministic)?;
    let target = response_target(response, model.config.utterance_len);
    Ok(teacher_force(g, &fd, h0, EOU_ID, &target)?.0)
}

/// `R_{t-1} </u> U_t </u> R_t </u>`, each part truncated to N.
pub fn reconstruction_target(turn: &TurnInput, n: usize) -> Vec<usize> {
    let empty = Vec::new();
    let response = turn.response.as_ref().unwrap_or(&empty);
    let mut out = Vec::new();
    for part in [&turn.prev_response, &turn.user, response] {
        out.extend(part.iter().take(n).filter(|&&t| t != PAD_ID));
        out.push(EOU_ID);
    }
    out
}

/// Reconstruction of the posterior's input from its span alone.
pub fn reconstruction_distributions(
    g: &mut Graph,
    model: &Model,
    span: &SpanTrace,
    target: &[usize],
) -> Result<Vec<MixtureDistribution>> {
    let memory = Memory::new(g, &model.reconstruction, span.hidden);
    let source = CopySource::new(
        g,
        &model.reconstruction,
        Component::SpanCopy,
        span.hidden,
        span.content(false),
    )?;
    let fd = FlowDecoder {
        decoder: model.reconstruction.clone(),
        embedding: model.posterior.embedding,
        memory,
        sources: vec![source],
        vocab: model.config.vocab_size,
    };
    Ok(teacher_force(g, &fd, span.final_hidden, EOU_ID, target)?.0)
}
