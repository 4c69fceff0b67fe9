//! Beam search over any step-wise next-token model.

use std::cmp::Ordering;

use crate::{Error, Result};

/// A left-to-right model: from a state and the previous token, the next
/// state and the distribution over the next token.
pub trait StepModel {
    type State: Clone;
    fn step(&mut self, state: &Self::State, prev: usize) -> Result<(Self::State, Vec<f64>)>;
}

#[derive(Clone, Debug)]
pub struct BeamHypothesis<S> {
    /// Emitted tokens, including the end token once finished.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: S,
    pub finished: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Most tokens a hypothesis may emit, the end token included.
    pub max_len: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamResult {
    /// Tokens without the end token.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// No hypothesis emitted the end token within `max_len`.
    pub truncated: bool,
}

impl BeamResult {
    fn from_hyp<S>(h: &BeamHypothesis<S>, end: usize) -> Self {
        let mut tokens = h.tokens.clone();
        if h.finished && tokens.last() == Some(&end) {
            tokens.pop();
        }
        BeamResult {
            tokens,
            log_prob: h.log_prob,
            truncated: !h.finished,
        }
    }
}

/// Higher score first, then shorter, then lexicographically smaller.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.len().cmp(&b.1.len()))
        .then_with(|| a.1.cmp(b.1))
}

/// Finished beats unfinished, then [`rank`].
fn result_order(a: &BeamResult, b: &BeamResult) -> Ordering {
    a.truncated
        .cmp(&b.truncated)
        .then_with(|| rank((a.log_prob, &a.tokens), (b.log_prob, &b.tokens)))
}

fn check(cfg: &BeamConfig) -> Result<()> {
    if cfg.beam_size == 0 || cfg.max_len == 0 {
        return Err(Error::Config("beam size and length limit must be positive".into()));
    }
    Ok(())
}

fn check_dist(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Degenerate("step distribution is empty or invalid".into()));
    }
    Ok(())
}

/// Stepwise argmax, lowest id on ties.
pub fn greedy_decode<M: StepModel>(model: &mut M, init: M::State, cfg: &BeamConfig) -> Result<BeamResult> {
    check(cfg)?;
    let (mut state, mut prev) = (init, cfg.start);
    let mut hyp = BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: (),
        finished: false,
    };
    while hyp.tokens.len() < cfg.max_len {
        let (next, p) = model.step(&state, prev)?;
        check_dist(&p)?;
        let mut best = 0;
        for (v, &pv) in p.iter().enumerate() {
            if pv > p[best] {
                best = v;
            }
        }
        hyp.tokens.push(best);
        hyp.log_prob += p[best].ln();
        state = next;
        prev = best;
        if best == cfg.end {
            hyp.finished = true;
            break;
        }
    }
    Ok(BeamResult::from_hyp(&hyp, cfg.end))
}

/// Beam search scored by summed log probability without length
/// normalization. The best finished hypothesis wins, ties going to the
/// earlier finish and then to the lexicographically smaller sequence; with no
/// finished hypothesis the best unfinished one is returned as truncated.
/// For beams wider than one the greedy path is decoded as well and kept if
/// it scores higher, so widening the beam never lowers the returned score.
pub fn beam_search<M: StepModel>(model: &mut M, init: M::State, cfg: &BeamConfig) -> Result<BeamResult> {
    check(cfg)?;
    let mut live = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: init.clone(),
        finished: false,
    }];
    let mut finished: Vec<BeamHypothesis<M::State>> = Vec::new();
    for _ in 0..cfg.max_len {
        let mut cands: Vec<BeamHypothesis<M::State>> = Vec::new();
        for h in &live {
            let prev = h.tokens.last().copied().unwrap_or(cfg.start);
            let (next, p) = model.step(&h.state, prev)?;
            check_dist(&p)?;
            for (v, &pv) in p.iter().enumerate() {
                if pv > 0.0 {
                    let mut tokens = h.tokens.clone();
                    tokens.push(v);
                    cands.push(BeamHypothesis {
                        tokens,
                        log_prob: h.log_prob + pv.ln(),
                        state: next.clone(),
                        finished: v == cfg.end,
                    });
                }
            }
        }
        cands.sort_by(|a, b| rank((a.log_prob, &a.tokens), (b.log_prob, &b.tokens)));
        cands.truncate(cfg.beam_size);
        live.clear();
        for c in cands {
            if c.finished {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
        // Scores only fall as hypotheses grow, and ties favour the earlier
        // finish, so no live hypothesis can overtake the best finished one.
        let best_done = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        if live.is_empty() || live.iter().all(|h| h.log_prob <= best_done) {
            break;
        }
    }
    let pool = if finished.is_empty() { &live } else { &finished };
    let best = pool
        .iter()
        .min_by(|a, b| rank((a.log_prob, &a.tokens), (b.log_prob, &b.tokens)))
        .map(|h| BeamResult::from_hyp(h, cfg.end))
        .ok_or_else(|| Error::Degenerate("beam emptied".into()))?;
    if cfg.beam_size == 1 {
        return Ok(best);
    }
    let greedy = greedy_decode(model, init, cfg)?;
    Ok(if result_order(&greedy, &best) == Ordering::Less {
        greedy
    } else {
        best
    })
}
