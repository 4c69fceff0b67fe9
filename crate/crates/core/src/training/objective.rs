//! Per-session loss assembly for the joint (L1) and reconstruction (L2)
//! objectives.

use serde::{Deserialize, Serialize};
use sedst_autodiff::{Gradients, Graph, ParamStore, Var};

use super::data::PreparedSession;
use crate::model::{
    posterior_span_distributions, prior_span_distributions, reconstruction_distributions,
    reconstruction_target, response_distributions, response_target, MixtureDistribution, Model,
    SpanDecodeConfig, SpanMode, SpanSource, SpanStop, SpanTrace,
};
use crate::{Error, Result};

pub const KL_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Joint likelihood on annotated turns plus KL on unannotated ones (L1).
    Joint,
    /// Response plus reconstruction likelihood and KL, no gold spans (L2).
    Reconstruction,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    pub objective: Objective,
    pub lambda: f64,
    /// When false the KL term is still measured but carries no weight.
    pub regularize: bool,
    pub span_len: usize,
    pub kl_floor: f64,
}

impl LossSettings {
    pub fn new(objective: Objective, lambda: f64, span_len: usize) -> Self {
        LossSettings {
            objective,
            lambda,
            regularize: true,
            span_len,
            kl_floor: KL_FLOOR,
        }
    }

    fn kl_weight(&self) -> f64 {
        if self.regularize {
            self.lambda
        } else {
            0.0
        }
    }

    /// How the posterior decodes a span for an unannotated turn.
    pub fn free_span(&self) -> SpanDecodeConfig {
        match self.objective {
            Objective::Joint => SpanDecodeConfig {
                stop: SpanStop::EosTerminated,
                span_len: self.span_len,
                no_repeat: false,
            },
            Objective::Reconstruction => SpanDecodeConfig {
                stop: SpanStop::FixedLength,
                span_len: self.span_len,
                no_repeat: true,
            },
        }
    }
}

/// Loss components summed over turns. `kl_term` is the unweighted KL sum;
/// `total = response + span_prior + span_posterior + reconstruction + w · kl`
/// with `w = λ`, or 0 when regularization is off.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub response_nll: f64,
    pub span_prior_nll: f64,
    pub span_posterior_nll: f64,
    pub reconstruction_nll: f64,
    pub kl_term: f64,
    pub total: f64,
    pub sessions: usize,
    pub turns: usize,
    /// Gold spans present but ignored by the reconstruction objective.
    pub ignored_gold_turns: usize,
}

impl LossBreakdown {
    pub fn add(&mut self, o: &LossBreakdown) {
        self.response_nll += o.response_nll;
        self.span_prior_nll += o.span_prior_nll;
        self.span_posterior_nll += o.span_posterior_nll;
        self.reconstruction_nll += o.reconstruction_nll;
        self.kl_term += o.kl_term;
        self.total += o.total;
        self.sessions += o.sessions;
        self.turns += o.turns;
        self.ignored_gold_turns += o.ignored_gold_turns;
    }

    /// Components divided by the session count.
    pub fn per_session(&self) -> LossBreakdown {
        let n = self.sessions.max(1) as f64;
        LossBreakdown {
            response_nll: self.response_nll / n,
            span_prior_nll: self.span_prior_nll / n,
            span_posterior_nll: self.span_posterior_nll / n,
            reconstruction_nll: self.reconstruction_nll / n,
            kl_term: self.kl_term / n,
            total: self.total / n,
            ..self.clone()
        }
    }
}

pub(crate) fn nll(g: &mut Graph, dists: &[MixtureDistribution], targets: &[usize]) -> Var {
    let terms: Vec<Var> = dists
        .iter()
        .zip(targets)
        .map(|(d, &t)| {
            let p = g.pick(d.probs, t);
            let l = g.ln(p);
            g.scale(l, -1.0)
        })
        .collect();
    g.sum_all(&terms)
}

/// Σ_i KL(q_i ‖ p_i) over aligned steps.
pub(crate) fn span_kl(g: &mut Graph, q: &SpanTrace, p: &SpanTrace, floor: f64) -> Var {
    let terms: Vec<Var> = q
        .dists
        .iter()
        .zip(&p.dists)
        .map(|(a, b)| g.kl(a.probs, b.probs, floor))
        .collect();
    g.sum_all(&terms)
}

#[derive(Default)]
struct Parts {
    response: Vec<Var>,
    prior: Vec<Var>,
    posterior: Vec<Var>,
    recon: Vec<Var>,
    kl: Vec<Var>,
}

/// Builds the loss of one session on `g`; previous-turn spans feed the next
/// turn's copy flow, so the whole session is one graph.
pub fn session_loss(
    g: &mut Graph,
    model: &Model,
    session: &PreparedSession,
    settings: &LossSettings,
) -> Result<(Var, LossBreakdown)> {
    let n = model.config.utterance_len;
    let mut parts = Parts::default();
    let mut prev_prior: Option<(SpanTrace, bool)> = None;
    let mut prev_post: Option<(SpanTrace, bool)> = None;
    let mut ignored = 0;
    for turn in &session.turns {
        let response = turn
            .input
            .response
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("session {} lacks a gold response", session.id)))?;
        let (last_prior, last_post) = (prev_prior.take(), prev_post.take());
        let pp = last_prior.as_ref().map(|(t, d)| SpanSource { trace: t, deterministic: *d });
        let pq = last_post.as_ref().map(|(t, d)| SpanSource { trace: t, deterministic: *d });
        let gold = match settings.objective {
            Objective::Joint => turn.span.as_deref(),
            Objective::Reconstruction => {
                ignored += turn.span.is_some() as usize;
                None
            }
        };
        let (enc, p_span, q_span, deterministic) = match gold {
            Some(gold) => {
                let (enc, ps) = prior_span_distributions(g, model, &turn.input, pp, SpanMode::TeacherForced(gold))?;
                let (_, qs) = posterior_span_distributions(g, model, &turn.input, pq, SpanMode::TeacherForced(gold))?;
                parts.prior.push(nll(g, &ps.dists, gold));
                parts.posterior.push(nll(g, &qs.dists, gold));
                (enc, ps, qs, true)
            }
            None => {
                let (_, qs) = posterior_span_distributions(
                    g,
                    model,
                    &turn.input,
                    pq,
                    SpanMode::Free(settings.free_span()),
                )?;
                let tokens = qs.tokens.clone();
                let (enc, ps) = prior_span_distributions(g, model, &turn.input, pp, SpanMode::TeacherForced(&tokens))?;
                parts.kl.push(span_kl(g, &qs, &ps, settings.kl_floor));
                if settings.objective == Objective::Reconstruction {
                    let target = reconstruction_target(&turn.input, n);
                    let r = reconstruction_distributions(g, model, &qs, &target)?;
                    parts.recon.push(nll(g, &r, &target));
                }
                (enc, ps, qs, false)
            }
        };
        let r = response_distributions(g, model, &enc, &p_span, deterministic, response)?;
        parts.response.push(nll(g, &r, &response_target(response, n)));
        prev_prior = Some((p_span, deterministic));
        prev_post = Some((q_span, deterministic));
    }
    let resp = g.sum_all(&parts.response);
    let prior = g.sum_all(&parts.prior);
    let post = g.sum_all(&parts.posterior);
    let recon = g.sum_all(&parts.recon);
    let kl = g.sum_all(&parts.kl);
    let kl_w = g.scale(kl, settings.kl_weight());
    let total = g.sum_all(&[resp, prior, post, recon, kl_w]);
    let breakdown = LossBreakdown {
        response_nll: g.scalar_value(resp),
        span_prior_nll: g.scalar_value(prior),
        span_posterior_nll: g.scalar_value(post),
        reconstruction_nll: g.scalar_value(recon),
        kl_term: g.scalar_value(kl),
        total: g.scalar_value(total),
        sessions: 1,
        turns: session.turns.len(),
        ignored_gold_turns: ignored,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::Numerical(format!("loss of session {} is {}", session.id, breakdown.total)));
    }
    Ok((total, breakdown))
}

/// Summed loss over a batch and, if requested, the gradient of the mean
/// per-session loss.
pub fn batch_loss(
    store: &ParamStore,
    model: &Model,
    batch: &[&PreparedSession],
    settings: &LossSettings,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut acc = LossBreakdown::default();
    let mut grads = with_grad.then(|| Gradients::zeros_like(store));
    for s in batch {
        let mut g = Graph::new(store);
        let (total, b) = session_loss(&mut g, model, s, settings)?;
        acc.add(&b);
        if let Some(gr) = grads.as_mut() {
            gr.accumulate(&g.backward(total)?);
        }
    }
    if let Some(gr) = grads.as_mut() {
        gr.scale(1.0 / batch.len() as f64);
    }
    Ok((acc, grads))
}

/// L1 over a batch mixing annotated and unannotated sessions.
pub fn loss_semi_supervised(
    store: &ParamStore,
    model: &Model,
    batch: &[PreparedSession],
    lambda: f64,
) -> Result<LossBreakdown> {
    let s = LossSettings::new(Objective::Joint, lambda, model.config.span_len);
    let refs: Vec<&PreparedSession> = batch.iter().collect();
    Ok(batch_loss(store, model, &refs, &s, false)?.0)
}

/// L2 over a batch; gold spans, if any, are ignored and counted.
pub fn loss_unsupervised(
    store: &ParamStore,
    model: &Model,
    batch: &[PreparedSession],
    lambda: f64,
) -> Result<LossBreakdown> {
    let s = LossSettings::new(Objective::Reconstruction, lambda, model.config.span_len);
    let refs: Vec<&PreparedSession> = batch.iter().collect();
    Ok(batch_loss(store, model, &refs, &s, false)?.0)
}
