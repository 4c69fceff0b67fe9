//! The copy-flow encoder-decoder and its prior/posterior network pair.
//!
//! Parameter names:
//!
//! ```text
//! prior.embedding, prior.encoder.*, prior.span.*        state tracker Θ
//! posterior.embedding, posterior.encoder.*, posterior.span.*   Φ
//! response.*            response decoder, shared, reads prior.embedding
//! posterior.recon.*     reconstruction decoder, reads posterior.embedding
//! ```
//!
//! Each decoder owns `gru.*`, attention `w1 w2 v1`, copy `w4 w5 v2` and the
//! output projection `w3`.

mod flow;
mod layers;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sedst_autodiff::nn::Gru;
use sedst_autodiff::{ParamId, ParamStore};

use crate::{Error, Result};

pub use flow::{
    context_tokens, encode_context, posterior_span_distributions, prior_span_distributions,
    reconstruction_distributions, reconstruction_target, response_decoder, response_distributions,
    response_target, teacher_force, Encoded, FlowDecoder, SpanDecodeConfig, SpanMode, SpanSource,
    SpanStop, SpanTrace, TurnInput,
};
pub use layers::{
    attend, copy_scores, decode_step, generation_scores, mix_distribution, project_copy_mass,
    Component, CopySource, Memory, MixtureDistribution, SourceContent,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_size: usize,
    pub hidden_size: usize,
    /// Length N that R_{t-1}, U_t and R_t are padded or truncated to.
    pub utterance_len: usize,
    /// Fixed span length T_s; also sets the cap for end-terminated spans.
    pub span_len: usize,
    pub init_range: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_size: 50,
            hidden_size: 50,
            utterance_len: 20,
            span_len: 8,
            init_range: 0.08,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= crate::vocab::NUM_RESERVED
            || self.embed_size == 0
            || self.hidden_size == 0
            || self.utterance_len == 0
            || self.span_len == 0
        {
            return Err(Error::Config(format!("degenerate model size {self:?}")));
        }
        Ok(())
    }
}

/// Parameter handles of one attention/copy decoder.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub gru: Gru,
    pub w1: ParamId,
    pub w2: ParamId,
    pub v1: ParamId,
    pub w3: ParamId,
    pub w4: ParamId,
    pub w5: ParamId,
    pub v2: ParamId,
}

impl Decoder {
    fn init<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let (e, h, r) = (cfg.embed_size, cfg.hidden_size, cfg.init_range);
        let gru = Gru::init(store, &format!("{prefix}.gru"), e + h, h, r, rng)?;
        let mut m = |name: &str, shape: &[usize]| store.insert_uniform(&format!("{prefix}.{name}"), shape, r, rng);
        Ok(Decoder {
            gru,
            w1: m("w1", &[h, h])?,
            w2: m("w2", &[h, h])?,
            v1: m("v1", &[h])?,
            w3: m("w3", &[cfg.vocab_size, h])?,
            w4: m("w4", &[h, h])?,
            w5: m("w5", &[h, h])?,
            v2: m("v2", &[h])?,
        })
    }

    fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        let id = |n: &str| store.id(&format!("{prefix}.{n}"));
        Ok(Decoder {
            gru: Gru::bind(store, &format!("{prefix}.gru"))?,
            w1: id("w1")?,
            w2: id("w2")?,
            v1: id("v1")?,
            w3: id("w3")?,
            w4: id("w4")?,
            w5: id("w5")?,
            v2: id("v2")?,
        })
    }
}

/// Embedding, context encoder and span decoder of the prior or posterior.
#[derive(Clone, Debug)]
pub struct Network {
    pub embedding: ParamId,
    pub encoder: Gru,
    pub span: Decoder,
}

impl Network {
    fn init<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let embedding = store.insert_uniform(
            &format!("{prefix}.embedding"),
            &[cfg.vocab_size, cfg.embed_size],
            cfg.init_range,
            rng,
        )?;
        let encoder = Gru::init(
            store,
            &format!("{prefix}.encoder"),
            cfg.embed_size,
            cfg.hidden_size,
            cfg.init_range,
            rng,
        )?;
        let span = Decoder::init(store, &format!("{prefix}.span"), cfg, rng)?;
        Ok(Network {
            embedding,
            encoder,
            span,
        })
    }

    fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Network {
            embedding: store.id(&format!("{prefix}.embedding"))?,
            encoder: Gru::bind(store, &format!("{prefix}.encoder"))?,
            span: Decoder::bind(store, &format!("{prefix}.span"))?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub prior: Network,
    pub posterior: Network,
    pub response: Decoder,
    pub reconstruction: Decoder,
}

pub const PRIOR: &str = "prior";
pub const POSTERIOR: &str = "posterior";

impl Model {
    /// Creates all parameters in a fresh store.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new();
        let prior = Network::init(&mut store, PRIOR, &config, rng)?;
        let posterior = Network::init(&mut store, POSTERIOR, &config, rng)?;
        let response = Decoder::init(&mut store, "response", &config, rng)?;
        let reconstruction = Decoder::init(&mut store, "posterior.recon", &config, rng)?;
        Ok((
            Model {
                config,
                prior,
                posterior,
                response,
                reconstruction,
            },
            store,
        ))
    }

    pub fn bind(config: ModelConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let emb = store.get(store.id("prior.embedding")?).shape();
        if emb != [config.vocab_size, config.embed_size] {
            return Err(Error::Config(format!(
                "stored embedding shape {emb:?} does not match the model configuration"
            )));
        }
        Ok(Model {
            prior: Network::bind(store, PRIOR)?,
            posterior: Network::bind(store, POSTERIOR)?,
            response: Decoder::bind(store, "response")?,
            reconstruction: Decoder::bind(store, "posterior.recon")?,
            config,
        })
    }
}

#[cfg(test)]
mod tests;
