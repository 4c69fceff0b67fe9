//! Inference: beam search for responses, greedy span decoding, and the
//! per-turn pipeline that ties them to the knowledge base.

mod beam;
mod dialogue;

pub use beam::{beam_search, greedy_decode, BeamConfig, BeamHypothesis, BeamResult, StepModel};
pub use dialogue::{
    decode_span, format_span_trace, run_dialogue, DialogueConfig, DialogueInput, DialogueRunner,
    ResponseSteps, TurnOutput,
};
