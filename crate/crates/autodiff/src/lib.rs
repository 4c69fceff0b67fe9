//! Dense `f64` tensors with a reverse-mode gradient tape.
//!
//! This is the numeric substrate for the dialogue model: a [`Graph`] records
//! primitive operations as they are evaluated, [`Graph::backward`] replays
//! them in reverse to produce a [`Gradients`] map keyed by parameter, and
//! [`adam_step`] applies the update to a [`ParamStore`].

mod adam;
pub mod checkpoint;
mod error;
mod gradcheck;
mod graph;
pub mod nn;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use error::{Error, Result};
pub use gradcheck::{finite_difference_check, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use graph::{Graph, Var};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
