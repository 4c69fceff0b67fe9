pub mod corpus;
pub mod decoding;
pub mod evaluation;
mod error;
pub mod model;
pub mod persist;
pub mod pipeline;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
