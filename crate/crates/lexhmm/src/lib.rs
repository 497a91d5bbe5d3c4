//! First-order hidden-Markov-model part-of-speech tagging with selective
//! lexicalization: uncommon words whose transition behaviour deviates from
//! their category's are promoted to word-specific states.

pub mod cli;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod lexicalize;
pub mod model;
pub mod model_file;

pub use error::{Error, Result};
