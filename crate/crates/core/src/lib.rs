//! Cross-lingual example retrieval for in-context learning.
//!
//! An English pool of labelled examples is embedded with a multilingual
//! encoder. A small linear head on top of the frozen embeddings is trained
//! contrastively, using positives and negatives derived from how well each
//! candidate works as a 1-shot demonstration. At test time the head
//! retrieves English demonstrations for queries in other languages.

pub mod corpus;
pub mod dataconstruct;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod retrieval;
pub mod scorer;
pub mod selftest;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
