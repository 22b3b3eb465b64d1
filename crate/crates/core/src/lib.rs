//! Word-initial abbreviation expansion for accelerated text entry.
//!
//! The crate is organised around the pipeline used to build and evaluate
//! context-aware expanders:
//!
//! - [`abbrev`]: the deterministic phrase to abbreviation scheme.
//! - [`dialogdata`]: dialog corpora to canonical expansion examples.
//! - [`noise`]: a 30-key grid keyboard with Gaussian keypress noise.
//! - [`expander`]: look-up table, n-gram and remote-LLM backends plus the
//!   shared response filter.
//! - [`metrics`]: Accuracy@k, BLEU@k and keystroke saving rates.
//! - [`evalharness`]: experiment orchestration and sweeps.

pub mod abbrev;
pub mod dialogdata;
pub mod evalharness;
pub mod expander;
pub mod metrics;
pub mod noise;

pub use abbrev::{abbreviate, normalize_phrase, word_abbreviation, Abbreviation, Phrase};
