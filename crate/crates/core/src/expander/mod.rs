//! Expansion backends and the shared response filter.
//!
//! A backend turns an [`ExpansionQuery`] (context turns plus a possibly
//! noisy abbreviation) into a ranked list of at most `k` phrases whose
//! abbreviation matches the query.

mod filter;
mod lut;
mod ngram;
mod prompt;
mod remote;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abbrev::{Abbreviation, Phrase};

pub use filter::{clean_completion, filter_and_rank, matches_query};
pub use lut::{build_lut, LookUpTable, LutEntry};
pub use ngram::{NgramModel, BOS, EOS, TURN};
pub use prompt::{build_prompt, PromptMode, PromptSpec, SamplingConfig};
pub use remote::{
    CompletionRequest, CompletionResponse, CompletionTransport, RemoteClient, RemoteExpander,
    RetryPolicy, TransportError,
};

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum ExpandError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("completion endpoint unavailable after {attempts} attempts: {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("completion endpoint rejected the request: {0}")]
    Rejected(String),
    #[error("malformed completion response: {excerpt}")]
    Malformed { excerpt: String },
    #[error("requested {requested} samples, endpoint returned {returned}")]
    SampleCount { requested: usize, returned: usize },
}

impl ExpandError {
    /// Whether retrying the same request later might succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ExpandError::Unavailable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionQuery {
    pub context: Vec<String>,
    pub abbreviation: Abbreviation,
    #[serde(default)]
    pub noisy: bool,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    DEFAULT_K
}

impl ExpansionQuery {
    pub fn new(context: Vec<String>, abbreviation: Abbreviation) -> Result<Self, ExpandError> {
        Self::with_options(context, abbreviation, false, DEFAULT_K)
    }

    pub fn with_options(
        context: Vec<String>,
        abbreviation: Abbreviation,
        noisy: bool,
        k: usize,
    ) -> Result<Self, ExpandError> {
        if abbreviation.is_empty() {
            return Err(ExpandError::InvalidQuery("abbreviation is empty".into()));
        }
        if k == 0 {
            return Err(ExpandError::InvalidQuery("k must be at least 1".into()));
        }
        Ok(ExpansionQuery {
            context,
            abbreviation,
            noisy,
            k,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionOption {
    pub phrase: Phrase,
    pub count: u64,
    /// Model log-probability, for backends that score instead of sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResult {
    pub options: Vec<ExpansionOption>,
    pub raw_sample_count: usize,
}

impl ExpansionResult {
    pub fn phrases(&self) -> impl Iterator<Item = &str> {
        self.options.iter().map(|o| o.phrase.as_str())
    }

    pub fn contains(&self, normalized: &str) -> bool {
        self.phrases().any(|p| p == normalized)
    }
}

/// A source of ranked expansions.
///
/// `rng` is only used by backends that break ties randomly; callers derive
/// it from the run seed so results are reproducible.
pub trait Expander: Send + Sync {
    fn name(&self) -> &str;

    fn expand(
        &self,
        query: &ExpansionQuery,
        rng: &mut dyn RngCore,
    ) -> Result<ExpansionResult, ExpandError>;
}

impl<E: Expander + ?Sized> Expander for Box<E> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn expand(
        &self,
        query: &ExpansionQuery,
        rng: &mut dyn RngCore,
    ) -> Result<ExpansionResult, ExpandError> {
        (**self).expand(query, rng)
    }
}

impl<E: Expander + ?Sized> Expander for std::sync::Arc<E> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn expand(
        &self,
        query: &ExpansionQuery,
        rng: &mut dyn RngCore,
    ) -> Result<ExpansionResult, ExpandError> {
        (**self).expand(query, rng)
    }
}
