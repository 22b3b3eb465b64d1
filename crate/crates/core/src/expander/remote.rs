//! Sampling-based expansion through a text-completion endpoint.
//!
//! The wire format is JSON: requests carry
//! `{prompt, temperature, top_k, num_samples, max_tokens}` and responses
//! carry `{samples: [text]}`. The HTTP transport itself lives outside this
//! crate; anything implementing [`CompletionTransport`] can be plugged in.

use std::sync::Arc;
use std::time::Duration;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::KeyboardLayout;

use super::filter::{clean_completion, filter_and_rank};
use super::prompt::{build_prompt, PromptSpec, SamplingConfig};
use super::{ExpandError, Expander, ExpansionQuery, ExpansionResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub top_k: u32,
    pub num_samples: usize,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub samples: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    /// Connection failures, timeouts, 5xx and 429 responses.
    #[error("unavailable: {0}")]
    Unavailable(String),
    /// The endpoint answered but refused the request.
    #[error("rejected: {0}")]
    Rejected(String),
    /// The body could not be decoded as a completion response.
    #[error("malformed response: {excerpt}")]
    Malformed { excerpt: String },
}

pub trait CompletionTransport: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, TransportError>;
}

impl<T: CompletionTransport + ?Sized> CompletionTransport for Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, TransportError> {
        (**self).complete(request)
    }
}

impl<T: CompletionTransport + ?Sized> CompletionTransport for Box<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, TransportError> {
        (**self).complete(request)
    }
}

/// Exponential backoff for unavailable endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff_ms: 250,
            multiplier: 2.0,
            max_backoff_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(retry as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Retrying, batching completion client.
#[derive(Clone)]
pub struct RemoteClient<T> {
    transport: T,
    retry: RetryPolicy,
    max_samples_per_request: usize,
    max_in_flight: usize,
    sleep: Sleeper,
}

impl<T: CompletionTransport> RemoteClient<T> {
    pub fn new(transport: T) -> Self {
        RemoteClient {
            transport,
            retry: RetryPolicy::default(),
            max_samples_per_request: 128,
            max_in_flight: 4,
            sleep: Arc::new(std::thread::sleep),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Splits large sample counts into several requests of at most `per_request`
    /// samples, with up to `in_flight` of them running at once.
    pub fn with_batching(mut self, per_request: usize, in_flight: usize) -> Self {
        self.max_samples_per_request = per_request.max(1);
        self.max_in_flight = in_flight.max(1);
        self
    }

    /// Replaces the backoff sleep (tests use a no-op or a recorder).
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    fn send_with_retry(&self, request: &CompletionRequest) -> Result<Vec<String>, ExpandError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.transport.complete(request) {
                Ok(resp) => {
                    if resp.samples.len() != request.num_samples {
                        return Err(ExpandError::SampleCount {
                            requested: request.num_samples,
                            returned: resp.samples.len(),
                        });
                    }
                    return Ok(resp.samples);
                }
                Err(TransportError::Unavailable(message)) => {
                    if attempt > self.retry.max_retries {
                        return Err(ExpandError::Unavailable {
                            attempts: attempt,
                            message,
                        });
                    }
                    (self.sleep)(self.retry.backoff(attempt - 1));
                }
                Err(TransportError::Rejected(m)) => return Err(ExpandError::Rejected(m)),
                Err(TransportError::Malformed { excerpt }) => {
                    return Err(ExpandError::Malformed { excerpt })
                }
            }
        }
    }

    /// Samples `sampling.num_samples` continuations of the prompt for `query`,
    /// each cut at its first closing brace.
    pub fn remote_expand(
        &self,
        spec: &PromptSpec,
        sampling: &SamplingConfig,
        query: &ExpansionQuery,
    ) -> Result<Vec<String>, ExpandError> {
        let prompt = build_prompt(spec, query)?;
        let mut batches = Vec::new();
        let mut left = sampling.num_samples;
        while left > 0 {
            let n = left.min(self.max_samples_per_request);
            batches.push(CompletionRequest {
                prompt: prompt.clone(),
                temperature: sampling.temperature,
                top_k: sampling.top_k_logits,
                num_samples: n,
                max_tokens: sampling.max_tokens,
            });
            left -= n;
        }
        let mut samples = Vec::with_capacity(sampling.num_samples);
        for chunk in batches.chunks(self.max_in_flight) {
            let results: Vec<Result<Vec<String>, ExpandError>> = if chunk.len() == 1 {
                vec![self.send_with_retry(&chunk[0])]
            } else {
                std::thread::scope(|s| {
                    let handles: Vec<_> = chunk
                        .iter()
                        .map(|req| s.spawn(move || self.send_with_retry(req)))
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("completion worker panicked"))
                        .collect()
                })
            };
            for r in results {
                samples.extend(r?.iter().map(|s| clean_completion(s).to_string()));
            }
        }
        Ok(samples)
    }
}

/// [`Expander`] that samples from a completion endpoint and ranks the
/// filtered samples by frequency.
pub struct RemoteExpander<T> {
    client: RemoteClient<T>,
    spec: PromptSpec,
    sampling: SamplingConfig,
    layout: KeyboardLayout,
}

impl<T: CompletionTransport> RemoteExpander<T> {
    pub fn new(client: RemoteClient<T>, spec: PromptSpec, sampling: SamplingConfig) -> Self {
        RemoteExpander {
            client,
            spec,
            sampling,
            layout: KeyboardLayout::default(),
        }
    }

    pub fn spec(&self) -> &PromptSpec {
        &self.spec
    }

    pub fn with_spec(&self, spec: PromptSpec) -> Self
    where
        T: Clone,
    {
        RemoteExpander {
            client: self.client.clone(),
            spec,
            sampling: self.sampling.clone(),
            layout: self.layout.clone(),
        }
    }
}

impl<T: CompletionTransport> Expander for RemoteExpander<T> {
    fn name(&self) -> &str {
        "remote"
    }

    fn expand(
        &self,
        query: &ExpansionQuery,
        _rng: &mut dyn RngCore,
    ) -> Result<ExpansionResult, ExpandError> {
        let samples = self
            .client
            .remote_expand(&self.spec, &self.sampling, query)?;
        Ok(filter_and_rank(&samples, query, &self.layout))
    }
}
