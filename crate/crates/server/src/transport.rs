//! Blocking HTTP transport for a text-completion endpoint.

use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use serde::Deserialize;
use shorthand::expander::{CompletionRequest, CompletionResponse, CompletionTransport, TransportError};

pub const ENV_URL: &str = "SHORTHAND_ENDPOINT_URL";
pub const ENV_TOKEN: &str = "SHORTHAND_API_TOKEN";

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default)]
    pub token: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    60
}

impl EndpointConfig {
    /// Reads `url`, `token` and `timeout_secs` from a TOML file. The
    /// environment variables override the file.
    pub fn load(file: Option<&Path>) -> Result<Self, String> {
        let mut cfg = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?
            }
            None => EndpointConfig {
                url: String::new(),
                token: None,
                timeout_secs: default_timeout(),
            },
        };
        if let Ok(url) = std::env::var(ENV_URL) {
            cfg.url = url;
        }
        if let Ok(token) = std::env::var(ENV_TOKEN) {
            cfg.token = Some(token);
        }
        if cfg.url.is_empty() {
            return Err(format!("no endpoint url (set {ENV_URL} or use a config file)"));
        }
        Ok(cfg)
    }
}

pub struct HttpTransport {
    config: EndpointConfig,
    // built on first use: a blocking client must not be created on an async worker
    client: OnceLock<reqwest::blocking::Client>,
}

impl HttpTransport {
    pub fn new(config: EndpointConfig) -> Self {
        HttpTransport {
            config,
            client: OnceLock::new(),
        }
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, TransportError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let c = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(self.config.timeout_secs))
            .build()
            .map_err(|e| TransportError::Unavailable(e.to_string()))?;
        Ok(self.client.get_or_init(|| c))
    }
}

fn excerpt(body: &str) -> String {
    body.chars().take(200).collect()
}

impl CompletionTransport for HttpTransport {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, TransportError> {
        let mut req = self.client()?.post(&self.config.url).json(request);
        if let Some(token) = &self.config.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| TransportError::Unavailable(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| TransportError::Unavailable(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(TransportError::Unavailable(format!("{status}: {}", excerpt(&body))));
        }
        if !status.is_success() {
            return Err(TransportError::Rejected(format!("{status}: {}", excerpt(&body))));
        }
        serde_json::from_str(&body).map_err(|_| TransportError::Malformed {
            excerpt: excerpt(&body),
        })
    }
}
