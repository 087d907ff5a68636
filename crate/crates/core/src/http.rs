//! Blocking JSON-over-HTTP client with bounded retries.
//!
//! Shared by the external OCR/caption providers, the external encoder and the
//! LLM backends. Each attempt is bounded by `timeout`; at most `max_retries`
//! retries follow the first attempt. Server errors (5xx), transport failures
//! and timeouts are retried, client errors (4xx) are not.

use std::time::Duration;

use serde::{de::DeserializeOwned, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("request to {url} timed out after {attempts} attempt(s)")]
    Timeout { url: String, attempts: u32 },
    #[error("request to {url} failed after {attempts} attempt(s): {message}")]
    Unavailable {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("response from {url} is not the expected JSON: {message}")]
    Decode { url: String, message: String },
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    max_retries: u32,
    bearer: Option<String>,
}

impl JsonClient {
    pub fn new(timeout: Duration, max_retries: u32) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self {
            agent,
            max_retries,
            bearer: None,
        }
    }

    /// Reads a bearer token from the named environment variable, if it is set.
    pub fn with_credential_env(mut self, var: Option<&str>) -> Self {
        self.bearer = var
            .and_then(|v| std::env::var(v).ok())
            .filter(|v| !v.is_empty());
        self
    }

    pub fn post<B: Serialize, R: DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
    ) -> Result<R, HttpError> {
        let payload = serde_json::to_value(body).map_err(|e| HttpError::Decode {
            url: url.to_string(),
            message: e.to_string(),
        })?;
        // `ureq::Error` is large but is never stored; it is converted right away.
        #[allow(clippy::result_large_err)]
        let call = |req: ureq::Request| req.send_json(payload.clone());
        self.send("POST", url, call)
    }

    pub fn get<R: DeserializeOwned>(&self, url: &str) -> Result<R, HttpError> {
        #[allow(clippy::result_large_err)]
        let call = |req: ureq::Request| req.call();
        self.send("GET", url, call)
    }

    fn send<R, F>(&self, method: &str, url: &str, call: F) -> Result<R, HttpError>
    where
        R: DeserializeOwned,
        F: Fn(ureq::Request) -> Result<ureq::Response, ureq::Error>,
    {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let mut req = self.agent.request(method, url);
            if let Some(token) = &self.bearer {
                req = req.set("Authorization", &format!("Bearer {token}"));
            }
            let (timed_out, message) = match call(req) {
                Ok(resp) => {
                    return resp.into_json::<R>().map_err(|e| HttpError::Decode {
                        url: url.to_string(),
                        message: e.to_string(),
                    })
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let body = resp.into_string().unwrap_or_default();
                    let message = format!("HTTP {code}: {}", truncate(&body, 200));
                    if code < 500 {
                        return Err(HttpError::Unavailable {
                            url: url.to_string(),
                            attempts,
                            message,
                        });
                    }
                    (false, message)
                }
                Err(ureq::Error::Transport(t)) => (is_timeout(&t), t.to_string()),
            };
            if attempts > self.max_retries {
                return Err(if timed_out {
                    HttpError::Timeout {
                        url: url.to_string(),
                        attempts,
                    }
                } else {
                    HttpError::Unavailable {
                        url: url.to_string(),
                        attempts,
                        message,
                    }
                });
            }
            tracing::debug!(url, attempts, %message, "retrying request");
        }
    }
}

fn is_timeout(t: &ureq::Transport) -> bool {
    use std::error::Error as _;
    let mut source = t.source();
    while let Some(err) = source {
        if let Some(io) = err.downcast_ref::<std::io::Error>() {
            if matches!(
                io.kind(),
                std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock
            ) {
                return true;
            }
        }
        source = err.source();
    }
    t.to_string().to_lowercase().contains("timed out")
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
