//! Chat-completion client with retry-then-drop for invalid responses.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{parse_llm_response, render_prompt, GenerationRequest, DEFAULT_TOKEN_BUDGET};
use crate::dsl::ProxyCandidate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Used when the request carries no action.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub retry_backoff_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_budget")]
    pub token_budget: usize,
}

fn default_temperature() -> f64 {
    0.7
}
fn default_max_tokens() -> u32 {
    512
}
fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    250
}
fn default_in_flight() -> usize {
    4
}
fn default_budget() -> usize {
    DEFAULT_TOKEN_BUDGET
}

impl LlmEndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        LlmEndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: None,
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            retry_backoff_ms: default_backoff(),
            max_in_flight: default_in_flight(),
            token_budget: default_budget(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0) || !self.timeout_secs.is_finite() {
            return Err(Error::Precondition(format!(
                "timeout {} must be positive",
                self.timeout_secs
            )));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Precondition("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum GenerationEvent {
    Retry {
        request: usize,
        attempt: u32,
        reason: String,
    },
    Drop {
        request: usize,
        reason: String,
    },
    EndpointError {
        request: usize,
        message: String,
    },
    Fallback {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmOutcome {
    pub candidates: Vec<ProxyCandidate>,
    pub events: Vec<GenerationEvent>,
    /// Every request ended in a transport or auth failure.
    pub endpoint_failed: bool,
}

enum CallError {
    Auth(String),
    Transport(String),
    Invalid(String),
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

fn call(
    agent: &ureq::Agent,
    cfg: &LlmEndpointConfig,
    prompt: &str,
    temperature: f64,
) -> std::result::Result<String, CallError> {
    let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
    let body = json!({
        "model": cfg.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": temperature,
        "max_tokens": cfg.max_tokens,
    });
    let mut request = agent.post(&url).header("Content-Type", "application/json");
    if let Some(key) = cfg
        .api_key_env
        .as_deref()
        .and_then(|v| std::env::var(v).ok())
        .filter(|k| !k.is_empty())
    {
        request = request.header("Authorization", &format!("Bearer {key}"));
    }
    let mut response = request
        .send_json(&body)
        .map_err(|e| CallError::Transport(e.to_string()))?;
    let status = response.status().as_u16();
    match status {
        401 | 403 => return Err(CallError::Auth(format!("HTTP {status}: authentication rejected"))),
        200..=299 => {}
        _ => return Err(CallError::Transport(format!("HTTP {status}"))),
    }
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| CallError::Transport(e.to_string()))?;
    let parsed: ChatResponse =
        serde_json::from_str(&text).map_err(|e| CallError::Invalid(format!("malformed completion body: {e}")))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| CallError::Invalid("completion has no choices".into()))
}

struct RequestResult {
    candidate: Option<ProxyCandidate>,
    events: Vec<GenerationEvent>,
    transport_failed: bool,
}

fn run_request(
    agent: &ureq::Agent,
    cfg: &LlmEndpointConfig,
    req: &GenerationRequest,
    prompt: &str,
    index: usize,
) -> RequestResult {
    let temperature = req.action.map_or(cfg.temperature, |a| a.temperature.value());
    let mut events = Vec::new();
    let mut transport_failed = false;
    for attempt in 0..=cfg.max_retries {
        let reason = match call(agent, cfg, prompt, temperature) {
            Ok(text) => match parse_llm_response(&text, req.op.origin(), 0) {
                Ok(candidate) => {
                    return RequestResult {
                        candidate: Some(candidate),
                        events,
                        transport_failed: false,
                    }
                }
                Err(rejection) => {
                    transport_failed = false;
                    rejection.to_string()
                }
            },
            Err(CallError::Invalid(reason)) => {
                transport_failed = false;
                reason
            }
            Err(CallError::Auth(message)) => {
                events.push(GenerationEvent::EndpointError {
                    request: index,
                    message,
                });
                return RequestResult {
                    candidate: None,
                    events,
                    transport_failed: true,
                };
            }
            Err(CallError::Transport(message)) => {
                transport_failed = true;
                events.push(GenerationEvent::EndpointError {
                    request: index,
                    message: message.clone(),
                });
                message
            }
        };
        if attempt < cfg.max_retries {
            events.push(GenerationEvent::Retry {
                request: index,
                attempt: attempt + 1,
                reason,
            });
            std::thread::sleep(Duration::from_millis(
                cfg.retry_backoff_ms.saturating_mul(1 << attempt.min(16)),
            ));
        } else {
            events.push(GenerationEvent::Drop { request: index, reason });
        }
    }
    RequestResult {
        candidate: None,
        events,
        transport_failed,
    }
}

/// Issues `req.count` chat-completion requests, at most
/// `cfg.max_in_flight` at a time. Invalid responses are retried up to
/// `cfg.max_retries` times and then dropped. Candidates keep request order
/// and get consecutive sequence numbers from `req.first_seq`.
pub fn generate_llm(req: &GenerationRequest, cfg: &LlmEndpointConfig) -> Result<LlmOutcome> {
    req.validate()?;
    cfg.validate()?;
    let prompt = render_prompt(req, cfg.token_budget)?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into();
    let slots: Vec<Mutex<Option<RequestResult>>> = (0..req.count).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..cfg.max_in_flight.min(req.count) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= req.count {
                    break;
                }
                let result = run_request(&agent, cfg, req, &prompt, i);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    let mut outcome = LlmOutcome {
        candidates: Vec::new(),
        events: Vec::new(),
        endpoint_failed: req.count > 0,
    };
    for slot in slots {
        let r = slot.into_inner().expect("slot lock").expect("every request ran");
        outcome.endpoint_failed &= r.transport_failed;
        outcome.events.extend(r.events);
        if let Some(mut c) = r.candidate {
            let seq = req.first_seq + outcome.candidates.len() as u64;
            c.seq = seq;
            c.id = ProxyCandidate::id_for(seq);
            let parents = match req.op {
                super::GenerationOp::Init => Vec::new(),
                _ => req.context.iter().map(|e| e.id.clone()).collect(),
            };
            req.stamp(&mut c, parents);
            outcome.candidates.push(c);
        }
    }
    Ok(outcome)
}
