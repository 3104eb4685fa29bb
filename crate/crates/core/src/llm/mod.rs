//! Decision backends. Every backend maps a request to raw text; JSON
//! extraction, schema validation and retry-with-error-context live here so
//! the scripted and HTTP backends share one contract.

mod http;
mod scripted;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::MemoryEntry;
use crate::persona::{AgentProfile, PersonaReviewContext, PreferenceContext, PriceReference};
use crate::storefront::Observation;

pub use http::{HttpBackend, HttpConfig, API_KEY_ENV};
pub use scripted::{scripted_decide, ScriptedBackend, ScriptedPolicyConfig};

/// Structured inputs the scripted backend reads instead of the prompt text.
/// The HTTP backend ignores them.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptedContext {
    Decision(Box<DecisionContext>),
    Preferences(Box<PreferenceContext>),
    PersonaReview(Box<PersonaReviewContext>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionContext {
    pub profile: AgentProfile,
    pub observation: Observation,
    pub memory: Vec<MemoryEntry>,
    pub prices: PriceReference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub system_text: String,
    pub user_text: String,
    pub schema: Value,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub context: Option<ScriptedContext>,
}

impl BackendRequest {
    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>, schema: Value) -> Self {
        Self {
            system_text: system_text.into(),
            user_text: user_text.into(),
            schema,
            temperature: 0.7,
            seed: None,
            context: None,
        }
    }

    fn check(&self) -> Result<(), LlmError> {
        let empty = match &self.schema {
            Value::Object(m) => m.is_empty(),
            _ => true,
        };
        if empty {
            return Err(LlmError::InvalidRequest("schema must be a non-empty object".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!("temperature {} is negative", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited")]
    RateLimited,
    #[error("backend cannot serve this request: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("still rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("no schema-valid response after {attempts} attempts; last error: {last_error}")]
    SchemaFailure { attempts: u32, last_error: String },
    #[error("{0}")]
    Unsupported(String),
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &BackendRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    /// Sleep before retry k (0-based) is `base_backoff * 2^k`, rate limits only.
    #[serde(with = "millis")]
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_backoff: Duration::from_millis(500) }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JsonCompletion {
    pub value: Value,
    pub attempts: u32,
    /// One message per failed attempt, in order.
    pub errors: Vec<String>,
}

impl JsonCompletion {
    pub fn retries(&self) -> u32 {
        self.attempts - 1
    }
}

fn validators() -> &'static Mutex<HashMap<String, Arc<jsonschema::Validator>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<jsonschema::Validator>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn validator_for(schema: &Value) -> Result<Arc<jsonschema::Validator>, LlmError> {
    let key = schema.to_string();
    let mut cache = validators().lock().expect("validator cache poisoned");
    if let Some(v) = cache.get(&key) {
        return Ok(v.clone());
    }
    let v = Arc::new(
        jsonschema::validator_for(schema).map_err(|e| LlmError::InvalidRequest(format!("bad schema: {e}")))?,
    );
    cache.insert(key, v.clone());
    Ok(v)
}

/// Checks `value` against a JSON schema, reporting every violation.
pub fn validate_against(schema: &Value, value: &Value) -> Result<(), String> {
    let v = validator_for(schema).map_err(|e| e.to_string())?;
    let errors: Vec<String> = v.iter_errors(value).map(|e| format!("{} at '{}'", e, e.instance_path)).collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors.join("; "))
    }
}

/// Pulls a JSON document out of model text, tolerating code fences.
pub fn extract_json(text: &str) -> Result<Value, String> {
    let t = text.trim();
    let t = t
        .strip_prefix("```json")
        .or_else(|| t.strip_prefix("```"))
        .and_then(|rest| rest.trim_end().strip_suffix("```"))
        .unwrap_or(t)
        .trim();
    serde_json::from_str(t).map_err(|e| format!("response is not valid JSON: {e}"))
}

pub fn complete_json(backend: &dyn Backend, request: &BackendRequest, policy: &RetryPolicy) -> Result<JsonCompletion, LlmError> {
    complete_json_with(backend, request, policy, |_| Ok(()))
}

/// Like [`complete_json`] with an extra semantic check run after schema
/// validation. Failures of either kind are appended to the user text of the
/// next attempt.
pub fn complete_json_with<F>(
    backend: &dyn Backend,
    request: &BackendRequest,
    policy: &RetryPolicy,
    check: F,
) -> Result<JsonCompletion, LlmError>
where
    F: Fn(&Value) -> Result<(), String>,
{
    request.check()?;
    let max = policy.max_attempts.max(1);
    let mut errors = Vec::new();
    let mut req = request.clone();
    let mut rate_limits = 0u32;
    let mut last = LlmError::SchemaFailure { attempts: 0, last_error: String::new() };
    for attempt in 1..=max {
        let text = match backend.complete(&req) {
            Ok(t) => t,
            Err(BackendError::RateLimited) => {
                errors.push("rate limited".to_string());
                last = LlmError::RateLimited { attempts: attempt };
                if attempt < max {
                    std::thread::sleep(policy.base_backoff * 2u32.saturating_pow(rate_limits));
                }
                rate_limits += 1;
                continue;
            }
            Err(BackendError::Transport(m)) => {
                errors.push(m.clone());
                last = LlmError::Transport { attempts: attempt, message: m };
                continue;
            }
            Err(BackendError::Unsupported(m)) => return Err(LlmError::Unsupported(m)),
        };
        let verdict = extract_json(&text).and_then(|v| {
            validate_against(&req.schema, &v)?;
            check(&v)?;
            Ok(v)
        });
        match verdict {
            Ok(value) => return Ok(JsonCompletion { value, attempts: attempt, errors }),
            Err(e) => {
                req.user_text = format!(
                    "{}\n\nYour previous response was rejected: {e}\nRespond with a single JSON object that satisfies the schema.",
                    request.user_text
                );
                errors.push(e.clone());
                last = LlmError::SchemaFailure { attempts: attempt, last_error: e };
            }
        }
    }
    Err(last)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Replays canned responses in order, then repeats the last one.
    pub struct Canned {
        pub replies: Mutex<Vec<Result<String, BackendError>>>,
        pub seen: Mutex<Vec<String>>,
    }

    impl Canned {
        pub fn new(replies: Vec<Result<String, BackendError>>) -> Self {
            Self { replies: Mutex::new(replies), seen: Mutex::new(Vec::new()) }
        }
    }

    impl Backend for Canned {
        fn name(&self) -> &str {
            "canned"
        }

        fn complete(&self, request: &BackendRequest) -> Result<String, BackendError> {
            self.seen.lock().unwrap().push(request.user_text.clone());
            let mut r = self.replies.lock().unwrap();
            if r.len() > 1 {
                r.remove(0)
            } else {
                r[0].clone()
            }
        }
    }
}
