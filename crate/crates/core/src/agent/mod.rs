//! The perceive-plan-act loop: prompt assembly, schema-checked decisions,
//! full-session memory and the four guardrails.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ingest::Money;
use crate::llm::{complete_json_with, Backend, BackendRequest, DecisionContext, LlmError, RetryPolicy, ScriptedContext};
use crate::persona::{render_persona_block, AgentProfile, PriceReference};
use crate::seed::derive_seed;
use crate::storefront::{apply, observe, Action, CartLine, EnvState, Observation, Storefront, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TerminationReason {
    GoalReached,
    NoSuitableProduct,
    NoA2CDecision,
    PriceTooHigh,
    Leaving,
}

impl TerminationReason {
    pub const ALL: [TerminationReason; 5] = [
        TerminationReason::GoalReached,
        TerminationReason::NoSuitableProduct,
        TerminationReason::NoA2CDecision,
        TerminationReason::PriceTooHigh,
        TerminationReason::Leaving,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TerminationReason::GoalReached => "GoalReached",
            TerminationReason::NoSuitableProduct => "NoSuitableProduct",
            TerminationReason::NoA2CDecision => "NoA2CDecision",
            TerminationReason::PriceTooHigh => "PriceTooHigh",
            TerminationReason::Leaving => "Leaving",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentDecision {
    pub reasoning: String,
    pub terminate: bool,
    #[serde(default)]
    pub termination_reason: Option<TerminationReason>,
    #[serde(default)]
    pub action: Option<Action>,
}

impl AgentDecision {
    pub fn act(reasoning: impl Into<String>, action: Action) -> Self {
        Self { reasoning: reasoning.into(), terminate: false, termination_reason: None, action: Some(action) }
    }

    pub fn stop(reasoning: impl Into<String>, reason: TerminationReason) -> Self {
        Self { reasoning: reasoning.into(), terminate: true, termination_reason: Some(reason), action: None }
    }

    pub fn check(&self) -> Result<(), String> {
        match (self.terminate, &self.termination_reason, &self.action) {
            (true, Some(_), None) | (false, None, Some(_)) => Ok(()),
            (true, None, _) => Err("terminate=true requires termination_reason".into()),
            (true, _, Some(_)) => Err("terminate=true must not carry an action".into()),
            (false, _, None) => Err("terminate=false requires an action".into()),
            (false, Some(_), _) => Err("termination_reason is only allowed when terminate=true".into()),
        }
    }
}

/// JSON schema every decision must satisfy.
pub fn decision_schema() -> Value {
    let action = |ty: &str, extra: Value| {
        let mut props = json!({"type": {"const": ty}});
        let mut required = vec![json!("type")];
        for (k, v) in extra.as_object().into_iter().flatten() {
            props[k] = v.clone();
            required.push(json!(k));
        }
        json!({"type": "object", "additionalProperties": false, "required": required, "properties": props})
    };
    let reasons: Vec<Value> = TerminationReason::ALL.iter().map(|r| json!(r.as_str())).chain([Value::Null]).collect();
    json!({
        "type": "object",
        "additionalProperties": false,
        "required": ["reasoning", "terminate", "termination_reason", "action"],
        "properties": {
            "reasoning": {"type": "string"},
            "terminate": {"type": "boolean"},
            "termination_reason": {"enum": reasons},
            "action": {"anyOf": [
                {"type": "null"},
                action("click", json!({"ref": {"type": "string"}})),
                action("type_text", json!({"ref": {"type": "string"}, "text": {"type": "string"}})),
                action("scroll", json!({"direction": {"enum": ["up", "down"]}})),
                action("navigate", json!({"url": {"type": "string"}})),
                action("back", json!({})),
            ]},
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub step: usize,
    /// Page the decision was made on.
    pub url: String,
    pub reasoning: String,
    pub action: Option<Action>,
    pub outcome: String,
    pub error: Option<String>,
    #[serde(default)]
    pub llm_retries: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_steps: usize,
    #[serde(with = "secs")]
    pub max_wall_time: Duration,
    pub loop_threshold: usize,
    pub llm_retries: u32,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_steps: 30, max_wall_time: Duration::from_secs(300), loop_threshold: 3, llm_retries: 3 }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_steps == 0 || self.llm_retries == 0 || self.max_wall_time.is_zero() {
            return Err(AgentError::InvalidLimits("max_steps, llm_retries and max_wall_time must be >= 1".into()));
        }
        if self.loop_threshold < 2 {
            return Err(AgentError::InvalidLimits("loop_threshold must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    AgentTerminated { reason: TerminationReason },
    StepLimit,
    TimeLimit,
    LoopGuard,
    FatalError { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionLog {
    pub shop_id: String,
    pub profile_id: String,
    pub cluster_id: usize,
    pub purchase_focused: bool,
    pub theme_id: String,
    pub variant: Variant,
    pub seed: u64,
    pub entries: Vec<MemoryEntry>,
    pub final_cart: Vec<CartLine>,
    pub cart_value: Money,
    pub termination: Termination,
    pub a2c: bool,
    pub steps: usize,
    /// The agent navigated off the storefront at some point.
    pub exited_store: bool,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("decision did not satisfy the schema: {0}")]
    DecisionSchemaFailure(#[source] LlmError),
    #[error("invalid limits: {0}")]
    InvalidLimits(String),
    #[error("no session logs")]
    EmptyInput,
}

/// Rules rendered into the constraints section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BehavioralConstraints {
    pub max_steps: usize,
}

impl BehavioralConstraints {
    pub fn render(&self) -> String {
        format!(
            "- You may add products to the cart and begin checkout, but never complete payment.\n\
             - Only act on elements present on the current page, using their ref.\n\
             - Stop as soon as your goal is met or you decide to leave.\n\
             - You have at most {} steps.",
            self.max_steps
        )
    }
}

pub const SYSTEM_PROMPT: &str = "You are a shopper browsing an online store. At each step read your goal, \
persona, memory and the current page, then reply with JSON holding your reasoning, whether to stop, \
and the next action.";

fn render_memory(memory: &[MemoryEntry]) -> String {
    if memory.is_empty() {
        return "(no prior steps)".to_string();
    }
    let mut out = String::new();
    for e in memory {
        out.push_str(&format!("Step {} [{}]: {}\n", e.step + 1, e.url, e.reasoning));
        if let Some(a) = &e.action {
            out.push_str(&format!("  Action: {}\n", serde_json::to_string(a).expect("actions serialize")));
        }
        out.push_str(&format!("  Outcome: {}\n", e.outcome));
        if let Some(err) = &e.error {
            out.push_str(&format!("  Error: {err}\n"));
        }
    }
    out.pop();
    out
}

/// The five prompt sections in fixed order.
pub fn build_step_prompt(
    profile: &AgentProfile,
    memory: &[MemoryEntry],
    observation: &Observation,
    constraints: &BehavioralConstraints,
) -> String {
    format!(
        "## Goal\n{}\n\n## Persona\n{}\n\n## Session memory\n{}\n\n## Current page\nURL: {}\n{}\n## Constraints\n{}\n",
        profile.intent.text,
        render_persona_block(&profile.persona, &profile.preferences),
        render_memory(memory),
        observation.url,
        observation.root.to_text(),
        constraints.render()
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decided {
    pub decision: AgentDecision,
    pub retries: u32,
}

/// Asks the backend for one decision. `retries` is the total number of
/// attempts.
pub fn decide(backend: &dyn Backend, request: &BackendRequest, retries: u32) -> Result<Decided, AgentError> {
    let policy = RetryPolicy { max_attempts: retries.max(1), ..RetryPolicy::default() };
    let out = complete_json_with(backend, request, &policy, |v| {
        let d: AgentDecision = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
        d.check()
    })
    .map_err(AgentError::DecisionSchemaFailure)?;
    let decision = serde_json::from_value(out.value).expect("checked above");
    Ok(Decided { decision, retries: out.attempts - 1 })
}

/// True iff the last `threshold` entries carry the same action issued from
/// the same page. Refs are numbered per page, so `click e6` on two
/// different pages is two different actions.
pub fn detect_loop(memory: &[MemoryEntry], threshold: usize) -> bool {
    if threshold == 0 || memory.len() < threshold {
        return false;
    }
    let tail = &memory[memory.len() - threshold..];
    match &tail[0].action {
        Some(first) => tail.iter().all(|e| e.action.as_ref() == Some(first) && e.url == tail[0].url),
        None => false,
    }
}

fn describe_outcome(url: &str, error: Option<&crate::storefront::StepError>) -> String {
    match error {
        None => format!("Now on {url}"),
        Some(_) => format!("Action failed; still on {url}"),
    }
}

/// Runs one simulated session. Failures are recorded in the log, not
/// returned.
pub fn run_session(
    profile: &AgentProfile,
    storefront: &Storefront,
    variant: Variant,
    backend: &dyn Backend,
    limits: &Limits,
    seed: u64,
) -> SessionLog {
    let theme = storefront.theme(variant);
    let prices = PriceReference::from_storefront(storefront);
    let constraints = BehavioralConstraints { max_steps: limits.max_steps };
    let schema = decision_schema();
    let started = Instant::now();
    let mut env = EnvState::new(storefront, theme, seed);
    let mut obs = observe(&env);
    let mut entries: Vec<MemoryEntry> = Vec::new();

    let termination = if let Err(e) = limits.validate() {
        Termination::FatalError { message: e.to_string() }
    } else {
        loop {
            let step = entries.len();
            let mut request = BackendRequest::new(SYSTEM_PROMPT, build_step_prompt(profile, &entries, &obs, &constraints), schema.clone());
            request.seed = Some(derive_seed(seed, &[step as u64]));
            request.context = Some(ScriptedContext::Decision(Box::new(DecisionContext {
                profile: profile.clone(),
                observation: obs.clone(),
                memory: entries.clone(),
                prices: prices.clone(),
            })));
            let decided = match decide(backend, &request, limits.llm_retries) {
                Ok(d) => d,
                Err(e) => break Termination::FatalError { message: e.to_string() },
            };
            let d = decided.decision;
            if d.terminate {
                let reason = d.termination_reason.expect("checked by decide");
                entries.push(MemoryEntry {
                    step,
                    url: obs.url.clone(),
                    reasoning: d.reasoning,
                    action: None,
                    outcome: format!("Terminated: {}", reason.as_str()),
                    error: None,
                    llm_retries: decided.retries,
                });
                break Termination::AgentTerminated { reason };
            }
            let action = d.action.expect("checked by decide");
            let result = apply(&mut env, &action);
            entries.push(MemoryEntry {
                step,
                url: obs.url.clone(),
                reasoning: d.reasoning,
                action: Some(action),
                outcome: describe_outcome(&result.observation.url, result.error.as_ref()),
                error: result.error.map(|e| format!("{}: {}", e.code, e.message)),
                llm_retries: decided.retries,
            });
            obs = result.observation;
            if detect_loop(&entries, limits.loop_threshold) {
                break Termination::LoopGuard;
            }
            if entries.len() >= limits.max_steps {
                break Termination::StepLimit;
            }
            if started.elapsed() >= limits.max_wall_time {
                break Termination::TimeLimit;
            }
        }
    };

    SessionLog {
        shop_id: profile.shop_id.clone(),
        profile_id: profile.profile_id.clone(),
        cluster_id: profile.cluster_id,
        purchase_focused: profile.intent.purchase_focused,
        theme_id: theme.theme_id.clone(),
        variant,
        seed,
        steps: entries.len(),
        entries,
        a2c: !env.cart.is_empty(),
        cart_value: env.cart_value(),
        final_cart: env.cart.clone(),
        termination,
        exited_store: env.left_store(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JourneyStats {
    pub sessions: usize,
    pub goal_reached_pct: f64,
    pub timeout_pct: f64,
    pub mean_steps: f64,
    pub std_steps: f64,
}

pub fn journey_stats(logs: &[SessionLog]) -> Result<JourneyStats, AgentError> {
    if logs.is_empty() {
        return Err(AgentError::EmptyInput);
    }
    let n = logs.len() as f64;
    let goal = logs
        .iter()
        .filter(|l| l.termination == Termination::AgentTerminated { reason: TerminationReason::GoalReached })
        .count();
    let timeout = logs.iter().filter(|l| l.termination == Termination::StepLimit).count();
    let mean = logs.iter().map(|l| l.steps as f64).sum::<f64>() / n;
    let var = logs.iter().map(|l| (l.steps as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(JourneyStats {
        sessions: logs.len(),
        goal_reached_pct: 100.0 * goal as f64 / n,
        timeout_pct: 100.0 * timeout as f64 / n,
        mean_steps: mean,
        std_steps: var.sqrt(),
    })
}

/// One JSON object per line.
pub fn logs_to_jsonl(logs: &[SessionLog]) -> String {
    logs.iter().map(|l| serde_json::to_string(l).expect("logs serialize") + "\n").collect()
}

pub fn logs_from_jsonl(text: &str) -> Result<Vec<SessionLog>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
