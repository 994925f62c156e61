//! LLM-assisted sequence verification.
//!
//! The completion client is an abstract text-in/text-out endpoint. The
//! deterministic mock answers from the rule engine; the HTTP client (behind
//! the `http` feature) speaks the de-facto chat-completions wire format.
//! Whatever the model answers, the rule engine stays authoritative: a
//! corrected sequence that still violates the rules is replaced by the
//! engine's own correction.

use std::fmt;

use crate::label::ActivityLabel;
use crate::reasoner::{check_sequence, Finding, ReasonError, RuleSet, Severity};

/// Environment variable holding the API key for the HTTP client.
pub const API_KEY_ENV: &str = "AMBIENT_LLM_KEY";

/// Default per-call timeout.
pub const DEFAULT_TIMEOUT_SECS: u64 = 30;

/// Prompt template used when the caller does not supply one.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "\
You are a daily-activity safety assistant for an ambient sensing system.
The configured order rules are:
{RULES}
Observed activity sequence:
SEQUENCE: {SEQUENCE}
If the sequence violates a rule, reorder it or insert the missing
activities; never drop an observed activity. Answer with exactly three
lines and nothing else:
CORRECTED: <activity -> activity -> ...>
COMPLEX: <name of the detected complex activity, or none>
MESSAGE: <one short reminder sentence, or ok>
";

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("prompt template is missing the {0} placeholder")]
    MissingPlaceholder(&'static str),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("cannot parse completion: {reason}; raw response: {raw:?}")]
    Parse { reason: String, raw: String },
    #[error(transparent)]
    Reason(#[from] ReasonError),
}

/// How a client identifies itself in logs. Never carries credentials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientIdentity {
    Mock,
    Http { endpoint: String, model: String },
}

impl fmt::Display for ClientIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mock => write!(f, "mock"),
            Self::Http { endpoint, model } => write!(f, "http({endpoint}, {model})"),
        }
    }
}

/// Abstract text-completion endpoint.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
    fn identity(&self) -> ClientIdentity;
}

/// Render the prompt from a template with `{RULES}` and `{SEQUENCE}`
/// placeholders. Byte-deterministic for fixed inputs.
pub fn build_prompt(
    seq: &[ActivityLabel],
    rules: &RuleSet,
    template: &str,
) -> Result<String, LlmError> {
    if !template.contains("{RULES}") {
        return Err(LlmError::MissingPlaceholder("{RULES}"));
    }
    if !template.contains("{SEQUENCE}") {
        return Err(LlmError::MissingPlaceholder("{SEQUENCE}"));
    }
    let rules_text = if rules.is_empty() {
        "(no rules configured; use common sense about daily routines)".to_string()
    } else {
        rules.to_string().trim_end().to_string()
    };
    let sequence = render_sequence(seq);
    Ok(template
        .replace("{RULES}", &rules_text)
        .replace("{SEQUENCE}", &sequence))
}

/// `a -> b -> c` rendering used in prompts and responses.
pub fn render_sequence(seq: &[ActivityLabel]) -> String {
    seq.iter()
        .map(|l| l.name())
        .collect::<Vec<_>>()
        .join(" -> ")
}

/// A parsed three-line completion.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmVerdict {
    pub corrected: Vec<ActivityLabel>,
    pub complex_label: String,
    pub message: String,
    pub raw: String,
}

/// Extract the `CORRECTED:`/`COMPLEX:`/`MESSAGE:` lines, case-insensitively,
/// tolerating chatter around them. Labels go through the alias table; any
/// failure rejects the whole response.
pub fn parse_verdict(response: &str) -> Result<LlmVerdict, LlmError> {
    let mut corrected_text: Option<String> = None;
    let mut complex_label: Option<String> = None;
    let mut message: Option<String> = None;
    for line in response.lines() {
        let trimmed = line.trim();
        let lower = trimmed.to_ascii_lowercase();
        let capture = |prefix: &str, slot: &mut Option<String>| {
            if slot.is_none() && lower.starts_with(prefix) {
                *slot = Some(trimmed[prefix.len()..].trim().to_string());
            }
        };
        capture("corrected:", &mut corrected_text);
        capture("complex:", &mut complex_label);
        capture("message:", &mut message);
    }
    let parse_err = |reason: String| LlmError::Parse { reason, raw: response.to_string() };
    let corrected_text =
        corrected_text.ok_or_else(|| parse_err("missing CORRECTED line".into()))?;
    let complex_label = complex_label.ok_or_else(|| parse_err("missing COMPLEX line".into()))?;
    let message = message.ok_or_else(|| parse_err("missing MESSAGE line".into()))?;

    let mut corrected = Vec::new();
    for part in corrected_text.split(&['-', '→'][..]) {
        // Sequences arrive as `a -> b`; splitting on '-' leaves '>' heads.
        let token = part.trim().trim_start_matches('>').trim();
        if token.is_empty() {
            continue;
        }
        let label = ActivityLabel::parse(token)
            .map_err(|e| parse_err(e.to_string()))?;
        corrected.push(label);
    }
    if corrected.is_empty() {
        return Err(parse_err("CORRECTED line names no activities".into()));
    }
    Ok(LlmVerdict { corrected, complex_label, message, raw: response.to_string() })
}

/// Where the final corrected sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictSource {
    Llm,
    RuleEngine,
}

/// Finding-compatible verification result. `corrected` always satisfies the
/// rule set; `degraded` marks transport or parse failures where the rule
/// engine answered alone.
#[derive(Debug, Clone)]
pub struct VerifyResult {
    pub corrected: Vec<ActivityLabel>,
    pub findings: Vec<Finding>,
    pub source: VerdictSource,
    pub degraded: bool,
    /// Present when the model's answer was discarded or rephrased.
    pub note: Option<String>,
    pub raw_response: Option<String>,
}

/// Verify a sequence with the model, cross-checked by the rule engine.
///
/// The engine's own check runs first. The model's corrected sequence is
/// accepted only if re-checking it yields no findings; otherwise (and on
/// any transport or parse failure) the engine's correction wins.
pub fn verify_with_llm(
    seq: &[ActivityLabel],
    rules: &RuleSet,
    client: &dyn CompletionClient,
) -> Result<VerifyResult, LlmError> {
    let engine = check_sequence(seq, rules)?;
    let prompt = build_prompt(seq, rules, DEFAULT_PROMPT_TEMPLATE)?;

    let fallback = |degraded: bool, note: Option<String>, raw: Option<String>| VerifyResult {
        corrected: engine.corrected.clone(),
        findings: engine.findings.clone(),
        source: VerdictSource::RuleEngine,
        degraded,
        note,
        raw_response: raw,
    };

    let response = match client.complete(&prompt) {
        Ok(response) => response,
        Err(e) => return Ok(fallback(true, Some(format!("completion failed: {e}")), None)),
    };
    let verdict = match parse_verdict(&response) {
        Ok(verdict) => verdict,
        Err(e) => {
            return Ok(fallback(true, Some(format!("unparseable response: {e}")), Some(response)))
        }
    };

    let recheck = check_sequence(&verdict.corrected, rules)?;
    if !recheck.findings.is_empty() {
        return Ok(fallback(
            false,
            Some(format!(
                "model correction {} still violates {}; using the rule engine's correction",
                render_sequence(&verdict.corrected),
                recheck.findings[0].complex_label,
            )),
            Some(verdict.raw),
        ));
    }

    // Accept the model's sequence; findings keep the engine's severity and
    // ordinal but adopt the model's naming when it produced one.
    let mut findings = engine.findings.clone();
    let named = !verdict.complex_label.trim().is_empty()
        && verdict.complex_label.trim().to_ascii_lowercase() != "none";
    if named {
        if let Some(first) = findings.first_mut() {
            first.complex_label = verdict.complex_label.clone();
            first.message = verdict.message.clone();
        } else {
            findings.push(Finding {
                complex_label: verdict.complex_label.clone(),
                rule_ordinal: usize::MAX,
                original: seq.to_vec(),
                corrected: verdict.corrected.clone(),
                message: verdict.message.clone(),
                severity: Severity::Warning,
            });
        }
    }
    for finding in &mut findings {
        finding.corrected = verdict.corrected.clone();
    }
    Ok(VerifyResult {
        corrected: verdict.corrected,
        findings,
        source: VerdictSource::Llm,
        degraded: false,
        note: None,
        raw_response: Some(response),
    })
}

/// Deterministic mock that answers from the rule engine. It reads the
/// sequence back off the `SEQUENCE:` line of the default prompt template.
pub struct RuleMockClient {
    rules: RuleSet,
}

impl RuleMockClient {
    pub fn new(rules: RuleSet) -> Self {
        Self { rules }
    }
}

impl CompletionClient for RuleMockClient {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let sequence_line = prompt
            .lines()
            .find_map(|l| l.trim().strip_prefix("SEQUENCE:"))
            .ok_or_else(|| LlmError::Transport("prompt has no SEQUENCE line".into()))?;
        let mut seq = Vec::new();
        for token in sequence_line.split("->") {
            let token = token.trim();
            if token.is_empty() {
                continue;
            }
            let label = ActivityLabel::parse(token).map_err(|e| LlmError::Transport(e.to_string()))?;
            seq.push(label);
        }
        if seq.is_empty() {
            return Err(LlmError::Transport("empty sequence in prompt".into()));
        }
        let outcome = check_sequence(&seq, &self.rules)?;
        let (complex, message) = outcome
            .findings
            .first()
            .map(|f| (f.complex_label.clone(), f.message.clone()))
            .unwrap_or_else(|| ("none".to_string(), "ok".to_string()));
        Ok(format!(
            "CORRECTED: {}\nCOMPLEX: {}\nMESSAGE: {}",
            render_sequence(&outcome.corrected),
            complex,
            message
        ))
    }

    fn identity(&self) -> ClientIdentity {
        ClientIdentity::Mock
    }
}

/// Mock returning one fixed response; handy for failure-path tests.
pub struct CannedClient {
    pub response: String,
}

impl CompletionClient for CannedClient {
    fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
        Ok(self.response.clone())
    }

    fn identity(&self) -> ClientIdentity {
        ClientIdentity::Mock
    }
}

/// Mock that always fails at the transport level.
pub struct FailingClient;

impl CompletionClient for FailingClient {
    fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
        Err(LlmError::Transport("connection refused".into()))
    }

    fn identity(&self) -> ClientIdentity {
        ClientIdentity::Mock
    }
}

#[cfg(feature = "http")]
pub use http_client::HttpClient;

#[cfg(feature = "http")]
mod http_client {
    use super::*;
    use std::time::Duration;

    /// Chat-completions client: `POST {endpoint}/chat/completions` with
    /// `model`, `messages`, `temperature: 0`. The API key comes from
    /// `AMBIENT_LLM_KEY` and never appears in logs or identity strings.
    pub struct HttpClient {
        endpoint: String,
        model: String,
        api_key: Option<String>,
        timeout: Duration,
        attempts: u32,
        agent: ureq::Agent,
    }

    impl HttpClient {
        pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
            Self::with_timeout(endpoint, model, Duration::from_secs(DEFAULT_TIMEOUT_SECS))
        }

        pub fn with_timeout(
            endpoint: impl Into<String>,
            model: impl Into<String>,
            timeout: Duration,
        ) -> Self {
            let agent = ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .build()
                .into();
            Self {
                endpoint: endpoint.into().trim_end_matches('/').to_string(),
                model: model.into(),
                api_key: std::env::var(API_KEY_ENV).ok(),
                timeout,
                attempts: 3,
                agent,
            }
        }

        pub fn timeout(&self) -> Duration {
            self.timeout
        }

        fn request_once(&self, prompt: &str) -> Result<String, LlmError> {
            let url = format!("{}/chat/completions", self.endpoint);
            let body = serde_json::json!({
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": 0,
            });
            let mut request = self.agent.post(&url);
            if let Some(key) = &self.api_key {
                request = request.header("authorization", &format!("Bearer {key}"));
            }
            let mut response = request
                .send_json(&body)
                .map_err(|e| LlmError::Transport(e.to_string()))?;
            let parsed: serde_json::Value = response
                .body_mut()
                .read_json()
                .map_err(|e| LlmError::Transport(e.to_string()))?;
            parsed["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| LlmError::Parse {
                    reason: "response carries no choices[0].message.content".into(),
                    raw: parsed.to_string(),
                })
        }
    }

    impl CompletionClient for HttpClient {
        fn complete(&self, prompt: &str) -> Result<String, LlmError> {
            let mut last = None;
            for attempt in 0..self.attempts {
                match self.request_once(prompt) {
                    Ok(text) => return Ok(text),
                    Err(e @ LlmError::Transport(_)) => {
                        last = Some(e);
                        if attempt + 1 < self.attempts {
                            std::thread::sleep(Duration::from_millis(100 << attempt));
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(last.unwrap_or_else(|| LlmError::Transport("no attempts made".into())))
        }

        fn identity(&self) -> ClientIdentity {
            ClientIdentity::Http {
                endpoint: self.endpoint.clone(),
                model: self.model.clone(),
            }
        }
    }
}
