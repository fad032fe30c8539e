//! Cognition through a chat-completion HTTP endpoint.
//!
//! The model is asked for one JSON object per turn:
//!
//! ```json
//! {"reasoning": "...", "evidence_refs": ["wx-miami-001"],
//!  "action": {"type": "tool_call", "tool": "get_weather", "args": {"city": "Miami"}}}
//! ```
//!
//! Replies are coerced into a [`CognitionOutput`]; anything that cannot be
//! read that way is a schema violation and triggers a corrective retry.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use super::{Allocation, Assignment, CognitionContext, CognitionEngine, CognitionOutput, Draft, EngineError, Proposal};
use crate::domain::{Args, EvidenceRef, FinalAction, ToolCall};
use crate::tools::ToolSpec;

pub const ENV_BASE_URL: &str = "SCL_REMOTE_BASE_URL";
pub const ENV_API_KEY: &str = "SCL_REMOTE_API_KEY";
pub const ENV_MODEL: &str = "SCL_REMOTE_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub temperature: f64,
    /// Total attempts before a malformed reply becomes an engine failure.
    pub schema_attempts: u32,
    /// Total attempts per request on transport errors.
    pub transport_attempts: u32,
    pub backoff: Duration,
    pub timeout: Duration,
    /// Character budget for the memory digest in the prompt.
    pub digest_budget: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("missing environment variable {0}")]
pub struct MissingVar(pub &'static str);

impl RemoteConfig {
    pub fn new(base_url: &str, api_key: &str, model: &str) -> Self {
        Self {
            base_url: base_url.to_owned(),
            api_key: api_key.to_owned(),
            model: model.to_owned(),
            temperature: 0.7,
            schema_attempts: 2,
            transport_attempts: 3,
            backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(60),
            digest_budget: 4000,
        }
    }

    /// Reads the three `SCL_REMOTE_*` variables through `lookup`.
    pub fn from_env(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, MissingVar> {
        let get = |name: &'static str| lookup(name).filter(|v| !v.trim().is_empty()).ok_or(MissingVar(name));
        Ok(Self::new(&get(ENV_BASE_URL)?, &get(ENV_API_KEY)?, &get(ENV_MODEL)?))
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("reply does not match the proposal schema: {0}")]
pub struct SchemaViolation(pub String);

fn violation(msg: impl Into<String>) -> SchemaViolation {
    SchemaViolation(msg.into())
}

/// Pulls the outermost `{...}` out of a reply, tolerating code fences and
/// surrounding prose.
fn extract_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

fn str_field<'a>(obj: &'a Value, name: &str) -> Result<&'a str, SchemaViolation> {
    obj.get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| violation(format!("`{name}` must be a string")))
}

fn args_field(obj: &Value) -> Result<Args, SchemaViolation> {
    match obj.get("args") {
        None | Some(Value::Null) => Ok(Args::new()),
        Some(Value::Object(map)) => Ok(map.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
        Some(_) => Err(violation("`args` must be an object")),
    }
}

fn tool_call(obj: &Value) -> Result<ToolCall, SchemaViolation> {
    ToolCall::new(str_field(obj, "tool")?, args_field(obj)?).map_err(|e| violation(e.to_string()))
}

pub fn coerce_model_output(text: &str) -> Result<CognitionOutput, SchemaViolation> {
    let raw = extract_object(text).ok_or_else(|| violation("no JSON object in reply"))?;
    let v: Value = serde_json::from_str(raw).map_err(|e| violation(format!("invalid JSON: {e}")))?;
    let reasoning = str_field(&v, "reasoning")?.trim().to_owned();
    if reasoning.is_empty() {
        return Err(violation("`reasoning` is empty"));
    }
    let evidence_refs = match v.get("evidence_refs") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|i| {
                i.as_str()
                    .map(EvidenceRef::from_raw)
                    .ok_or_else(|| violation("evidence refs must be strings"))
            })
            .collect::<Result<_, _>>()?,
        Some(_) => return Err(violation("`evidence_refs` must be an array")),
    };
    let action = v
        .get("action")
        .filter(|a| a.is_object())
        .ok_or_else(|| violation("`action` object missing"))?;
    let proposal = match str_field(action, "type")? {
        "tool_call" => Proposal::tool_call(tool_call(action)?),
        "final" => Proposal::final_action(FinalAction::ToolBacked {
            call: tool_call(action)?,
            subject: action.get("subject").and_then(Value::as_str).map(str::to_owned),
        }),
        "answer" => Proposal::final_action(FinalAction::answer(str_field(action, "text")?)),
        "draft" => Proposal::Draft {
            draft: Draft {
                text: str_field(action, "text")?.to_owned(),
            },
        },
        "allocation" => {
            let label = action.get("label").and_then(Value::as_str).unwrap_or("A").to_owned();
            let map = action
                .get("assignments")
                .and_then(Value::as_object)
                .ok_or_else(|| violation("`assignments` must map task to employee"))?;
            let assignments = map
                .iter()
                .map(|(task, e)| {
                    e.as_str()
                        .map(|e| Assignment {
                            task: task.clone(),
                            employee: e.to_owned(),
                        })
                        .ok_or_else(|| violation("assignee must be a string"))
                })
                .collect::<Result<_, _>>()?;
            Proposal::Allocation {
                allocation: Allocation { label, assignments },
            }
        }
        other => return Err(violation(format!("unknown action type `{other}`"))),
    };
    let mut out = CognitionOutput::new(reasoning, proposal).citing(evidence_refs);
    out.explanation = v.get("explanation").and_then(Value::as_str).map(str::to_owned);
    Ok(out)
}

const OUTPUT_CONTRACT: &str = "Reply with exactly one JSON object and nothing else:\n\
{\"reasoning\": string, \"evidence_refs\": [string], \"action\": ACTION}\n\
ACTION is one of:\n\
{\"type\": \"tool_call\", \"tool\": name, \"args\": {...}}\n\
{\"type\": \"final\", \"tool\": name, \"args\": {...}, \"subject\": short label}\n\
{\"type\": \"answer\", \"text\": string}\n\
{\"type\": \"draft\", \"text\": string}\n\
{\"type\": \"allocation\", \"label\": string, \"assignments\": {task: employee}}\n\
Cite the refs of stored evidence your decision relies on. Do not repeat a tool call whose result is already in memory.";

pub struct RemoteEngine {
    config: RemoteConfig,
    agent: ureq::Agent,
    tools: Vec<ToolSpec>,
}

impl RemoteEngine {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            agent,
            tools: Vec::new(),
        }
    }

    /// Tool catalogue advertised in the system prompt.
    pub fn with_tools(mut self, tools: impl IntoIterator<Item = ToolSpec>) -> Self {
        self.tools = tools.into_iter().collect();
        self
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    /// System and user messages for one turn.
    pub fn assemble_prompt(&self, ctx: &CognitionContext<'_>) -> Vec<(&'static str, String)> {
        let mut system = String::new();
        if let Some(d) = &ctx.metaprompt.directive_text {
            system.push_str(d);
            system.push_str("\n\n");
        }
        system.push_str("Governing policies (checked programmatically before any action runs):\n");
        for p in &ctx.metaprompt.policies {
            system.push_str(&format!(
                "- {} ({}, scope {}, {})\n",
                p.id, p.kind, p.scope, p.enforcement
            ));
        }
        if !self.tools.is_empty() {
            system.push_str("\nTools:\n");
            for t in &self.tools {
                let args: Vec<String> = t
                    .arg_schema
                    .iter()
                    .map(|(n, s)| format!("{n}{}", if s.required { "" } else { "?" }))
                    .collect();
                system.push_str(&format!("- {}({})\n", t.name, args.join(", ")));
            }
        }
        system.push('\n');
        system.push_str(OUTPUT_CONTRACT);

        let mut user = format!(
            "Task: {}\n\nLoop {}.\n\nMemory (most recent first):\n",
            ctx.task.description, ctx.loop_index
        );
        let mut used = 0;
        let mut omitted = 0;
        for ev in ctx.memory.evidence().rev() {
            let line = format!("- {} {} {}\n", ev.reference, ev.key, ev.payload);
            if used + line.len() > self.config.digest_budget {
                omitted += 1;
                continue;
            }
            used += line.len();
            user.push_str(&line);
        }
        if ctx.memory.evidence_len() == 0 {
            user.push_str("(empty)\n");
        }
        if omitted > 0 {
            user.push_str(&format!("({omitted} older entries omitted)\n"));
        }
        if let Some(v) = ctx.last_verdict {
            user.push_str(&format!(
                "\nControl feedback on your previous proposal: {} {}: {}\n",
                v.status,
                v.policy_id.as_deref().unwrap_or("-"),
                v.reason
            ));
        }
        vec![("system", system), ("user", user)]
    }

    fn complete(&self, messages: &[(&str, String)]) -> Result<String, EngineError> {
        let body = json!({
            "model": self.config.model,
            "messages": messages.iter().map(|(role, content)| json!({"role": role, "content": content})).collect::<Vec<_>>(),
            "temperature": self.config.temperature,
        });
        let url = self.config.endpoint();
        let attempts = self.config.transport_attempts.max(1);
        let mut last_err = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff * 2u32.pow(attempt - 1));
            }
            let sent = self
                .agent
                .post(&url)
                .header("Authorization", &format!("Bearer {}", self.config.api_key))
                .send_json(&body);
            let mut resp = match sent {
                Ok(r) => r,
                Err(e) => {
                    last_err = e.to_string();
                    continue;
                }
            };
            let status = resp.status().as_u16();
            if !(200..300).contains(&status) {
                last_err = format!("HTTP {status}");
                continue;
            }
            let parsed: Value = match resp.body_mut().read_json() {
                Ok(v) => v,
                Err(e) => {
                    last_err = format!("unreadable response body: {e}");
                    continue;
                }
            };
            return parsed["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_owned)
                .ok_or_else(|| EngineError::Failure {
                    attempts: attempt + 1,
                    message: "response has no choices[0].message.content".into(),
                });
        }
        Err(EngineError::Failure {
            attempts,
            message: format!("transport: {last_err}"),
        })
    }
}

impl CognitionEngine for RemoteEngine {
    fn name(&self) -> &str {
        "remote"
    }

    fn next_proposal(&mut self, ctx: &CognitionContext<'_>) -> Result<CognitionOutput, EngineError> {
        let mut messages = self.assemble_prompt(ctx);
        let attempts = self.config.schema_attempts.max(1);
        let mut last = String::new();
        for _ in 0..attempts {
            let reply = self.complete(&messages)?;
            match coerce_model_output(&reply) {
                Ok(out) => return Ok(out),
                Err(e) => {
                    last = e.0.clone();
                    messages.push(("assistant", reply));
                    messages.push(("user", format!("Your reply was rejected ({}). {OUTPUT_CONTRACT}", e.0)));
                }
            }
        }
        Err(EngineError::Failure {
            attempts,
            message: format!("schema violation: {last}"),
        })
    }
}

/// A canned reply from [`StubChatServer`].
#[derive(Debug, Clone)]
pub enum StubReply {
    /// Returned as `choices[0].message.content`.
    Content(String),
    /// A bare HTTP error status.
    Status(u16),
}

/// Minimal local chat-completion endpoint serving canned replies in order
/// (the last one repeats). Requests are recorded for inspection.
pub struct StubChatServer {
    addr: std::net::SocketAddr,
    requests: Arc<Mutex<Vec<Value>>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubChatServer {
    pub fn start(replies: Vec<String>) -> std::io::Result<Self> {
        Self::start_with(replies.into_iter().map(StubReply::Content).collect())
    }

    pub fn start_with(replies: Vec<StubReply>) -> std::io::Result<Self> {
        assert!(!replies.is_empty(), "stub needs at least one reply");
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(Mutex::new(Vec::new()));
        let stop = Arc::new(AtomicBool::new(false));
        let (reqs, stop_flag) = (requests.clone(), stop.clone());
        let handle = std::thread::spawn(move || {
            let mut served = 0usize;
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let reply = &replies[served.min(replies.len() - 1)];
                served += 1;
                let _ = serve_one(stream, reply, &reqs);
            }
        });
        Ok(Self {
            addr,
            requests,
            stop,
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().expect("stub lock").clone()
    }
}

impl Drop for StubChatServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve_one(stream: TcpStream, reply: &StubReply, requests: &Mutex<Vec<Value>>) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut headers = BTreeMap::new();
    let mut line = String::new();
    reader.read_line(&mut line)?;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 || line.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_owned());
        }
    }
    let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body)?;
    if let Ok(v) = serde_json::from_slice(&body) {
        requests.lock().expect("stub lock").push(v);
    }
    let (status, payload) = match reply {
        StubReply::Content(c) => (
            "200 OK".to_owned(),
            json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": c}}]}).to_string(),
        ),
        StubReply::Status(code) => (format!("{code} Error"), json!({"error": "stub"}).to_string()),
    };
    let mut stream = stream;
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    stream.flush()
}
