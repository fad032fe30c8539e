//! The machine-readable audit trail: one entry per loop, plus a summary.
//!
//! Top-level entry fields (`loop`, `module`, `phases`, `res`, `decision`,
//! `evidence`, `explanation`) form the compact layout; the per-phase
//! detail objects (`cognition`, `control`, `action`, `memory`) are additive
//! and carry everything the metrics and trace checks need.

mod metrics;
mod properties;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::memory::{Phase, TraceEntry};

pub use metrics::{compute_metrics, Metrics};
pub use properties::{check_trace_properties, PropertyId, PropertyResult};

pub const STATUS_COMPLETED: &str = "completed";
pub const STATUS_LOOP_BOUND: &str = "aborted: loop bound";
pub const STATUS_ENGINE_FAILURE: &str = "aborted: engine failure";
pub const NO_FINAL_ACTION: &str = "none";

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("malformed audit log: {0}")]
    MalformedLog(String),
}

pub(crate) fn malformed(msg: impl Into<String>) -> AuditError {
    AuditError::MalformedLog(msg.into())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEntry {
    #[serde(rename = "loop")]
    pub loop_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phases: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub res: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directives: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cognition: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<Value>,
}

impl LogEntry {
    pub fn is_init(&self) -> bool {
        self.module.as_deref() == Some(Phase::Retrieval.as_str())
    }

    pub fn control_status(&self) -> Option<&str> {
        self.control.as_ref()?.get("status")?.as_str()
    }

    pub fn is_final_action(&self) -> bool {
        self.action
            .as_ref()
            .and_then(|a| a.get("final"))
            .and_then(Value::as_bool)
            .unwrap_or(false)
    }

    /// Evidence key of the executed call, if the Action ran a tool.
    pub fn action_key(&self) -> Option<&str> {
        self.action.as_ref()?.get("key")?.as_str()
    }

    /// `(ref, key)` stored by this entry's Memory phase.
    pub fn stored(&self) -> Option<(&str, &str)> {
        let s = self.memory.as_ref()?.get("stored")?;
        Some((s.get("ref")?.as_str()?, s.get("key")?.as_str()?))
    }

    pub fn has_phase(&self, phase: Phase) -> bool {
        match phase {
            Phase::Retrieval => self.is_init(),
            Phase::Cognition => self.cognition.is_some(),
            Phase::Control => self.control.is_some(),
            Phase::Action => self.action.is_some(),
            Phase::Memory => self.memory.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_action: String,
    pub policy_violations: u32,
    pub status: String,
    #[serde(default)]
    pub loops: u32,
    #[serde(default)]
    pub preventions: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditLog {
    pub task: String,
    pub policies: Vec<String>,
    pub log: Vec<LogEntry>,
    pub summary: Summary,
}

/// Pulls `name` out of a JSON object, leaving the rest.
fn take(body: &mut Map<String, Value>, name: &str) -> Option<Value> {
    body.remove(name)
}

impl AuditLog {
    /// Builds the log from one run's trace entries (in seq order).
    pub fn from_trace(task: &str, policies: Vec<String>, trace: &[TraceEntry], summary: Summary) -> Self {
        let mut log: Vec<LogEntry> = Vec::new();
        let mut current: Option<u32> = None;
        for t in trace {
            if current != Some(t.loop_index) || log.is_empty() {
                current = Some(t.loop_index);
                log.push(LogEntry {
                    loop_label: t.loop_label.clone(),
                    ..LogEntry::default()
                });
            }
            let entry = log.last_mut().expect("pushed above");
            let mut body = match &t.body {
                Value::Object(m) => m.clone(),
                other => Map::from_iter([("value".to_owned(), other.clone())]),
            };
            match t.phase {
                Phase::Retrieval => {
                    entry.module = Some(Phase::Retrieval.as_str().to_owned());
                    entry.res = take(&mut body, "res");
                    entry.directives = take(&mut body, "directives").and_then(|v| v.as_str().map(str::to_owned));
                    if !body.is_empty() {
                        entry.memory = Some(Value::Object(body));
                    }
                    continue;
                }
                Phase::Cognition => entry.cognition = Some(Value::Object(body)),
                Phase::Control => entry.control = Some(Value::Object(body)),
                Phase::Action => entry.action = Some(Value::Object(body)),
                Phase::Memory => {
                    entry.res = take(&mut body, "res");
                    entry.decision = take(&mut body, "decision").and_then(|v| v.as_str().map(str::to_owned));
                    entry.evidence = take(&mut body, "evidence").and_then(|v| serde_json::from_value(v).ok());
                    entry.explanation = take(&mut body, "explanation").and_then(|v| v.as_str().map(str::to_owned));
                    entry.memory = Some(Value::Object(body));
                }
            }
            entry
                .phases
                .get_or_insert_with(Vec::new)
                .push(t.phase.as_str().to_owned());
        }
        AuditLog {
            task: task.to_owned(),
            policies,
            log,
            summary,
        }
    }

    /// CCAM entries (everything except the Retrieval entry).
    pub fn loops(&self) -> impl Iterator<Item = (usize, &LogEntry)> {
        self.log.iter().enumerate().filter(|(_, e)| !e.is_init())
    }

    /// The log without per-phase detail: loop labels, phases, results,
    /// decisions and the headline summary. Golden comparisons use this view
    /// unless byte identity is requested.
    pub fn compact_view(&self) -> Value {
        let log: Vec<Value> = self
            .log
            .iter()
            .map(|e| {
                let mut m = Map::new();
                m.insert("loop".into(), e.loop_label.clone().into());
                if let Some(v) = &e.module {
                    m.insert("module".into(), v.clone().into());
                }
                if let Some(v) = &e.phases {
                    m.insert("phases".into(), v.clone().into());
                }
                if let Some(v) = &e.res {
                    m.insert("res".into(), v.clone());
                }
                if let Some(v) = &e.decision {
                    m.insert("decision".into(), v.clone().into());
                }
                if let Some(v) = &e.evidence {
                    m.insert("evidence".into(), v.clone().into());
                }
                if let Some(v) = &e.explanation {
                    m.insert("explanation".into(), v.clone().into());
                }
                Value::Object(m)
            })
            .collect();
        serde_json::json!({
            "task": self.task,
            "policies": self.policies,
            "log": log,
            "summary": {
                "final_action": self.summary.final_action,
                "policy_violations": self.summary.policy_violations,
            },
        })
    }
}

/// Pretty-printed JSON with fixed key order and a trailing newline.
pub fn serialize_audit(log: &AuditLog) -> String {
    let mut text = serde_json::to_string_pretty(log).expect("audit logs are plain data");
    text.push('\n');
    text
}

pub fn parse_audit(text: &str) -> Result<AuditLog, AuditError> {
    serde_json::from_str(text).map_err(|e| malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn trace(loop_index: u32, label: &str, phase: Phase, body: Value) -> TraceEntry {
        TraceEntry {
            seq: 0,
            loop_index,
            loop_label: label.into(),
            phase,
            body,
            at_ms: None,
        }
    }

    #[test]
    fn groups_phases_per_loop() {
        let entries = vec![
            trace(0, "init", Phase::Retrieval, json!({"res": {"need": ["x"]}})),
            trace(1, "x", Phase::Cognition, json!({"reasoning": "r"})),
            trace(1, "x", Phase::Control, json!({"status": "PASS"})),
            trace(1, "x", Phase::Action, json!({"final": false, "key": "k"})),
            trace(
                1,
                "x",
                Phase::Memory,
                json!({"res": {"a": 1}, "stored": {"ref": "r-x-001", "key": "k"}}),
            ),
        ];
        let summary = Summary {
            final_action: NO_FINAL_ACTION.into(),
            policy_violations: 0,
            status: STATUS_LOOP_BOUND.into(),
            loops: 1,
            preventions: 0,
        };
        let log = AuditLog::from_trace("t", vec!["p".into()], &entries, summary);
        assert_eq!(log.log.len(), 2);
        assert!(log.log[0].is_init());
        assert_eq!(
            log.log[1].phases.as_deref().unwrap(),
            ["Cognition", "Control", "Action", "Memory"]
        );
        assert_eq!(log.log[1].res, Some(json!({"a": 1})));
        assert_eq!(log.log[1].stored(), Some(("r-x-001", "k")));
        let text = serialize_audit(&log);
        assert_eq!(serialize_audit(&parse_audit(&text).unwrap()), text);
    }

    #[test]
    fn init_only_log() {
        let entries = vec![trace(0, "init", Phase::Retrieval, json!({"res": {"need": ["x"]}}))];
        let summary = Summary {
            final_action: NO_FINAL_ACTION.into(),
            policy_violations: 0,
            status: STATUS_LOOP_BOUND.into(),
            loops: 0,
            preventions: 0,
        };
        let log = AuditLog::from_trace("t", vec![], &entries, summary);
        assert_eq!(log.log.len(), 1);
        assert!(log.summary.status.starts_with("aborted"));
        assert!(parse_audit("{\"task\": 1}").is_err());
    }
}
