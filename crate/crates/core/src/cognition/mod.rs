//! Proposal engines. Cognition only proposes; it never touches tools and only
//! reads memory.

mod allocation;
mod remote;
mod scripted;
mod weather;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ControlVerdict;
use crate::domain::{EvidenceKey, EvidenceRef, FinalAction, ToolCall};
use crate::memory::MemoryStore;
use crate::metaprompt::MetaPrompt;
use crate::orchestrator::{Scenario, TaskSpec};

pub(crate) use allocation::fmt_num;
pub use allocation::{
    allocation_table, greedy_allocation, max_weighted_share, repair_allocation, Allocation, AllocationPlanner,
    Assignment, RepairError,
};
pub use remote::{coerce_model_output, RemoteConfig, RemoteEngine, SchemaViolation, StubChatServer, StubReply};
pub use scripted::ScriptedEngine;
pub use weather::{decide_branch, Branch, BranchAction, BranchDecision, WeatherPlanner};

/// A non-final communication put up for review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draft {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Proposal {
    ToolCall { call: ToolCall },
    Allocation { allocation: Allocation },
    Draft { draft: Draft },
    FinalAction { action: FinalAction },
}

impl Proposal {
    pub fn tool_call(call: ToolCall) -> Self {
        Proposal::ToolCall { call }
    }

    pub fn final_action(action: FinalAction) -> Self {
        Proposal::FinalAction { action }
    }

    /// The tool this proposal would execute, if any.
    pub fn call(&self) -> Option<&ToolCall> {
        match self {
            Proposal::ToolCall { call } => Some(call),
            Proposal::FinalAction { action } => action.call(),
            Proposal::Allocation { .. } | Proposal::Draft { .. } => None,
        }
    }

    pub fn is_final(&self) -> bool {
        matches!(self, Proposal::FinalAction { .. })
    }

    /// Text body subject to communication checks: a draft, or the `body`
    /// argument of a call.
    pub fn communication_text(&self) -> Option<&str> {
        match self {
            Proposal::Draft { draft } => Some(&draft.text),
            _ => self.call().and_then(|c| c.arg_str("body")),
        }
    }
}

impl fmt::Display for Proposal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Proposal::ToolCall { call } => write!(f, "{call}"),
            Proposal::Allocation { allocation } => write!(f, "allocation(plan {})", allocation.label),
            Proposal::Draft { .. } => f.write_str("draft"),
            Proposal::FinalAction { action } => f.write_str(&action.summary_label()),
        }
    }
}

/// One cycle's proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitionOutput {
    pub reasoning: String,
    #[serde(default)]
    pub evidence_refs: Vec<EvidenceRef>,
    pub proposal: Proposal,
    #[serde(default)]
    pub consulted_keys: Vec<EvidenceKey>,
    /// Preferred loop label for the audit trail.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_label: Option<String>,
    /// Short rationale for decision entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

impl CognitionOutput {
    pub fn new(reasoning: impl Into<String>, proposal: Proposal) -> Self {
        Self {
            reasoning: reasoning.into(),
            evidence_refs: Vec::new(),
            proposal,
            consulted_keys: Vec::new(),
            loop_label: None,
            explanation: None,
        }
    }

    pub fn citing(mut self, refs: impl IntoIterator<Item = EvidenceRef>) -> Self {
        self.evidence_refs.extend(refs);
        self
    }

    pub fn labeled(mut self, label: impl Into<String>) -> Self {
        self.loop_label = Some(label.into());
        self
    }
}

pub struct CognitionContext<'a> {
    pub task: &'a TaskSpec,
    pub metaprompt: &'a MetaPrompt,
    pub memory: &'a MemoryStore,
    /// Feedback from Control when the previous proposal did not pass.
    pub last_verdict: Option<&'a ControlVerdict>,
    pub loop_index: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("cognition engine failed after {attempts} attempt(s): {message}")]
    Failure { attempts: u32, message: String },
    #[error("engine `{engine}` cannot handle this task: {message}")]
    Unsupported { engine: String, message: String },
}

pub trait CognitionEngine {
    fn name(&self) -> &str;

    /// Exactly one proposal per call. Must return in bounded time.
    fn next_proposal(&mut self, ctx: &CognitionContext<'_>) -> Result<CognitionOutput, EngineError>;
}

/// Deterministic rule-following planner for the two bundled scenarios.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockEngine;

impl CognitionEngine for MockEngine {
    fn name(&self) -> &str {
        "mock"
    }

    fn next_proposal(&mut self, ctx: &CognitionContext<'_>) -> Result<CognitionOutput, EngineError> {
        match &ctx.task.scenario {
            Scenario::Weather(w) => Ok(WeatherPlanner::new(w).plan(ctx.memory)),
            Scenario::Allocation(a) => AllocationPlanner::new(a).plan(ctx.memory),
        }
    }
}

/// Stored evidence for `call`, as `(ref, key)` when present.
pub(crate) fn consult(memory: &MemoryStore, call: &ToolCall) -> (EvidenceKey, Option<EvidenceRef>) {
    let key = crate::domain::canonical_evidence_key(call);
    let reference = memory.lookup(&key).map(|e| e.reference.clone());
    (key, reference)
}
