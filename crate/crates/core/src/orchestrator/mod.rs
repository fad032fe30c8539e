//! The loop: one Retrieval step, then Cognition → Control → Action (only on
//! PASS) → Memory until a final action executes or the loop bound is hit.

mod task;

use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::audit::{AuditLog, Summary, NO_FINAL_ACTION, STATUS_COMPLETED, STATUS_ENGINE_FAILURE, STATUS_LOOP_BOUND};
use crate::cognition::{CognitionContext, CognitionEngine, CognitionOutput, EngineError, Proposal};
use crate::control::{validate, ControlVerdict, RunState, VerdictStatus};
use crate::domain::{canonical_evidence_key, FinalAction, ToolCall};
use crate::memory::{DecisionRecord, MemoryError, MemoryStore, Phase, RejectionRecord, TraceEntry};
use crate::tools::ToolRegistry;

pub use task::{
    short_name, AllocationScenario, InitResult, Scenario, SpecError, TaskSpec, WeatherScenario, ALLOCATION_TASK,
    DEFAULT_MAX_LOOPS, WEATHER_TASK,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Overrides the task's own bound when set.
    pub max_loops: Option<u32>,
    /// Stop as soon as a final action executes. Turning this off keeps the
    /// loop going so a misbehaving engine can be observed against the gate.
    pub halt_on_final: bool,
    /// Stamp trace entries with wall-clock milliseconds (never part of the
    /// audit document).
    pub timestamps: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_loops: None,
            halt_on_final: true,
            timestamps: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    InvalidSpec(#[from] SpecError),
    #[error("{error}")]
    EngineFailure { error: EngineError, log: Box<AuditLog> },
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Derives what the run needs from the scenario, without consulting a model.
pub fn initialize_context(spec: &TaskSpec) -> Result<InitResult, SpecError> {
    spec.validate()?;
    let (needs, threshold_hot_f) = match &spec.scenario {
        Scenario::Weather(w) => (
            w.cities.iter().map(|c| format!("{} weather", short_name(c))).collect(),
            Some(w.threshold_f),
        ),
        Scenario::Allocation(a) => (a.employees.iter().map(|e| format!("{e} profile")).collect(), None),
    };
    let mut directives = String::new();
    if let Some(d) = &spec.policies.directive_text {
        directives.push_str(d);
        directives.push(' ');
    }
    directives.push_str(&format!("Policies in force: {}.", spec.policies.ids().join(", ")));
    Ok(InitResult {
        needs,
        threshold_hot_f,
        grounded_directives: directives,
    })
}

struct Recorder<'m> {
    memory: &'m mut MemoryStore,
    timestamps: bool,
    first_seq: u64,
}

impl Recorder<'_> {
    fn record(&mut self, loop_index: u32, label: &str, phase: Phase, body: Value) -> Result<(), MemoryError> {
        let at_ms = self.timestamps.then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or_default()
        });
        let seq = self.memory.next_seq();
        self.memory.record_trace(TraceEntry {
            seq,
            loop_index,
            loop_label: label.to_owned(),
            phase,
            body,
            at_ms,
        })
    }

    fn run_trace(&self) -> &[TraceEntry] {
        let trace = self.memory.trace();
        let start = trace.partition_point(|t| t.seq < self.first_seq);
        &trace[start..]
    }
}

/// Compact result summary for the audit `res` field.
fn result_summary(call: &ToolCall, payload: &Value, reference: &str) -> Value {
    let mut m = Map::new();
    match call.tool() {
        "get_weather" => {
            m.insert("city".into(), payload.get("city").cloned().unwrap_or(Value::Null));
            m.insert(
                "temp_F".into(),
                payload.get("temperature_f").cloned().unwrap_or(Value::Null),
            );
        }
        "get_employee_profile" => {
            m.insert("name".into(), call.arg("name").cloned().unwrap_or(Value::Null));
            m.insert("skills".into(), payload.get("skills").cloned().unwrap_or(Value::Null));
            m.insert(
                "capacity".into(),
                payload.get("capacity").cloned().unwrap_or(Value::Null),
            );
        }
        other => {
            m.insert("tool".into(), other.into());
        }
    }
    m.insert("ref".into(), reference.into());
    Value::Object(m)
}

fn refs_json(output: &CognitionOutput) -> Value {
    output.evidence_refs.iter().map(|r| Value::from(r.as_str())).collect()
}

fn plan_label(proposal: &Proposal) -> String {
    match proposal {
        Proposal::Allocation { allocation } => allocation.label.clone(),
        other => other.to_string(),
    }
}

/// Executes one governed run and returns its audit log.
///
/// `memory` may already hold evidence from earlier work; it is consulted but
/// never rewritten. Everything this run records is appended to it.
pub fn run(
    spec: &TaskSpec,
    engine: &mut dyn CognitionEngine,
    registry: &ToolRegistry,
    memory: &mut MemoryStore,
    options: &RunOptions,
) -> Result<AuditLog, RunError> {
    let init = initialize_context(spec)?;
    let max_loops = options.max_loops.unwrap_or(spec.max_loops);
    if max_loops == 0 {
        return Err(SpecError::Invalid("max_loops must be at least 1".into()).into());
    }
    let mut rec = Recorder {
        first_seq: memory.next_seq(),
        memory,
        timestamps: options.timestamps,
    };

    let mut res = Map::new();
    res.insert("need".into(), json!(init.needs));
    if let Some(t) = init.threshold_hot_f {
        res.insert("threshold_hot_F".into(), json!(t));
    }
    let mut init_body = Map::new();
    init_body.insert("res".into(), Value::Object(res));
    init_body.insert("directives".into(), init.grounded_directives.clone().into());
    if rec.memory.evidence_len() > 0 {
        let available: Vec<Value> = rec
            .memory
            .evidence()
            .map(|e| json!({"ref": e.reference, "key": e.key, "payload": e.payload}))
            .collect();
        init_body.insert("available".into(), available.into());
    }
    rec.record(0, "init", Phase::Retrieval, Value::Object(init_body))?;

    let mut state = RunState::new();
    let mut last_verdict: Option<ControlVerdict> = None;
    let mut final_label: Option<String> = None;
    let mut loops = 0;

    for loop_index in 1..=max_loops {
        loops = loop_index;
        let ctx = CognitionContext {
            task: spec,
            metaprompt: &spec.policies,
            memory: rec.memory,
            last_verdict: last_verdict.as_ref(),
            loop_index,
        };
        let output = match engine.next_proposal(&ctx) {
            Ok(o) => o,
            Err(error) => {
                let label = format!("loop-{loop_index}");
                rec.record(
                    loop_index,
                    &label,
                    Phase::Cognition,
                    json!({ "error": error.to_string() }),
                )?;
                let summary = Summary {
                    final_action: final_label.unwrap_or_else(|| NO_FINAL_ACTION.into()),
                    policy_violations: state.violation_count,
                    status: STATUS_ENGINE_FAILURE.into(),
                    loops,
                    preventions: state.preventions,
                };
                let log = AuditLog::from_trace(spec.title(), spec.policies.ids(), rec.run_trace(), summary);
                return Err(RunError::EngineFailure {
                    error,
                    log: Box::new(log),
                });
            }
        };
        let label = output
            .loop_label
            .clone()
            .unwrap_or_else(|| format!("loop-{loop_index}"));
        let proposal = &output.proposal;

        let consulted: Vec<Value> = output
            .consulted_keys
            .iter()
            .filter_map(|k| rec.memory.lookup(k))
            .map(|e| json!({"ref": e.reference, "key": e.key, "payload": e.payload}))
            .collect();
        rec.record(
            loop_index,
            &label,
            Phase::Cognition,
            json!({
                "reasoning": output.reasoning,
                "proposal": proposal,
                "evidence_refs": refs_json(&output),
                "consulted": consulted,
            }),
        )?;

        let verdict = validate(&output, rec.memory, &state, &spec.policies, spec, loop_index);
        state.absorb(&verdict);
        rec.record(
            loop_index,
            &label,
            Phase::Control,
            json!({"status": verdict.status, "policy_id": verdict.policy_id, "reason": verdict.reason}),
        )?;

        let mut mem = Map::new();
        match verdict.status {
            VerdictStatus::Fail => {
                let record = RejectionRecord {
                    plan_label: plan_label(proposal),
                    reason: verdict.reason.clone(),
                    loop_index,
                    policy_id: verdict.policy_id.clone(),
                    payload: serde_json::to_value(proposal).expect("proposals serialize"),
                };
                mem.insert(
                    "rejection".into(),
                    json!({"plan": record.plan_label, "reason": record.reason, "policy_id": record.policy_id}),
                );
                rec.memory.record_rejection(record)?;
            }
            VerdictStatus::Warn => {
                mem.insert("note".into(), format!("warning: {}", verdict.reason).into());
            }
            VerdictStatus::Pass => match proposal {
                Proposal::ToolCall { call } => {
                    execute(&mut rec, registry, call, false, loop_index, &label, &mut mem)?;
                }
                Proposal::FinalAction { action } => {
                    let executed = match action {
                        FinalAction::ToolBacked { call, .. } => {
                            execute(&mut rec, registry, call, true, loop_index, &label, &mut mem)?
                        }
                        FinalAction::AnswerOnly { answer_text } => {
                            rec.record(
                                loop_index,
                                &label,
                                Phase::Action,
                                json!({"final": true, "answer": answer_text}),
                            )?;
                            true
                        }
                    };
                    if executed {
                        state.mark_final();
                        let decision = action.summary_label();
                        mem.insert("decision".into(), decision.clone().into());
                        mem.insert("evidence".into(), refs_json(&output));
                        if let Some(x) = &output.explanation {
                            mem.insert("explanation".into(), x.clone().into());
                        }
                        final_label = Some(decision);
                    }
                }
                Proposal::Allocation { allocation } => {
                    let decision = format!("approve_plan({})", allocation.label);
                    let justification = output.explanation.clone().unwrap_or_else(|| verdict.reason.clone());
                    rec.memory.record_decision(DecisionRecord {
                        label: allocation.label.clone(),
                        justification: justification.clone(),
                        loop_index,
                        payload: serde_json::to_value(proposal).expect("proposals serialize"),
                    })?;
                    mem.insert("decision".into(), decision.into());
                    mem.insert("evidence".into(), refs_json(&output));
                    mem.insert("explanation".into(), justification.into());
                }
                Proposal::Draft { .. } => {
                    mem.insert("note".into(), "draft approved for communication".into());
                }
            },
        }
        rec.record(loop_index, &label, Phase::Memory, Value::Object(mem))?;

        last_verdict = (!verdict.is_pass()).then_some(verdict);
        if state.final_action_taken && options.halt_on_final {
            break;
        }
    }

    let status = if state.final_action_taken {
        STATUS_COMPLETED
    } else {
        STATUS_LOOP_BOUND
    };
    let summary = Summary {
        final_action: final_label.unwrap_or_else(|| NO_FINAL_ACTION.into()),
        policy_violations: state.violation_count,
        status: status.into(),
        loops,
        preventions: state.preventions,
    };
    Ok(AuditLog::from_trace(
        spec.title(),
        spec.policies.ids(),
        rec.run_trace(),
        summary,
    ))
}

/// Action and evidence storage for one approved call. Returns whether the
/// tool ran; failures are logged, not raised.
fn execute(
    rec: &mut Recorder<'_>,
    registry: &ToolRegistry,
    call: &ToolCall,
    is_final: bool,
    loop_index: u32,
    label: &str,
    mem: &mut Map<String, Value>,
) -> Result<bool, MemoryError> {
    let key = canonical_evidence_key(call);
    match registry.execute_tool(call, rec.memory) {
        Ok(result) => {
            rec.record(
                loop_index,
                label,
                Phase::Action,
                json!({"call": call, "final": is_final, "key": key, "result": result.payload}),
            )?;
            let ev = rec.memory.put_evidence(call, &result, loop_index)?;
            if !is_final {
                mem.insert("res".into(), result_summary(call, &ev.payload, ev.reference.as_str()));
            }
            mem.insert("stored".into(), json!({"key": ev.key, "ref": ev.reference}));
            Ok(true)
        }
        Err(e) => {
            rec.record(
                loop_index,
                label,
                Phase::Action,
                json!({"call": call, "final": false, "error": e.to_string()}),
            )?;
            mem.insert("note".into(), format!("action failed: {e}").into());
            Ok(false)
        }
    }
}
