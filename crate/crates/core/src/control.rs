//! The policy gate between a proposal and its execution.
//!
//! [`validate`] is pure: it reads a memory snapshot and the run state and
//! returns a verdict. The orchestrator feeds the verdict back into
//! [`RunState::absorb`] so warn-then-reject bookkeeping stays in one place.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cognition::{fmt_num, max_weighted_share, Allocation, CognitionOutput, Proposal};
use crate::domain::{canonical_evidence_key, ToolCall};
use crate::memory::MemoryStore;
use crate::metaprompt::{Enforcement, MetaPrompt, Policy, PolicyType, Scope};
use crate::orchestrator::{AllocationScenario, Scenario, TaskSpec};
use crate::tools::EmployeeProfile;

/// Policy id used for the redundancy guard when the MetaPrompt declares no
/// `redundancy_check` policy of its own.
pub const IMPLICIT_REDUNDANCY_POLICY: &str = "no_redundant_tool_calls";

/// Marker value understood structurally by [`check_required_content`].
pub const ALLOCATION_TABLE_MARKER: &str = "allocation_table";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VerdictStatus {
    Pass,
    Warn,
    Fail,
}

impl VerdictStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictStatus::Pass => "PASS",
            VerdictStatus::Warn => "WARN",
            VerdictStatus::Fail => "FAIL",
        }
    }
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlVerdict {
    pub status: VerdictStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_id: Option<String>,
    pub reason: String,
    pub loop_index: u32,
}

impl ControlVerdict {
    pub fn pass(reason: impl Into<String>, loop_index: u32) -> Self {
        Self {
            status: VerdictStatus::Pass,
            policy_id: None,
            reason: reason.into(),
            loop_index,
        }
    }

    pub fn fail(policy_id: &str, reason: impl Into<String>, loop_index: u32) -> Self {
        Self {
            status: VerdictStatus::Fail,
            policy_id: Some(policy_id.to_owned()),
            reason: reason.into(),
            loop_index,
        }
    }

    pub fn warn(policy_id: &str, reason: impl Into<String>, loop_index: u32) -> Self {
        Self {
            status: VerdictStatus::Warn,
            ..Self::fail(policy_id, reason, loop_index)
        }
    }

    pub fn is_pass(&self) -> bool {
        self.status == VerdictStatus::Pass
    }
}

impl fmt::Display for ControlVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.policy_id {
            Some(id) => write!(f, "{} [{id}]: {}", self.status, self.reason),
            None => write!(f, "{}: {}", self.status, self.reason),
        }
    }
}

/// Mutable per-run bookkeeping owned by the loop.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub final_action_taken: bool,
    pub warned_policies: BTreeSet<String>,
    /// Breaches that reached execution.
    pub violation_count: u32,
    /// Proposals stopped before execution (FAIL or WARN).
    pub preventions: u32,
}

impl RunState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the consequences of a verdict.
    pub fn absorb(&mut self, verdict: &ControlVerdict) {
        match verdict.status {
            VerdictStatus::Pass => {}
            VerdictStatus::Warn => {
                if let Some(id) = &verdict.policy_id {
                    self.warned_policies.insert(id.clone());
                }
                self.preventions += 1;
            }
            VerdictStatus::Fail => self.preventions += 1,
        }
    }

    /// Marks the terminal action as executed. Panics if called twice, since
    /// the gate must have stopped a second one.
    pub fn mark_final(&mut self) {
        assert!(!self.final_action_taken, "a second final action reached execution");
        self.final_action_taken = true;
    }
}

/// Outcome of one policy check: `Ok(note)` or `Err(reason)`.
type Check = Result<String, String>;

fn in_scope(scope: Scope, proposal: &Proposal) -> bool {
    match scope {
        Scope::AllFinalActions => matches!(proposal, Proposal::FinalAction { .. } | Proposal::Draft { .. }),
        Scope::ToolCalls => proposal.call().is_some(),
        Scope::Allocations => matches!(proposal, Proposal::Allocation { .. }),
        Scope::Communications => proposal.communication_text().is_some(),
    }
}

/// Every cited ref must exist in memory, and at least one must be cited.
pub fn check_evidence_citation(output: &CognitionOutput, memory: &MemoryStore) -> Check {
    if output.evidence_refs.is_empty() {
        return Err("REJECTED: Missing evidence citations".into());
    }
    if let Some(r) = output.evidence_refs.iter().find(|r| memory.by_ref(r).is_none()) {
        return Err(format!("REJECTED: Cited evidence not in memory: {r}"));
    }
    Ok(format!(
        "Evidence citation present ({} stored)",
        output.evidence_refs.len()
    ))
}

pub fn check_redundancy(call: &ToolCall, memory: &MemoryStore) -> Check {
    let key = canonical_evidence_key(call);
    match memory.lookup(&key) {
        Some(ev) => Err(format!(
            "REJECTED: Redundant tool call: {key} already stored as {}",
            ev.reference
        )),
        None => Ok("no redundancy detected".into()),
    }
}

/// Profiles stored by `get_employee_profile`, keyed by employee.
pub fn stored_profiles(memory: &MemoryStore, employees: &[String]) -> BTreeMap<String, EmployeeProfile> {
    employees
        .iter()
        .filter_map(|name| {
            let call = ToolCall::with("get_employee_profile", [("name", name.as_str())]);
            let ev = memory.lookup_call(&call)?;
            let profile = serde_json::from_value(ev.payload.clone()).ok()?;
            Some((name.clone(), profile))
        })
        .collect()
}

/// Coverage, weighted share (strictly above `max_fraction` fails),
/// skill compatibility and capacity.
pub fn check_fairness(
    allocation: &Allocation,
    scenario: &AllocationScenario,
    profiles: &BTreeMap<String, EmployeeProfile>,
    max_fraction: f64,
) -> Check {
    for task in &scenario.tasks {
        let n = allocation.assignments.iter().filter(|a| a.task == *task).count();
        if n != 1 {
            return Err(format!("Allocation must assign `{task}` exactly once (found {n})"));
        }
    }
    if let Some(a) = allocation
        .assignments
        .iter()
        .find(|a| !scenario.tasks.contains(&a.task))
    {
        return Err(format!("Allocation names unknown task `{}`", a.task));
    }
    if let Some(a) = allocation
        .assignments
        .iter()
        .find(|a| !scenario.employees.contains(&a.employee))
    {
        return Err(format!("Allocation names unknown employee `{}`", a.employee));
    }
    let total = scenario.total_weight();
    let (who, share) = max_weighted_share(allocation, scenario);
    if share > max_fraction {
        return Err(format!(
            "Detected overload on {who} (weighted share {}/{} = {:.1}% > {:.1}%)",
            fmt_num(share * total),
            fmt_num(total),
            share * 100.0,
            max_fraction * 100.0
        ));
    }
    if let Some(a) = allocation
        .assignments
        .iter()
        .find(|a| !scenario.compatible(&a.task, &a.employee))
    {
        return Err(format!("Skill mismatch: {} assigned to {}", a.task, a.employee));
    }
    for e in &scenario.employees {
        let Some(profile) = profiles.get(e) else {
            return Err(format!(
                "No stored profile for {e}; justify assignments from stored profiles"
            ));
        };
        let count = allocation.tasks_of(e).count();
        if count > profile.capacity as usize {
            return Err(format!(
                "Capacity exceeded: {e} has {count} tasks (capacity {})",
                profile.capacity
            ));
        }
    }
    Ok(format!(
        "Balanced workloads ({} tasks / {} people), skill alignment intact, max share {who} {}/{} = {:.1}%",
        scenario.tasks.len(),
        scenario.employees.len(),
        fmt_num(share * total),
        fmt_num(total),
        share * 100.0
    ))
}

/// Data rows of the first pipe table in `text`, as cell lists. The header row
/// and the `---` separator are skipped.
pub fn table_rows(text: &str) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for line in text.lines().map(str::trim) {
        if !line.starts_with('|') {
            if seen_header {
                break;
            }
            continue;
        }
        let cells: Vec<String> = line.trim_matches('|').split('|').map(|c| c.trim().to_owned()).collect();
        if !seen_header {
            seen_header = true;
        } else if !cells
            .iter()
            .all(|c| !c.is_empty() && c.chars().all(|ch| matches!(ch, '-' | ':')))
        {
            rows.push(cells);
        }
    }
    rows
}

/// The `allocation_table` marker demands a table with exactly one row per
/// project task; any other marker is a plain substring requirement.
pub fn check_required_content(text: &str, marker: &str, tasks: Option<&[String]>) -> Check {
    if marker != ALLOCATION_TABLE_MARKER {
        return if text.contains(marker) {
            Ok(format!("Required content `{marker}` present"))
        } else {
            Err(format!("REJECTED: Required content missing: {marker}"))
        };
    }
    let rows = table_rows(text);
    if rows.is_empty() {
        return Err(format!("REJECTED: Required content missing: {marker}"));
    }
    if let Some(tasks) = tasks {
        if rows.len() != tasks.len() {
            return Err(format!(
                "REJECTED: {marker} has {} rows for {} tasks",
                rows.len(),
                tasks.len()
            ));
        }
        if let Some(t) = tasks.iter().find(|t| rows.iter().filter(|r| r[0] == **t).count() != 1) {
            return Err(format!("REJECTED: {marker} needs exactly one row for {t}"));
        }
    }
    Ok("Table present".into())
}

fn run_check(
    policy: &Policy,
    output: &CognitionOutput,
    memory: &MemoryStore,
    state: &RunState,
    task: &TaskSpec,
) -> Option<Check> {
    let proposal = &output.proposal;
    if !in_scope(policy.scope, proposal) {
        return None;
    }
    match policy.kind {
        PolicyType::EvidenceCitation => Some(check_evidence_citation(output, memory)),
        PolicyType::RedundancyCheck => proposal.call().map(|c| check_redundancy(c, memory)),
        PolicyType::SingleFinalAction => (proposal.call().is_some() || proposal.is_final()).then(|| {
            if state.final_action_taken {
                Err("REJECTED: A final action was already executed in this run".into())
            } else {
                Ok("single final action".into())
            }
        }),
        // Structural: the orchestrator only executes after PASS.
        PolicyType::ControlPassGate => None,
        PolicyType::FairnessCheck => {
            let Proposal::Allocation { allocation } = proposal else {
                return None;
            };
            Some(match &task.scenario {
                Scenario::Allocation(a) => {
                    let fraction = policy.param_f64("max_load_fraction").unwrap_or(a.max_load_fraction);
                    check_fairness(allocation, a, &stored_profiles(memory, &a.employees), fraction)
                }
                Scenario::Weather(_) => Err("Allocation proposed for a task without an allocation scenario".into()),
            })
        }
        PolicyType::RequiredContent => {
            let text = proposal.communication_text()?;
            let marker = policy.param("required_marker").unwrap_or(ALLOCATION_TABLE_MARKER);
            let tasks = match &task.scenario {
                Scenario::Allocation(a) => Some(a.tasks.as_slice()),
                Scenario::Weather(_) => None,
            };
            Some(check_required_content(text, marker, tasks))
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Checks `output` against every applicable policy in MetaPrompt order.
///
/// An executed final action forbids any further executable proposal. A
/// violated `reject` policy fails at once; the first violation of a
/// `warn_then_reject` policy in a run yields WARN unless a later policy
/// fails outright. Tool calls are always screened for redundancy, under
/// [`IMPLICIT_REDUNDANCY_POLICY`] when no `redundancy_check` policy exists.
pub fn validate(
    output: &CognitionOutput,
    memory: &MemoryStore,
    state: &RunState,
    metaprompt: &MetaPrompt,
    task: &TaskSpec,
    loop_index: u32,
) -> ControlVerdict {
    let proposal = &output.proposal;
    let executable = proposal.call().is_some() || proposal.is_final();
    if state.final_action_taken && executable {
        let id = metaprompt
            .of_kind(PolicyType::SingleFinalAction)
            .next()
            .map_or("single_final_action", |p| p.id.as_str());
        return ControlVerdict::fail(
            id,
            "REJECTED: A final action was already executed in this run",
            loop_index,
        );
    }

    let implicit_redundancy = Policy::new(
        IMPLICIT_REDUNDANCY_POLICY,
        PolicyType::RedundancyCheck,
        Scope::ToolCalls,
        Enforcement::Reject,
    );
    let has_redundancy = metaprompt.of_kind(PolicyType::RedundancyCheck).next().is_some();
    let policies = metaprompt
        .policies
        .iter()
        .chain((!has_redundancy).then_some(&implicit_redundancy));

    let mut notes: Vec<String> = Vec::new();
    let mut warning: Option<ControlVerdict> = None;
    for policy in policies {
        match run_check(policy, output, memory, state, task) {
            None => {}
            Some(Ok(note)) => {
                if !notes.contains(&note) {
                    notes.push(note);
                }
            }
            Some(Err(reason)) => {
                let first_offense = !state.warned_policies.contains(&policy.id);
                if policy.enforcement == Enforcement::WarnThenReject && first_offense {
                    warning.get_or_insert_with(|| ControlVerdict::warn(&policy.id, reason, loop_index));
                } else {
                    return ControlVerdict::fail(&policy.id, reason, loop_index);
                }
            }
        }
    }
    if let Some(w) = warning {
        return w;
    }
    if notes.is_empty() {
        notes.push("no applicable policy".into());
    }
    ControlVerdict::pass(capitalize(&notes.join(", ")), loop_index)
}
