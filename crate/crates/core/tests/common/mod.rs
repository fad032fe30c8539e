//! Shared helpers for the integration and acceptance tests. The oracles here
//! are written from the task rules directly and deliberately share no code
//! with the library's planners.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use scl::audit::{AuditLog, LogEntry};
use scl::cognition::{Allocation, CognitionOutput, MockEngine, Proposal, ScriptedEngine};
use scl::domain::{EvidenceRef, FinalAction, ToolCall};
use scl::memory::MemoryStore;
use scl::orchestrator::{run, AllocationScenario, RunOptions, TaskSpec};
use scl::tools::{EmployeeProfile, Fixtures, ToolRegistry};

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn golden_text(id: &str) -> String {
    std::fs::read_to_string(repo_path(&format!("experiments/golden/{id}.audit.json"))).expect("golden file")
}

pub fn run_mock(spec: &TaskSpec) -> (AuditLog, MemoryStore) {
    let mut memory = MemoryStore::in_memory();
    let log = run(
        spec,
        &mut MockEngine,
        &ToolRegistry::mock(&Fixtures::default()),
        &mut memory,
        &RunOptions::default(),
    )
    .expect("mock run");
    (log, memory)
}

pub fn run_script(spec: &TaskSpec, script: Vec<CognitionOutput>, options: RunOptions) -> (AuditLog, MemoryStore) {
    let mut memory = MemoryStore::in_memory();
    let log = run(
        spec,
        &mut ScriptedEngine::new(script),
        &ToolRegistry::mock(&Fixtures::default()),
        &mut memory,
        &options,
    )
    .expect("scripted run");
    (log, memory)
}

pub fn weather_query(city: &str) -> CognitionOutput {
    CognitionOutput::new(
        format!("Query {city}."),
        Proposal::tool_call(ToolCall::with("get_weather", [("city", city)])),
    )
}

pub fn image_final(description: &str, refs: &[&str]) -> CognitionOutput {
    CognitionOutput::new(
        "Finalize.",
        Proposal::final_action(FinalAction::tool(
            ToolCall::with("generate_image", [("description", description)]),
            "San Francisco",
        )),
    )
    .citing(refs.iter().map(|r| EvidenceRef::from_raw(*r)))
}

pub fn bounded(max_loops: u32) -> RunOptions {
    RunOptions {
        max_loops: Some(max_loops),
        ..RunOptions::default()
    }
}

/// No entry whose Control verdict is not PASS carries an Action.
pub fn no_action_after_block(log: &AuditLog) -> bool {
    log.log
        .iter()
        .filter(|e| matches!(e.control_status(), Some("FAIL" | "WARN")))
        .all(|e| e.action.is_none())
}

pub fn control_reason(e: &LogEntry) -> &str {
    e.control
        .as_ref()
        .and_then(|c| c["reason"].as_str())
        .unwrap_or_default()
}

pub fn control_policy(e: &LogEntry) -> &str {
    e.control
        .as_ref()
        .and_then(|c| c["policy_id"].as_str())
        .unwrap_or_default()
}

// --- Trip-rule oracle ------------------------------------------------------

/// The trip rules as a lookup on the number of cities strictly above the
/// threshold. Returns the decision label the log should record.
pub fn trip_rule_oracle(temps: &[(&str, i64)], threshold: i64) -> String {
    let above: Vec<(&str, i64)> = temps.iter().copied().filter(|(_, t)| *t > threshold).collect();
    let mut coolest: Option<(&str, i64)> = None;
    for (c, t) in &above {
        if coolest.is_none_or(|(_, best)| *t < best) {
            coolest = Some((c, *t));
        }
    }
    let dest = coolest.map(|(c, _)| c).unwrap_or("");
    match above.len() {
        3 => format!("generate_image({dest})"),
        2 => format!("send_email({dest})"),
        1 => format!("answer({dest})"),
        0 => "recommend_snacks()".to_owned(),
        _ => unreachable!("three cities"),
    }
}

// --- Allocation oracle -----------------------------------------------------

pub struct Roster {
    pub scenario: AllocationScenario,
    pub profiles: BTreeMap<String, EmployeeProfile>,
    pub allocation: Allocation,
}

/// Random roster with a random (often overloaded) allocation that respects
/// the skill map.
pub fn random_roster(rng: &mut StdRng) -> Roster {
    let n_emp = rng.random_range(2..=5usize);
    let n_task = rng.random_range(2..=8usize);
    let employees: Vec<String> = (0..n_emp).map(|i| format!("E{i}")).collect();
    let tasks: Vec<String> = (0..n_task).map(|i| format!("T{i}")).collect();
    let mut weights = BTreeMap::new();
    let mut skill_map = BTreeMap::new();
    for t in &tasks {
        weights.insert(t.clone(), rng.random_range(1..=4u32) as f64);
        let mut allowed: Vec<String> = employees.iter().filter(|_| rng.random_bool(0.5)).cloned().collect();
        if allowed.is_empty() {
            allowed.push(employees[rng.random_range(0..n_emp)].clone());
        }
        skill_map.insert(t.clone(), allowed);
    }
    let profiles = employees
        .iter()
        .map(|e| {
            (
                e.clone(),
                EmployeeProfile {
                    skills: vec![],
                    capacity: rng.random_range(1..=n_task as u32),
                },
            )
        })
        .collect();
    let pairs: Vec<(String, String)> = tasks
        .iter()
        .map(|t| {
            let allowed = &skill_map[t];
            (t.clone(), allowed[rng.random_range(0..allowed.len())].clone())
        })
        .collect();
    let scenario = AllocationScenario {
        employees,
        tasks,
        weights,
        skill_map,
        required_skills: BTreeMap::new(),
        max_load_fraction: [0.3, 0.4, 0.5][rng.random_range(0..3)],
        manager_email: "m@example.com".into(),
    };
    let allocation = Allocation::new("A", pairs.iter().map(|(t, e)| (t.as_str(), e.as_str())));
    Roster {
        scenario,
        profiles,
        allocation,
    }
}

pub fn seeded(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

fn shares(r: &Roster, assignment: &BTreeMap<String, String>) -> BTreeMap<String, f64> {
    let total: f64 = r.scenario.tasks.iter().map(|t| r.scenario.weights[t]).sum();
    // Sum integer weights first so that equal loads compare exactly equal.
    let mut load: BTreeMap<String, f64> = r.scenario.employees.iter().map(|e| (e.clone(), 0.0)).collect();
    for (t, e) in assignment {
        *load.get_mut(e).unwrap() += r.scenario.weights[t];
    }
    load.into_iter().map(|(e, l)| (e, l / total)).collect()
}

pub fn max_share_of(r: &Roster, assignment: &BTreeMap<String, String>) -> f64 {
    shares(r, assignment).values().copied().fold(0.0, f64::max)
}

pub fn as_map(a: &Allocation) -> BTreeMap<String, String> {
    a.assignments
        .iter()
        .map(|x| (x.task.clone(), x.employee.clone()))
        .collect()
}

/// Brute force: the overloaded employee (highest share among those over the
/// limit or over capacity) and the best achievable max share over every
/// single move away from them that keeps skills and capacity. `None` when
/// nobody is overloaded; `Some((donor, None))` when no move qualifies.
pub fn best_single_move(r: &Roster) -> Option<(String, Option<f64>)> {
    let current = as_map(&r.allocation);
    let s = shares(r, &current);
    let count = |m: &BTreeMap<String, String>, e: &str| m.values().filter(|x| *x == e).count() as u32;
    let mut donor: Option<(String, f64)> = None;
    for e in &r.scenario.employees {
        let over = s[e] > r.scenario.max_load_fraction || count(&current, e) > r.profiles[e].capacity;
        if over && donor.as_ref().is_none_or(|(_, best)| s[e] > *best) {
            donor = Some((e.clone(), s[e]));
        }
    }
    let (donor, _) = donor?;
    let before = max_share_of(r, &current);
    let mut best: Option<f64> = None;
    for (task, holder) in &current {
        if *holder != donor {
            continue;
        }
        for to in &r.scenario.employees {
            if *to == donor || !r.scenario.skill_map[task].contains(to) {
                continue;
            }
            if count(&current, to) + 1 > r.profiles[to].capacity {
                continue;
            }
            let mut moved = current.clone();
            moved.insert(task.clone(), to.clone());
            let m = max_share_of(r, &moved);
            if m <= before + 1e-12 && best.is_none_or(|b| m < b) {
                best = Some(m);
            }
        }
    }
    Some((donor, best))
}

// --- Log mutations ---------------------------------------------------------

pub fn drop_control(log: &mut AuditLog, index: usize) {
    let e = &mut log.log[index];
    e.control = None;
    if let Some(p) = &mut e.phases {
        p.retain(|x| x != "Control");
    }
}

pub fn move_entry(log: &mut AuditLog, from: usize, to: usize) {
    let e = log.log.remove(from);
    log.log.insert(to, e);
}

pub fn duplicate_entry(log: &mut AuditLog, index: usize) {
    let e = log.log[index].clone();
    log.log.push(e);
}

pub fn final_index(log: &AuditLog) -> usize {
    log.log
        .iter()
        .position(LogEntry::is_final_action)
        .expect("a final action")
}
