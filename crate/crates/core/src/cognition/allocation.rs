use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{consult, CognitionOutput, EngineError, Proposal};
use crate::domain::{EvidenceRef, FinalAction, ToolCall};
use crate::memory::MemoryStore;
use crate::orchestrator::AllocationScenario;
use crate::tools::EmployeeProfile;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub task: String,
    pub employee: String,
}

/// Task assignments in project order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub label: String,
    pub assignments: Vec<Assignment>,
}

impl Allocation {
    pub fn new<'a>(label: &str, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self {
            label: label.to_owned(),
            assignments: pairs
                .into_iter()
                .map(|(t, e)| Assignment {
                    task: t.to_owned(),
                    employee: e.to_owned(),
                })
                .collect(),
        }
    }

    pub fn employee_of(&self, task: &str) -> Option<&str> {
        self.assignments
            .iter()
            .find(|a| a.task == task)
            .map(|a| a.employee.as_str())
    }

    pub fn tasks_of<'a>(&'a self, employee: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.assignments
            .iter()
            .filter(move |a| a.employee == employee)
            .map(|a| a.task.as_str())
    }

    /// Weighted load per employee, in roster order (employees with no task
    /// included at zero).
    pub fn loads(&self, scenario: &AllocationScenario) -> Vec<(String, f64)> {
        let mut loads: Vec<(String, f64)> = scenario.employees.iter().map(|e| (e.clone(), 0.0)).collect();
        for a in &self.assignments {
            let w = scenario.weight(&a.task);
            match loads.iter_mut().find(|(e, _)| *e == a.employee) {
                Some((_, l)) => *l += w,
                None => loads.push((a.employee.clone(), w)),
            }
        }
        loads
    }

    /// `Alice → Financial Report; Bob → Dashboard + UI Mockups; ...`
    pub fn describe(&self, scenario: &AllocationScenario) -> String {
        let mut parts = Vec::new();
        for e in &scenario.employees {
            let tasks: Vec<&str> = self.tasks_of(e).collect();
            if !tasks.is_empty() {
                parts.push(format!("{e} → {}", tasks.join(" + ")));
            }
        }
        parts.join("; ")
    }
}

/// Largest weighted share of total project weight, with the employee holding
/// it (earliest in roster order on ties).
pub fn max_weighted_share(allocation: &Allocation, scenario: &AllocationScenario) -> (String, f64) {
    let total = scenario.total_weight();
    allocation
        .loads(scenario)
        .into_iter()
        .map(|(e, l)| (e, if total > 0.0 { l / total } else { 0.0 }))
        .fold((String::new(), f64::NEG_INFINITY), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        })
}

fn has_skill(profile: Option<&EmployeeProfile>, skill: &str) -> bool {
    profile.is_some_and(|p| p.skills.iter().any(|s| s.eq_ignore_ascii_case(skill)))
}

/// First draft: each task goes to the first employee in roster order whose
/// profile lists the task's required skill, even if that overloads them.
/// Tasks without a required skill fall back to the skill map.
pub fn greedy_allocation(scenario: &AllocationScenario, profiles: &BTreeMap<String, EmployeeProfile>) -> Allocation {
    let assignments = scenario
        .tasks
        .iter()
        .map(|task| {
            let by_skill = scenario
                .required_skills
                .get(task)
                .and_then(|skill| scenario.employees.iter().find(|e| has_skill(profiles.get(*e), skill)));
            let by_map = || scenario.employees.iter().find(|e| scenario.compatible(task, e));
            let employee = by_skill.or_else(by_map).unwrap_or(&scenario.employees[0]).clone();
            Assignment {
                task: task.clone(),
                employee,
            }
        })
        .collect();
    Allocation {
        label: "A".to_owned(),
        assignments,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RepairError {
    #[error("no skill-compatible employee can take work from {employee} without raising the maximum load")]
    NoFeasibleRepair { employee: String },
}

fn next_label(label: &str) -> String {
    match label.as_bytes() {
        [b] if b.is_ascii_uppercase() && *b < b'Z' => ((b + 1) as char).to_string(),
        _ => format!("{label}'"),
    }
}

fn overloaded(
    allocation: &Allocation,
    scenario: &AllocationScenario,
    profiles: &BTreeMap<String, EmployeeProfile>,
) -> Option<String> {
    let total = scenario.total_weight();
    let mut worst: Option<(String, f64)> = None;
    for (e, load) in allocation.loads(scenario) {
        let share = load / total;
        let count = allocation.tasks_of(&e).count() as u32;
        let over_capacity = profiles.get(&e).is_some_and(|p| count > p.capacity);
        if (share > scenario.max_load_fraction || over_capacity) && worst.as_ref().is_none_or(|(_, s)| share > *s) {
            worst = Some((e, share));
        }
    }
    worst.map(|(e, _)| e)
}

/// Moves exactly one task away from the overloaded employee. Among moves to a
/// skill-compatible employee with spare capacity that do not raise the
/// maximum weighted share, the one with the lowest resulting maximum wins;
/// ties go to the task latest in the project list, then to the recipient
/// earliest in the roster. An allocation with nobody overloaded is returned
/// unchanged.
pub fn repair_allocation(
    rejected: &Allocation,
    scenario: &AllocationScenario,
    profiles: &BTreeMap<String, EmployeeProfile>,
) -> Result<Allocation, RepairError> {
    let Some(donor) = overloaded(rejected, scenario, profiles) else {
        return Ok(rejected.clone());
    };
    let (_, current_max) = max_weighted_share(rejected, scenario);
    let task_pos = |t: &str| scenario.tasks.iter().position(|x| x == t).unwrap_or(usize::MAX);

    // (resulting max share, task position, recipient roster position)
    let mut best: Option<(f64, usize, usize, Allocation)> = None;
    for (slot, a) in rejected.assignments.iter().enumerate() {
        if a.employee != donor {
            continue;
        }
        for (r_pos, recipient) in scenario.employees.iter().enumerate() {
            if *recipient == donor || !scenario.compatible(&a.task, recipient) {
                continue;
            }
            let held = rejected.tasks_of(recipient).count() as u32;
            if profiles.get(recipient).is_some_and(|p| held + 1 > p.capacity) {
                continue;
            }
            let mut candidate = rejected.clone();
            candidate.assignments[slot].employee = recipient.clone();
            let (_, new_max) = max_weighted_share(&candidate, scenario);
            if new_max > current_max + 1e-12 {
                continue;
            }
            let t_pos = task_pos(&a.task);
            let better = match &best {
                None => true,
                Some((m, tp, rp, _)) => {
                    if (new_max - m).abs() > 1e-12 {
                        new_max < *m
                    } else if t_pos != *tp {
                        t_pos > *tp
                    } else {
                        r_pos < *rp
                    }
                }
            };
            if better {
                best = Some((new_max, t_pos, r_pos, candidate));
            }
        }
    }
    let (_, _, _, mut repaired) = best.ok_or(RepairError::NoFeasibleRepair { employee: donor })?;
    repaired.label = next_label(&rejected.label);
    Ok(repaired)
}

/// Markdown-style table with one row per assignment.
pub fn allocation_table(allocation: &Allocation) -> String {
    let mut out = String::from("| Task | Assignee |\n|---|---|\n");
    for a in &allocation.assignments {
        out.push_str(&format!("| {} | {} |\n", a.task, a.employee));
    }
    out
}

pub(crate) fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x}")
    }
}

/// Profiles first, then a first-draft plan, repairs after each rejection,
/// and finally the summary email to the manager.
pub struct AllocationPlanner<'a> {
    scenario: &'a AllocationScenario,
}

impl<'a> AllocationPlanner<'a> {
    pub fn new(scenario: &'a AllocationScenario) -> Self {
        Self { scenario }
    }

    pub fn plan(&self, memory: &MemoryStore) -> Result<CognitionOutput, EngineError> {
        let mut profiles = BTreeMap::new();
        let mut refs: Vec<EvidenceRef> = Vec::new();
        let mut keys = Vec::new();
        let mut last_seen: Option<(&str, EmployeeProfile)> = None;
        for name in &self.scenario.employees {
            let call = ToolCall::with("get_employee_profile", [("name", name.as_str())]);
            let (key, found) = consult(memory, &call);
            keys.push(key);
            let Some(ev) = found.and_then(|r| memory.by_ref(&r)) else {
                let reasoning = match last_seen {
                    None => format!(
                        "Need profile for {name}. Consulting Memory shows no stored profile. Will query the employee directory."
                    ),
                    Some((prev, p)) => format!(
                        "Stored profile for {prev}: skills {}; capacity {}. Need profile for {name}.",
                        p.skills.join(", "),
                        p.capacity
                    ),
                };
                let mut out = CognitionOutput::new(reasoning, Proposal::tool_call(call))
                    .citing(refs)
                    .labeled(name.clone());
                out.consulted_keys = keys;
                return Ok(out);
            };
            let profile: EmployeeProfile =
                serde_json::from_value(ev.payload.clone()).map_err(|e| EngineError::Failure {
                    attempts: 1,
                    message: format!("stored profile for {name} is unreadable: {e}"),
                })?;
            refs.push(ev.reference.clone());
            last_seen = Some((name, profile.clone()));
            profiles.insert(name.clone(), profile);
        }

        let as_allocation = |payload: &serde_json::Value| match serde_json::from_value::<Proposal>(payload.clone()) {
            Ok(Proposal::Allocation { allocation }) => Some(allocation),
            _ => None,
        };
        let approved = memory.decisions().iter().rev().find_map(|d| as_allocation(&d.payload));

        let out = match approved {
            Some(plan) => self.summary_email(&plan, memory, refs),
            None => {
                let rejected = memory.rejections().iter().rev().find_map(|r| as_allocation(&r.payload));
                match rejected {
                    None => {
                        let plan = greedy_allocation(self.scenario, &profiles);
                        let reasoning = format!(
                            "All {} profiles stored. Propose Plan {}: {}.",
                            profiles.len(),
                            plan.label,
                            plan.describe(self.scenario)
                        );
                        let label = format!("plan-{}", plan.label);
                        CognitionOutput::new(reasoning, Proposal::Allocation { allocation: plan })
                            .citing(refs)
                            .labeled(label)
                    }
                    Some(prev) => match repair_allocation(&prev, self.scenario, &profiles) {
                        Ok(plan) => {
                            let moved = plan
                                .assignments
                                .iter()
                                .zip(&prev.assignments)
                                .find(|(new, old)| new.employee != old.employee);
                            let why = match moved {
                                Some((new, _)) => {
                                    let skill = profiles
                                        .get(&new.employee)
                                        .and_then(|p| p.skills.first())
                                        .map(String::as_str)
                                        .unwrap_or("matching");
                                    format!(
                                        " Redistributed {} to {} who has {skill} expertise and capacity.",
                                        new.task, new.employee
                                    )
                                }
                                None => String::new(),
                            };
                            let reasoning = format!(
                                "Plan {} was rejected. Propose Plan {}: {}.{why}",
                                prev.label,
                                plan.label,
                                plan.describe(self.scenario)
                            );
                            let label = format!("plan-{}", plan.label);
                            CognitionOutput::new(reasoning, Proposal::Allocation { allocation: plan })
                                .citing(refs)
                                .labeled(label)
                        }
                        Err(e) => CognitionOutput::new(
                            format!("Plan {} cannot be repaired: {e}.", prev.label),
                            Proposal::final_action(FinalAction::answer(format!("no feasible allocation: {e}"))),
                        )
                        .citing(refs)
                        .labeled("integrate"),
                    },
                }
            }
        };
        let mut out = out;
        out.consulted_keys = keys;
        Ok(out)
    }

    fn summary_email(&self, plan: &Allocation, memory: &MemoryStore, refs: Vec<EvidenceRef>) -> CognitionOutput {
        let to = self.scenario.manager_email.as_str();
        let cited: Vec<&str> = refs.iter().map(EvidenceRef::as_str).collect();
        let body = format!(
            "Hello,\n\nThe task allocation below passed the workload and skill checks (plan {}).\n\n{}\nProfiles consulted: {}\n",
            plan.label,
            allocation_table(plan),
            cited.join(", ")
        );
        let rejected = memory.rejections().len();
        let (who, share) = max_weighted_share(plan, self.scenario);
        let total = self.scenario.total_weight();
        let call = ToolCall::with(
            "send_email",
            [
                ("to", to),
                (
                    "subject",
                    format!("Project task allocation (plan {})", plan.label).as_str(),
                ),
                ("body", body.as_str()),
            ],
        );
        let mut out = CognitionOutput::new(
            format!(
                "Plan {} approved. Draft summary email with allocation table for {to}.",
                plan.label
            ),
            Proposal::final_action(FinalAction::tool(call, to)),
        )
        .citing(refs)
        .labeled("communicate");
        out.explanation = Some(format!(
            "Plan {} approved after {rejected} rejected plan(s); largest share {who} {}/{} ({:.1}%)",
            plan.label,
            fmt_num(share * total),
            fmt_num(total),
            share * 100.0
        ));
        out
    }
}
