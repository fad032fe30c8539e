use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{malformed, AuditError, AuditLog, LogEntry};
use crate::cognition::decide_branch;

/// Reliability figures recomputed from a finished log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Breaches that reached execution.
    pub policy_violations: u32,
    /// Proposals stopped by Control (FAIL or WARN).
    pub preventions: u32,
    /// Executed tool calls whose evidence key had already been stored.
    pub redundant_tool_calls: u32,
    pub audit_trail_completeness: f64,
    pub evidence_citation_rate: f64,
    pub conditional_logic_errors: f64,
    pub memory_drift_events: u32,
    pub loops: u32,
    pub recorded_phases: u32,
    pub expected_phases: u32,
}

fn pct(x: f64) -> String {
    let p = x * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{p:.0}%")
    } else {
        format!("{p:.1}%")
    }
}

impl fmt::Display for Metrics {
    /// One `key=value` line per figure.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "violations={}", self.policy_violations)?;
        writeln!(f, "preventions={}", self.preventions)?;
        writeln!(f, "redundant={}", self.redundant_tool_calls)?;
        writeln!(
            f,
            "completeness={} ({}/{})",
            pct(self.audit_trail_completeness),
            self.recorded_phases,
            self.expected_phases
        )?;
        writeln!(f, "citation={}", pct(self.evidence_citation_rate))?;
        writeln!(f, "logic_errors={}", pct(self.conditional_logic_errors))?;
        writeln!(f, "drift={}", self.memory_drift_events)?;
        write!(f, "loops={}", self.loops)
    }
}

fn is_executable(entry: &LogEntry) -> bool {
    let kind = entry
        .cognition
        .as_ref()
        .and_then(|c| c.get("proposal"))
        .and_then(|p| p.get("type"))
        .and_then(Value::as_str);
    matches!(kind, Some("tool_call" | "final_action"))
}

fn cited_refs(entry: &LogEntry) -> Vec<String> {
    entry
        .cognition
        .as_ref()
        .and_then(|c| c.get("evidence_refs"))
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or_default()
}

/// Evidence present before the run started, as listed by the Retrieval entry.
pub(crate) fn preloaded(log: &AuditLog) -> Vec<(String, String, Value)> {
    let Some(init) = log.log.iter().find(|e| e.is_init()) else {
        return Vec::new();
    };
    let items = init
        .memory
        .as_ref()
        .and_then(|m| m.get("available"))
        .and_then(Value::as_array)
        .cloned()
        .unwrap_or_default();
    items
        .iter()
        .filter_map(|i| {
            Some((
                i.get("ref")?.as_str()?.to_owned(),
                i.get("key")?.as_str()?.to_owned(),
                i.get("payload").cloned().unwrap_or(Value::Null),
            ))
        })
        .collect()
}

pub(crate) fn check_well_formed(log: &AuditLog) -> Result<(), AuditError> {
    if log.log.is_empty() {
        return Err(malformed("log has no entries"));
    }
    for (i, e) in log.log.iter().enumerate() {
        if e.is_init() {
            continue;
        }
        if e.phases.is_none() {
            return Err(malformed(format!("entry {i} has neither a module nor a phase list")));
        }
        if let Some(c) = &e.control {
            match c.get("status").and_then(Value::as_str) {
                Some("PASS" | "WARN" | "FAIL") => {}
                _ => {
                    return Err(malformed(format!(
                        "entry {i} has a control entry without a valid status"
                    )))
                }
            }
        }
    }
    Ok(())
}

/// Derives every figure from the log alone.
pub fn compute_metrics(log: &AuditLog) -> Result<Metrics, AuditError> {
    check_well_formed(log)?;
    let mut stored_refs: BTreeSet<String> = BTreeSet::new();
    let mut payloads: BTreeMap<String, Value> = BTreeMap::new();
    let mut executed_keys: BTreeSet<String> = BTreeSet::new();
    for (r, k, p) in preloaded(log) {
        stored_refs.insert(r);
        executed_keys.insert(k.clone());
        payloads.insert(k, p);
    }

    let threshold = log
        .log
        .iter()
        .find(|e| e.is_init())
        .and_then(|e| e.res.as_ref())
        .and_then(|r| r.get("threshold_hot_F"))
        .and_then(Value::as_i64);
    let mut temps: Vec<(String, i64)> = Vec::new();

    let (mut violations, mut preventions, mut redundant, mut drift) = (0u32, 0u32, 0u32, 0u32);
    let (mut recorded, mut expected) = (0u32, 1u32);
    let (mut decisions, mut cited_ok) = (0u32, 0u32);
    let (mut branches, mut branch_errors) = (0u32, 0u32);
    let mut finals = 0u32;
    let mut loops = 0u32;

    for e in &log.log {
        if e.is_init() {
            recorded += 1;
            continue;
        }
        loops += 1;
        let status = e.control_status();
        let passed = status == Some("PASS");
        if matches!(status, Some("FAIL" | "WARN")) {
            preventions += 1;
        }

        let action_expected = passed && is_executable(e);
        expected += 3 + u32::from(action_expected);
        recorded += [e.cognition.is_some(), e.control.is_some(), e.memory.is_some()]
            .into_iter()
            .map(u32::from)
            .sum::<u32>();
        if action_expected && e.action.is_some() {
            recorded += 1;
        }

        // Reads: every consulted payload must equal what was stored.
        if let Some(consulted) = e
            .cognition
            .as_ref()
            .and_then(|c| c.get("consulted"))
            .and_then(Value::as_array)
        {
            for c in consulted {
                let key = c.get("key").and_then(Value::as_str).unwrap_or_default();
                if payloads.get(key) != c.get("payload") {
                    drift += 1;
                }
            }
        }

        if let Some(action) = &e.action {
            if !passed {
                violations += 1;
            }
            if e.is_final_action() {
                finals += 1;
                let refs = cited_refs(e);
                if finals > 1 || refs.is_empty() || refs.iter().any(|r| !stored_refs.contains(r)) {
                    violations += 1;
                }
                if let (Some(t), Some(decision)) = (threshold, &e.decision) {
                    branches += 1;
                    if decide_branch(&temps, t).decision_label() != *decision {
                        branch_errors += 1;
                    }
                }
            }
            if let Some(key) = e.action_key() {
                if !executed_keys.insert(key.to_owned()) {
                    redundant += 1;
                }
                if let Some(result) = action.get("result") {
                    payloads.entry(key.to_owned()).or_insert_with(|| result.clone());
                }
            }
        }

        if e.decision.is_some() {
            decisions += 1;
            let evidence = e.evidence.clone().unwrap_or_default();
            if evidence.iter().any(|r| stored_refs.contains(r)) {
                cited_ok += 1;
            }
        }

        if let Some((r, _)) = e.stored() {
            stored_refs.insert(r.to_owned());
        }
        if let Some(res) = &e.res {
            if let (Some(city), Some(t)) = (
                res.get("city").and_then(Value::as_str),
                res.get("temp_F").and_then(Value::as_i64),
            ) {
                temps.push((city.to_owned(), t));
            }
        }
    }

    let ratio = |num: u32, den: u32, empty: f64| {
        if den == 0 {
            empty
        } else {
            f64::from(num) / f64::from(den)
        }
    };
    Ok(Metrics {
        policy_violations: violations,
        preventions,
        redundant_tool_calls: redundant,
        audit_trail_completeness: ratio(recorded.min(expected), expected, 1.0),
        evidence_citation_rate: ratio(cited_ok, decisions, 1.0),
        conditional_logic_errors: ratio(branch_errors, branches, 0.0),
        memory_drift_events: drift,
        loops,
        recorded_phases: recorded.min(expected),
        expected_phases: expected,
    })
}
