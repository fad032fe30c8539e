use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::metrics::{check_well_formed, preloaded};
use super::{AuditError, AuditLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PropertyId {
    #[serde(rename = "P1_pass_before_action")]
    PassBeforeAction,
    #[serde(rename = "P2_cited_evidence_exists_before_use")]
    CitedEvidenceExistsBeforeUse,
    #[serde(rename = "P3_single_final_action")]
    SingleFinalAction,
}

impl PropertyId {
    pub fn as_str(self) -> &'static str {
        match self {
            PropertyId::PassBeforeAction => "P1_pass_before_action",
            PropertyId::CitedEvidenceExistsBeforeUse => "P2_cited_evidence_exists_before_use",
            PropertyId::SingleFinalAction => "P3_single_final_action",
        }
    }
}

impl fmt::Display for PropertyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub property_id: PropertyId,
    pub holds: bool,
    /// Index into `log` of the first offending entry.
    pub counterexample: Option<usize>,
}

impl PropertyResult {
    fn from_first_violation(property_id: PropertyId, counterexample: Option<usize>) -> Self {
        Self {
            property_id,
            holds: counterexample.is_none(),
            counterexample,
        }
    }
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.counterexample {
            None => write!(f, "{} holds=true", self.property_id),
            Some(i) => write!(f, "{} holds=false counterexample=log[{i}]", self.property_id),
        }
    }
}

/// P1: every Action is preceded in its loop by a Control PASS.
fn pass_before_action(log: &AuditLog) -> Option<usize> {
    log.log.iter().position(|e| {
        let Some(phases) = &e.phases else { return false };
        let Some(action_at) = phases.iter().position(|p| p == "Action") else {
            return e.action.is_some();
        };
        let control_before = phases[..action_at].iter().any(|p| p == "Control");
        !(control_before && e.control_status() == Some("PASS"))
    })
}

/// P2: every ref cited by a decision was stored by an earlier entry.
fn cited_before_use(log: &AuditLog) -> Option<usize> {
    let mut stored: BTreeSet<String> = preloaded(log).into_iter().map(|(r, _, _)| r).collect();
    for (i, e) in log.log.iter().enumerate() {
        if e.decision.is_some() {
            let evidence = e.evidence.as_deref().unwrap_or_default();
            if evidence.iter().any(|r| !stored.contains(r)) {
                return Some(i);
            }
        }
        if let Some((r, _)) = e.stored() {
            stored.insert(r.to_owned());
        }
    }
    None
}

/// P3: at most one executed final action.
fn single_final(log: &AuditLog) -> Option<usize> {
    log.log
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_final_action())
        .nth(1)
        .map(|(i, _)| i)
}

pub fn check_trace_properties(log: &AuditLog) -> Result<Vec<PropertyResult>, AuditError> {
    check_well_formed(log)?;
    Ok(vec![
        PropertyResult::from_first_violation(PropertyId::PassBeforeAction, pass_before_action(log)),
        PropertyResult::from_first_violation(PropertyId::CitedEvidenceExistsBeforeUse, cited_before_use(log)),
        PropertyResult::from_first_violation(PropertyId::SingleFinalAction, single_final(log)),
    ])
}
