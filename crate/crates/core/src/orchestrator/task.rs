use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metaprompt::{builtin_policies, parse_policy_file, MetaPrompt, PolicyParseError, PolicyType};

pub const DEFAULT_MAX_LOOPS: u32 = 16;

/// Bundled task files.
pub const WEATHER_TASK: &str = include_str!("../../../../experiments/weather.task");
pub const ALLOCATION_TASK: &str = include_str!("../../../../experiments/allocation.task");

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("invalid task spec: {0}")]
    Invalid(String),
    #[error("task spec policies: {0}")]
    Policy(#[from] PolicyParseError),
    #[error("task spec syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("reading task spec: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherScenario {
    pub cities: Vec<String>,
    pub threshold_f: i64,
    #[serde(default = "default_notify_email")]
    pub notify_email: String,
}

fn default_notify_email() -> String {
    "test-scl@test.com".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationScenario {
    /// Roster order matters: the first draft assigns greedily in this order.
    pub employees: Vec<String>,
    /// Project order matters: repair ties go to the task latest in this list.
    pub tasks: Vec<String>,
    pub weights: BTreeMap<String, f64>,
    /// Task → employees allowed to take it.
    pub skill_map: BTreeMap<String, Vec<String>>,
    /// Task → profile skill the first draft matches on.
    #[serde(default)]
    pub required_skills: BTreeMap<String, String>,
    pub max_load_fraction: f64,
    pub manager_email: String,
}

impl AllocationScenario {
    pub fn weight(&self, task: &str) -> f64 {
        self.weights.get(task).copied().unwrap_or(1.0)
    }

    pub fn total_weight(&self) -> f64 {
        self.tasks.iter().map(|t| self.weight(t)).sum()
    }

    pub fn compatible(&self, task: &str, employee: &str) -> bool {
        self.skill_map
            .get(task)
            .is_some_and(|es| es.iter().any(|e| e == employee))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scenario {
    Weather(WeatherScenario),
    Allocation(AllocationScenario),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    /// Short title used as the audit `task` field; falls back to the description.
    pub title: Option<String>,
    pub description: String,
    pub policies: MetaPrompt,
    pub scenario: Scenario,
    pub max_loops: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    id: String,
    #[serde(default)]
    title: Option<String>,
    description: String,
    #[serde(default)]
    directive: Option<String>,
    #[serde(default)]
    policies: Option<String>,
    #[serde(default)]
    max_loops: Option<u32>,
    scenario: Scenario,
}

impl TaskSpec {
    /// Parses a task file. The policy set is the built-ins followed by any
    /// policies declared in the file.
    pub fn from_toml(text: &str) -> Result<Self, SpecError> {
        let file: TaskFile = toml::from_str(text)?;
        let mut policies = builtin_policies();
        if let Some(dsl) = &file.policies {
            policies = policies.union(parse_policy_file(dsl)?);
        }
        policies.directive_text = file.directive;
        let spec = TaskSpec {
            id: file.id,
            title: file.title,
            description: file.description,
            policies,
            scenario: file.scenario,
            max_loops: file.max_loops.unwrap_or(DEFAULT_MAX_LOOPS),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SpecError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn weather() -> Self {
        Self::from_toml(WEATHER_TASK).expect("bundled weather task is valid")
    }

    pub fn allocation() -> Self {
        Self::from_toml(ALLOCATION_TASK).expect("bundled allocation task is valid")
    }

    pub fn title(&self) -> &str {
        self.title.as_deref().unwrap_or(&self.description)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let invalid = |m: String| Err(SpecError::Invalid(m));
        if self.max_loops == 0 {
            return invalid("max_loops must be at least 1".into());
        }
        if self.policies.is_empty() {
            return invalid("a governed run needs at least one policy".into());
        }
        match &self.scenario {
            Scenario::Weather(w) => {
                if w.cities.is_empty() {
                    return invalid("weather scenario lists no cities".into());
                }
                let mut seen = HashSet::new();
                if let Some(dup) = w.cities.iter().find(|c| !seen.insert(c.as_str())) {
                    return invalid(format!("city `{dup}` listed twice"));
                }
            }
            Scenario::Allocation(a) => {
                if a.employees.is_empty() || a.tasks.is_empty() {
                    return invalid("allocation scenario needs employees and tasks".into());
                }
                if !(a.max_load_fraction > 0.0 && a.max_load_fraction <= 1.0) {
                    return invalid(format!("max_load_fraction {} outside (0, 1]", a.max_load_fraction));
                }
                if a.manager_email.trim().is_empty() {
                    return invalid("manager_email is empty".into());
                }
                let roster: HashSet<&str> = a.employees.iter().map(String::as_str).collect();
                if roster.len() != a.employees.len() {
                    return invalid("employee listed twice".into());
                }
                let mut seen = HashSet::new();
                for t in &a.tasks {
                    if !seen.insert(t.as_str()) {
                        return invalid(format!("task `{t}` listed twice"));
                    }
                    match a.weights.get(t) {
                        Some(w) if *w > 0.0 => {}
                        _ => return invalid(format!("task `{t}` needs a positive weight")),
                    }
                    let allowed = a.skill_map.get(t).map(Vec::as_slice).unwrap_or_default();
                    if allowed.is_empty() {
                        return invalid(format!("task `{t}` has no compatible employee"));
                    }
                    if let Some(e) = allowed.iter().find(|e| !roster.contains(e.as_str())) {
                        return invalid(format!("skill map names unknown employee `{e}`"));
                    }
                }
                for p in self.policies.of_kind(PolicyType::FairnessCheck) {
                    if let Some(f) = p.param_f64("max_load_fraction") {
                        if (f - a.max_load_fraction).abs() > 1e-12 {
                            return invalid(format!(
                                "policy `{}` max_load_fraction {f} disagrees with scenario {}",
                                p.id, a.max_load_fraction
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Output of the one-time Retrieval phase.
#[derive(Debug, Clone, PartialEq)]
pub struct InitResult {
    pub needs: Vec<String>,
    pub threshold_hot_f: Option<i64>,
    pub grounded_directives: String,
}

/// `"San Francisco"` → `"SF"`; single words are kept as they are.
pub fn short_name(name: &str) -> String {
    let words: Vec<&str> = name.split_whitespace().collect();
    if words.len() < 2 {
        return name.trim().to_owned();
    }
    words
        .iter()
        .filter_map(|w| w.chars().next())
        .flat_map(char::to_uppercase)
        .collect()
}
