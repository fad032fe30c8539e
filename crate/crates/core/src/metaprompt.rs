//! Governance policies and the line-oriented policy language.
//!
//! A policy file is a sequence of blocks:
//!
//! ```text
//! - type: evidence_citation
//!   scope: all_final_actions
//!   enforcement: reject
//! - type: redundancy_check
//!   scope: tool_calls
//!   enforcement: warn_then_reject
//! ```
//!
//! Each block may also carry `id: <name>` and any number of
//! `params.<name>: <value>` lines. Indentation is ignored and `#` starts a
//! comment when it begins a line or follows whitespace.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl FromStr for $name {
            type Err = ();

            fn from_str(s: &str) -> Result<Self, ()> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(()),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

keyword_enum!(PolicyType {
    EvidenceCitation => "evidence_citation",
    RedundancyCheck => "redundancy_check",
    SingleFinalAction => "single_final_action",
    ControlPassGate => "control_pass_gate",
    FairnessCheck => "fairness_check",
    RequiredContent => "required_content",
});

keyword_enum!(
    /// Which proposals a policy looks at.
    Scope {
        AllFinalActions => "all_final_actions",
        ToolCalls => "tool_calls",
        Allocations => "allocations",
        Communications => "communications",
    }
);

keyword_enum!(Enforcement {
    Reject => "reject",
    WarnThenReject => "warn_then_reject",
});

/// One symbolic constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: PolicyType,
    pub scope: Scope,
    pub enforcement: Enforcement,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

impl Policy {
    pub fn new(id: &str, kind: PolicyType, scope: Scope, enforcement: Enforcement) -> Self {
        Self {
            id: id.to_owned(),
            kind,
            scope,
            enforcement,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, name: &str, value: impl ToString) -> Self {
        self.params.insert(name.to_owned(), value.to_string());
        self
    }

    pub fn param(&self, name: &str) -> Option<&str> {
        self.params.get(name).map(String::as_str)
    }

    pub fn param_f64(&self, name: &str) -> Option<f64> {
        self.param(name).and_then(|v| v.parse().ok())
    }

    fn check_params(&self) -> Result<(), String> {
        if self.kind == PolicyType::FairnessCheck {
            match self.param_f64("max_load_fraction") {
                Some(f) if f > 0.0 && f <= 1.0 => {}
                Some(f) => return Err(format!("max_load_fraction must be in (0, 1], got {f}")),
                None => return Err("fairness_check requires params.max_load_fraction".into()),
            }
        }
        Ok(())
    }
}

/// The persistent policy set. Order defines check order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetaPrompt {
    pub policies: Vec<Policy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directive_text: Option<String>,
}

impl MetaPrompt {
    pub fn new(policies: Vec<Policy>) -> Self {
        Self {
            policies,
            directive_text: None,
        }
    }

    pub fn ids(&self) -> Vec<String> {
        self.policies.iter().map(|p| p.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Policy> {
        self.policies.iter().find(|p| p.id == id)
    }

    pub fn of_kind(&self, kind: PolicyType) -> impl Iterator<Item = &Policy> {
        self.policies.iter().filter(move |p| p.kind == kind)
    }

    /// Appends policies whose id is not already present, keeping order.
    pub fn union(mut self, extra: impl IntoIterator<Item = Policy>) -> Self {
        for p in extra {
            if self.get(&p.id).is_none() {
                self.policies.push(p);
            }
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }
}

/// The three policies every governed run starts from.
pub fn builtin_policies() -> MetaPrompt {
    use Enforcement::Reject;
    MetaPrompt::new(vec![
        Policy::new(
            "must_cite_stored_evidence",
            PolicyType::EvidenceCitation,
            Scope::AllFinalActions,
            Reject,
        ),
        Policy::new(
            "no_final_answer_without_control_pass",
            PolicyType::ControlPassGate,
            Scope::AllFinalActions,
            Reject,
        ),
        Policy::new(
            "single_final_action",
            PolicyType::SingleFinalAction,
            Scope::AllFinalActions,
            Reject,
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyParseError {
    #[error("line {line}: unknown policy type `{value}`")]
    UnknownType { line: usize, value: String },
    #[error("line {line}: unknown scope `{value}`")]
    UnknownScope { line: usize, value: String },
    #[error("line {line}: unknown enforcement `{value}`")]
    UnknownEnforcement { line: usize, value: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: policy block is missing `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: duplicate policy id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: `{key}` given twice in one block")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid parameter: {message}")]
    InvalidParam { line: usize, message: String },
    #[error("line {line}: expected `key: value`{hint}")]
    Syntax { line: usize, hint: &'static str },
}

impl PolicyParseError {
    pub fn line(&self) -> usize {
        match self {
            Self::UnknownType { line, .. }
            | Self::UnknownScope { line, .. }
            | Self::UnknownEnforcement { line, .. }
            | Self::UnknownKey { line, .. }
            | Self::MissingField { line, .. }
            | Self::DuplicateId { line, .. }
            | Self::DuplicateKey { line, .. }
            | Self::InvalidParam { line, .. }
            | Self::Syntax { line, .. } => *line,
        }
    }
}

struct Block {
    start: usize,
    kind: PolicyType,
    id: Option<(usize, String)>,
    scope: Option<Scope>,
    enforcement: Option<Enforcement>,
    params: BTreeMap<String, String>,
}

fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

fn split_key_value(text: &str, line: usize) -> Result<(&str, &str), PolicyParseError> {
    let (k, v) = text
        .split_once(':')
        .ok_or(PolicyParseError::Syntax { line, hint: "" })?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() || v.is_empty() {
        return Err(PolicyParseError::Syntax {
            line,
            hint: " with a non-empty value",
        });
    }
    Ok((k, v))
}

pub fn parse_policy_file(text: &str) -> Result<Vec<Policy>, PolicyParseError> {
    let mut blocks: Vec<Block> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('-') {
            let (k, v) = split_key_value(rest, line)?;
            if k != "type" {
                return Err(PolicyParseError::Syntax {
                    line,
                    hint: ": a block must start with `- type:`",
                });
            }
            let kind = v
                .parse()
                .map_err(|_| PolicyParseError::UnknownType { line, value: v.into() })?;
            blocks.push(Block {
                start: line,
                kind,
                id: None,
                scope: None,
                enforcement: None,
                params: BTreeMap::new(),
            });
            continue;
        }

        let (k, v) = split_key_value(content, line)?;
        let block = blocks.last_mut().ok_or(PolicyParseError::Syntax {
            line,
            hint: ": found before any `- type:` line",
        })?;
        let dup = || PolicyParseError::DuplicateKey {
            line,
            key: k.to_owned(),
        };
        match k {
            "id" => {
                if block.id.is_some() {
                    return Err(dup());
                }
                block.id = Some((line, v.to_owned()));
            }
            "scope" => {
                if block.scope.is_some() {
                    return Err(dup());
                }
                block.scope = Some(
                    v.parse()
                        .map_err(|_| PolicyParseError::UnknownScope { line, value: v.into() })?,
                );
            }
            "enforcement" => {
                if block.enforcement.is_some() {
                    return Err(dup());
                }
                block.enforcement = Some(
                    v.parse()
                        .map_err(|_| PolicyParseError::UnknownEnforcement { line, value: v.into() })?,
                );
            }
            _ => match k.strip_prefix("params.") {
                Some(name) if !name.is_empty() => {
                    if block.params.insert(name.to_owned(), v.to_owned()).is_some() {
                        return Err(dup());
                    }
                }
                _ => {
                    return Err(PolicyParseError::UnknownKey {
                        line,
                        key: k.to_owned(),
                    })
                }
            },
        }
    }

    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(blocks.len());
    for (index, b) in blocks.into_iter().enumerate() {
        let scope = b.scope.ok_or(PolicyParseError::MissingField {
            line: b.start,
            field: "scope",
        })?;
        let enforcement = b.enforcement.ok_or(PolicyParseError::MissingField {
            line: b.start,
            field: "enforcement",
        })?;
        let (id_line, id) = b.id.unwrap_or_else(|| (b.start, format!("{}_{index}", b.kind)));
        if !seen.insert(id.clone()) {
            return Err(PolicyParseError::DuplicateId { line: id_line, id });
        }
        let policy = Policy {
            id,
            kind: b.kind,
            scope,
            enforcement,
            params: b.params,
        };
        policy
            .check_params()
            .map_err(|message| PolicyParseError::InvalidParam { line: b.start, message })?;
        out.push(policy);
    }
    Ok(out)
}

/// Renders policies in the block grammar; ids are always written out.
pub fn serialize_policies(policies: &[Policy]) -> String {
    let mut out = String::new();
    for p in policies {
        out.push_str(&format!("- type: {}\n", p.kind));
        out.push_str(&format!("  id: {}\n", p.id));
        out.push_str(&format!("  scope: {}\n", p.scope));
        out.push_str(&format!("  enforcement: {}\n", p.enforcement));
        for (k, v) in &p.params {
            out.push_str(&format!("  params.{k}: {v}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DSL_EXAMPLE: &str = "\
- type: evidence_citation
  scope: all_final_actions
  enforcement: reject
- type: redundancy_check
  scope: tool_calls
  enforcement: warn_then_reject
";

    #[test]
    fn builtin_policy_ids() {
        let mp = builtin_policies();
        assert_eq!(
            mp.ids(),
            [
                "must_cite_stored_evidence",
                "no_final_answer_without_control_pass",
                "single_final_action"
            ]
        );
        assert_eq!(mp.policies[0].kind, PolicyType::EvidenceCitation);
        assert_eq!(mp.policies[0].scope, Scope::AllFinalActions);
        assert_eq!(mp.policies[1].kind, PolicyType::ControlPassGate);
        assert_eq!(mp.policies[2].kind, PolicyType::SingleFinalAction);
        assert!(mp.policies.iter().all(|p| p.enforcement == Enforcement::Reject));
        assert_eq!(builtin_policies(), mp);
    }

    #[test]
    fn union_with_parsed_redundancy_policy() {
        let parsed = parse_policy_file(DSL_EXAMPLE).unwrap();
        let merged = builtin_policies().union(parsed.into_iter().skip(1));
        assert_eq!(merged.policies.len(), 4);
        assert_eq!(merged.policies[3].id, "redundancy_check_1");
        assert_eq!(&merged.ids()[..3], &builtin_policies().ids()[..]);
    }

    #[test]
    fn parses_two_block_example() {
        let ps = parse_policy_file(DSL_EXAMPLE).unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(
            (ps[0].kind, ps[0].scope, ps[0].enforcement),
            (
                PolicyType::EvidenceCitation,
                Scope::AllFinalActions,
                Enforcement::Reject
            )
        );
        assert_eq!(
            (ps[1].kind, ps[1].scope, ps[1].enforcement),
            (
                PolicyType::RedundancyCheck,
                Scope::ToolCalls,
                Enforcement::WarnThenReject
            )
        );
        assert_eq!(ps[0].id, "evidence_citation_0");
    }

    #[test]
    fn empty_and_comment_only_files() {
        assert!(parse_policy_file("").unwrap().is_empty());
        assert!(parse_policy_file("# nothing\n\n   # here\n").unwrap().is_empty());
    }

    #[test]
    fn unknown_enforcement_is_located() {
        let text = "- type: evidence_citation\n  scope: all_final_actions\n  enforcement: ignore\n";
        let err = parse_policy_file(text).unwrap_err();
        assert_eq!(
            err,
            PolicyParseError::UnknownEnforcement {
                line: 3,
                value: "ignore".into()
            }
        );
        assert_eq!(err.line(), 3);
    }

    #[test]
    fn located_errors() {
        let cases: &[(&str, usize)] = &[
            ("- type: teleport\n", 1),
            ("- type: evidence_citation\n  scope: everywhere\n", 2),
            ("- type: evidence_citation\n  enforcement: reject\n", 1),
            (
                "- type: evidence_citation\n  scope: tool_calls\n  enforcement: reject\n  colour: red\n",
                4,
            ),
            ("scope: tool_calls\n", 1),
            ("- type: evidence_citation\n  scope tool_calls\n", 2),
        ];
        for (text, line) in cases {
            assert_eq!(parse_policy_file(text).unwrap_err().line(), *line, "{text}");
        }
    }

    #[test]
    fn duplicate_ids_and_keys() {
        let text = "- type: evidence_citation\n id: a\n scope: tool_calls\n enforcement: reject\n\
                    - type: redundancy_check\n id: a\n scope: tool_calls\n enforcement: reject\n";
        assert_eq!(
            parse_policy_file(text).unwrap_err(),
            PolicyParseError::DuplicateId {
                line: 6,
                id: "a".into()
            }
        );
        let text = "- type: evidence_citation\n scope: tool_calls\n scope: tool_calls\n";
        assert!(matches!(
            parse_policy_file(text),
            Err(PolicyParseError::DuplicateKey { line: 3, .. })
        ));
    }

    #[test]
    fn fairness_requires_fraction_in_range() {
        let base = "- type: fairness_check\n scope: allocations\n enforcement: reject\n";
        assert!(matches!(
            parse_policy_file(base),
            Err(PolicyParseError::InvalidParam { line: 1, .. })
        ));
        let bad = format!("{base} params.max_load_fraction: 1.5\n");
        assert!(parse_policy_file(&bad).is_err());
        let ok = format!("{base} params.max_load_fraction: 0.4  # strict\n");
        let ps = parse_policy_file(&ok).unwrap();
        assert_eq!(ps[0].param_f64("max_load_fraction"), Some(0.4));
    }

    #[test]
    fn hash_inside_value_is_kept() {
        let text =
            "- type: required_content\n scope: communications\n enforcement: reject\n params.required_marker: #table\n";
        // `#` after whitespace starts a comment, which leaves the value empty
        assert!(parse_policy_file(text).is_err());
        let text = text.replace(": #table", ": tbl#1");
        assert_eq!(
            parse_policy_file(&text).unwrap()[0].param("required_marker"),
            Some("tbl#1")
        );
    }

    fn arb_policy() -> impl Strategy<Value = Policy> {
        (
            prop::sample::select(PolicyType::ALL),
            prop::sample::select(Scope::ALL),
            prop::sample::select(Enforcement::ALL),
            prop::collection::btree_map("[a-z_]{1,8}", "[a-zA-Z0-9_.]{1,8}", 0..3),
            0.01f64..=1.0,
        )
            .prop_map(|(kind, scope, enforcement, params, frac)| {
                let mut p = Policy {
                    id: String::new(),
                    kind,
                    scope,
                    enforcement,
                    params,
                };
                if kind == PolicyType::FairnessCheck {
                    p.params.insert("max_load_fraction".into(), format!("{frac:.3}"));
                }
                p
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(mut ps in prop::collection::vec(arb_policy(), 0..6)) {
            for (i, p) in ps.iter_mut().enumerate() {
                p.id = format!("p{i}");
            }
            let text = serialize_policies(&ps);
            let parsed = parse_policy_file(&text).unwrap();
            prop_assert_eq!(&parsed, &ps);
            prop_assert_eq!(serialize_policies(&parsed), text);
        }

        #[test]
        fn parse_is_total(text in "[-a-z_:. #\n]{0,80}") {
            // either policies or one located error, never a panic
            if let Err(e) = parse_policy_file(&text) {
                prop_assert!(e.line() >= 1);
            }
        }
    }
}
