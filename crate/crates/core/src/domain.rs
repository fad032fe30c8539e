//! Vocabulary shared by every phase of the loop: tool calls, final actions and
//! the two evidence identifiers (the canonical memory key and the citable ref).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Tool arguments. Keys are kept sorted so the canonical text form falls out of
/// ordinary serialization.
pub type Args = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("tool name must not be empty")]
    EmptyToolName,
    #[error("argument `{0}` must be a string, number or boolean")]
    NonScalarArg(String),
}

/// A request to run one tool with scalar arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawToolCall", into = "RawToolCall")]
pub struct ToolCall {
    tool: String,
    args: Args,
}

#[derive(Serialize, Deserialize)]
struct RawToolCall {
    tool: String,
    #[serde(default)]
    args: Args,
}

impl TryFrom<RawToolCall> for ToolCall {
    type Error = DomainError;

    fn try_from(raw: RawToolCall) -> Result<Self, Self::Error> {
        ToolCall::new(raw.tool, raw.args)
    }
}

impl From<ToolCall> for RawToolCall {
    fn from(call: ToolCall) -> Self {
        RawToolCall {
            tool: call.tool,
            args: call.args,
        }
    }
}

impl ToolCall {
    pub fn new(tool: impl Into<String>, args: Args) -> Result<Self, DomainError> {
        let tool = tool.into();
        if tool.trim().is_empty() {
            return Err(DomainError::EmptyToolName);
        }
        if let Some((name, _)) = args
            .iter()
            .find(|(_, v)| !matches!(v, Value::String(_) | Value::Number(_) | Value::Bool(_)))
        {
            return Err(DomainError::NonScalarArg(name.clone()));
        }
        Ok(Self { tool, args })
    }

    /// Builds a call from `(name, value)` pairs. Panics on invalid input, so it
    /// is meant for literals in planners and tests.
    pub fn with<I, K, V>(tool: &str, args: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<Value>,
    {
        let args = args.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        Self::new(tool, args).expect("literal tool call must be valid")
    }

    pub fn tool(&self) -> &str {
        &self.tool
    }

    pub fn args(&self) -> &Args {
        &self.args
    }

    pub fn arg(&self, name: &str) -> Option<&Value> {
        self.args.get(name)
    }

    pub fn arg_str(&self, name: &str) -> Option<&str> {
        self.args.get(name).and_then(Value::as_str)
    }

    /// The compact argument object with sorted keys, e.g. `{"city":"Miami"}`.
    pub fn canonical_args(&self) -> String {
        serde_json::to_string(&self.args).expect("scalar map always serializes")
    }
}

impl fmt::Display for ToolCall {
    /// `get_weather(city="San Francisco")`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.tool)?;
        for (i, (k, v)) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str(")")
    }
}

/// The single terminal action of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FinalAction {
    /// Executed through a registered tool. `subject` is the short label used in
    /// the audit summary (`generate_image(San Francisco)`).
    ToolBacked {
        call: ToolCall,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subject: Option<String>,
    },
    /// Concludes the run with an answer and no tool side effect.
    AnswerOnly { answer_text: String },
}

impl FinalAction {
    pub fn tool(call: ToolCall, subject: impl Into<String>) -> Self {
        FinalAction::ToolBacked {
            call,
            subject: Some(subject.into()),
        }
    }

    pub fn answer(text: impl Into<String>) -> Self {
        FinalAction::AnswerOnly {
            answer_text: text.into(),
        }
    }

    pub fn call(&self) -> Option<&ToolCall> {
        match self {
            FinalAction::ToolBacked { call, .. } => Some(call),
            FinalAction::AnswerOnly { .. } => None,
        }
    }

    /// `<tool>(<primary-arg>)` or `answer(<text>)`.
    pub fn summary_label(&self) -> String {
        match self {
            FinalAction::ToolBacked { call, subject } => {
                let primary = match subject {
                    Some(s) => s.clone(),
                    None if call.args().len() == 1 => {
                        let v = call.args().values().next().expect("len checked");
                        v.as_str().map(str::to_owned).unwrap_or_else(|| v.to_string())
                    }
                    None => String::new(),
                };
                format!("{}({primary})", call.tool())
            }
            FinalAction::AnswerOnly { answer_text } => format!("answer({answer_text})"),
        }
    }
}

/// Memory key of a tool result: `evidence_<tool>_<canonical-args>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvidenceKey(String);

impl EvidenceKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Wraps arbitrary text; lookups with a malformed key simply miss.
    pub fn from_raw(text: impl Into<String>) -> Self {
        Self(text.into())
    }
}

impl fmt::Display for EvidenceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn canonical_evidence_key(call: &ToolCall) -> EvidenceKey {
    EvidenceKey(format!("evidence_{}_{}", call.tool(), call.canonical_args()))
}

/// Citable id of stored evidence: `<category>-<slug>-<seq3>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvidenceRef(String);

impl EvidenceRef {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn from_raw(text: impl Into<String>) -> Self {
        Self(text.into())
    }

    /// True when the text matches `[a-z0-9]+-[a-z0-9]+-[0-9]{3}`.
    pub fn is_well_formed(&self) -> bool {
        let parts: Vec<&str> = self.0.split('-').collect();
        let alnum = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit());
        parts.len() == 3
            && alnum(parts[0])
            && alnum(parts[1])
            && parts[2].len() == 3
            && parts[2].bytes().all(|b| b.is_ascii_digit())
    }
}

impl fmt::Display for EvidenceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Lowercase ASCII alphanumerics of `text`; `"San Francisco"` becomes `"sanfrancisco"`.
pub fn slugify(text: &str) -> String {
    text.chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// `seq` must be in `1..=999` to stay within the three-digit grammar.
pub fn make_evidence_ref(category: &str, slug_source: &str, seq: u32) -> EvidenceRef {
    debug_assert!((1..=999).contains(&seq), "evidence ref sequence out of range: {seq}");
    let mut category = slugify(category);
    if category.is_empty() {
        category.push('x');
    }
    let mut slug = slugify(slug_source);
    if slug.is_empty() {
        slug.push_str("anon");
    }
    EvidenceRef(format!("{category}-{slug}-{seq:03}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weather_key_matches_memory_trace() {
        let call = ToolCall::with("get_weather", [("city", "San Francisco")]);
        assert_eq!(
            canonical_evidence_key(&call).as_str(),
            r#"evidence_get_weather_{"city":"San Francisco"}"#
        );
    }

    #[test]
    fn empty_args_key() {
        let call = ToolCall::new("get_weather", Args::new()).unwrap();
        assert_eq!(canonical_evidence_key(&call).as_str(), "evidence_get_weather_{}");
    }

    #[test]
    fn key_ignores_argument_insertion_order() {
        let a = ToolCall::with("send_email", [("to", "a@b"), ("subject", "x")]);
        let b = ToolCall::with("send_email", [("subject", "x"), ("to", "a@b")]);
        assert_eq!(canonical_evidence_key(&a), canonical_evidence_key(&b));
    }

    #[test]
    fn refs_follow_grammar() {
        assert_eq!(
            make_evidence_ref("wx", "San Francisco", 1).as_str(),
            "wx-sanfrancisco-001"
        );
        assert_eq!(make_evidence_ref("wx", "Miami", 1).as_str(), "wx-miami-001");
        assert_eq!(make_evidence_ref("emp", "Dana", 4).as_str(), "emp-dana-004");
    }

    #[test]
    fn invalid_calls_rejected() {
        assert_eq!(ToolCall::new("  ", Args::new()), Err(DomainError::EmptyToolName));
        let mut args = Args::new();
        args.insert("xs".into(), serde_json::json!([1, 2]));
        assert_eq!(ToolCall::new("t", args), Err(DomainError::NonScalarArg("xs".into())));
    }

    #[test]
    fn display_and_summary_labels() {
        let call = ToolCall::with("get_weather", [("city", "Atlanta")]);
        assert_eq!(call.to_string(), r#"get_weather(city="Atlanta")"#);
        let fa = FinalAction::tool(
            ToolCall::with("generate_image", [("description", "x")]),
            "San Francisco",
        );
        assert_eq!(fa.summary_label(), "generate_image(San Francisco)");
        let bare = FinalAction::ToolBacked { call, subject: None };
        assert_eq!(bare.summary_label(), "get_weather(Atlanta)");
        assert_eq!(FinalAction::answer("Atlanta").summary_label(), "answer(Atlanta)");
    }

    #[test]
    fn tool_call_serde_validates() {
        let ok: ToolCall = serde_json::from_str(r#"{"tool":"cancel_trip"}"#).unwrap();
        assert!(ok.args().is_empty());
        assert!(serde_json::from_str::<ToolCall>(r#"{"tool":""}"#).is_err());
    }

    proptest! {
        #[test]
        fn key_is_permutation_invariant(pairs in proptest::collection::btree_map("[a-z]{1,6}", "[ -~]{0,8}", 0..6)) {
            let forward: Vec<(String, Value)> = pairs.iter().map(|(k, v)| (k.clone(), Value::from(v.clone()))).collect();
            let a = ToolCall::new("tool", forward.iter().cloned().collect()).unwrap();
            let b = ToolCall::new("tool", forward.into_iter().rev().collect()).unwrap();
            prop_assert_eq!(canonical_evidence_key(&a), canonical_evidence_key(&b));
            prop_assert_eq!(canonical_evidence_key(&a), canonical_evidence_key(&a.clone()));
        }

        #[test]
        fn refs_always_well_formed(cat in "[A-Za-z]{1,4}", src in "\\PC{0,12}", seq in 1u32..=999) {
            prop_assert!(make_evidence_ref(&cat, &src, seq).is_well_formed());
        }
    }
}
