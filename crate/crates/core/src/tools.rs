//! Tool registry and the bundled deterministic mock tools.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::domain::{slugify, ToolCall};
use crate::memory::MemoryStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgType {
    Text,
    Number,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    #[serde(rename = "type")]
    pub ty: ArgType,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub arg_schema: BTreeMap<String, ArgSpec>,
    /// Short tag used as the first segment of evidence refs.
    pub category: String,
    /// Argument whose value becomes the ref slug; the tool name is used otherwise.
    pub ref_arg: Option<String>,
}

impl ToolSpec {
    pub fn new(name: &str, category: &str) -> Self {
        Self {
            name: name.to_owned(),
            arg_schema: BTreeMap::new(),
            category: category.to_owned(),
            ref_arg: None,
        }
    }

    pub fn arg(mut self, name: &str, ty: ArgType, required: bool) -> Self {
        self.arg_schema.insert(name.to_owned(), ArgSpec { ty, required });
        self
    }

    pub fn ref_arg(mut self, name: &str) -> Self {
        self.ref_arg = Some(name.to_owned());
        self
    }

    fn check(&self, call: &ToolCall) -> Result<(), ToolError> {
        let violation = |message: String| ToolError::ArgSchemaViolation {
            tool: self.name.clone(),
            message,
        };
        for (name, spec) in &self.arg_schema {
            match call.arg(name) {
                None if spec.required => return Err(violation(format!("missing required argument `{name}`"))),
                None => {}
                Some(Value::String(_)) if spec.ty == ArgType::Text => {}
                Some(Value::Number(_)) if spec.ty == ArgType::Number => {}
                Some(other) => {
                    return Err(violation(format!("argument `{name}` has the wrong type: {other}")));
                }
            }
        }
        if let Some(extra) = call.args().keys().find(|k| !self.arg_schema.contains_key(*k)) {
            return Err(violation(format!("unexpected argument `{extra}`")));
        }
        Ok(())
    }
}

/// What an executed tool hands to the Memory phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub payload: Value,
    pub category: String,
    pub slug_source: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("tool `{0}` is already registered")]
    DuplicateTool(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("{tool}: {message}")]
    ArgSchemaViolation { tool: String, message: String },
    #[error("{tool} failed: {message}")]
    Execution { tool: String, message: String },
}

/// Executors get read access to memory (the umbrella check reuses stored
/// weather) but can never write to it.
pub trait ToolExecutor: Send + Sync {
    fn execute(&self, call: &ToolCall, memory: &MemoryStore) -> Result<Value, ToolError>;
}

impl<F> ToolExecutor for F
where
    F: Fn(&ToolCall, &MemoryStore) -> Result<Value, ToolError> + Send + Sync,
{
    fn execute(&self, call: &ToolCall, memory: &MemoryStore) -> Result<Value, ToolError> {
        self(call, memory)
    }
}

#[derive(Default)]
pub struct ToolRegistry {
    tools: Vec<(ToolSpec, Box<dyn ToolExecutor>)>,
    index: HashMap<String, usize>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry").field("tools", &self.names()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_tool(&mut self, spec: ToolSpec, executor: impl ToolExecutor + 'static) -> Result<(), ToolError> {
        if self.index.contains_key(&spec.name) {
            return Err(ToolError::DuplicateTool(spec.name));
        }
        self.index.insert(spec.name.clone(), self.tools.len());
        self.tools.push((spec, Box::new(executor)));
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|(s, _)| s.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn spec(&self, name: &str) -> Option<&ToolSpec> {
        self.index.get(name).map(|&i| &self.tools[i].0)
    }

    pub fn execute_tool(&self, call: &ToolCall, memory: &MemoryStore) -> Result<ToolResult, ToolError> {
        let &i = self
            .index
            .get(call.tool())
            .ok_or_else(|| ToolError::UnknownTool(call.tool().to_owned()))?;
        let (spec, exec) = &self.tools[i];
        spec.check(call)?;
        let payload = exec.execute(call, memory)?;
        let slug_source = spec
            .ref_arg
            .as_deref()
            .and_then(|a| call.arg_str(a))
            .unwrap_or(&spec.name)
            .to_owned();
        Ok(ToolResult {
            payload,
            category: spec.category.clone(),
            slug_source,
        })
    }

    /// The seven bundled mock tools, in registration order.
    pub fn mock(fixtures: &Fixtures) -> Self {
        let mut reg = Self::new();
        for (spec, exec) in mock_tools(fixtures) {
            reg.register_tool(spec, exec).expect("bundled tool names are unique");
        }
        reg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub temperature_f: i64,
    pub condition: String,
    pub precipitation_chance: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmployeeProfile {
    pub skills: Vec<String>,
    pub capacity: u32,
}

/// Data behind the mock tools. Values loaded from a file are merged over the
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Fixtures {
    pub weather: BTreeMap<String, WeatherRecord>,
    pub employees: BTreeMap<String, EmployeeProfile>,
    pub snacks: Vec<String>,
    /// `check_umbrella_needed` answers yes when precipitation exceeds this.
    pub umbrella_threshold: i64,
}

impl Default for Fixtures {
    fn default() -> Self {
        let wx = |t, c: &str, p| WeatherRecord {
            temperature_f: t,
            condition: c.to_owned(),
            precipitation_chance: p,
        };
        let emp = |skills: [&str; 2]| EmployeeProfile {
            skills: skills.iter().map(|s| s.to_string()).collect(),
            capacity: 2,
        };
        Self {
            weather: BTreeMap::from([
                ("San Francisco".to_owned(), wx(64, "Partly Cloudy", 11)),
                ("Miami".to_owned(), wx(90, "Sunny", 49)),
                ("Atlanta".to_owned(), wx(73, "Clear", 46)),
            ]),
            employees: BTreeMap::from([
                ("Alice".to_owned(), emp(["data analysis", "statistics"])),
                ("Bob".to_owned(), emp(["UX design", "prototyping"])),
                ("Charlie".to_owned(), emp(["backend", "APIs"])),
                ("Dana".to_owned(), emp(["frontend", "React"])),
            ]),
            snacks: ["Potato chips", "Onigiri", "Chocolate bar", "Instant ramen", "Ice cream"]
                .map(String::from)
                .to_vec(),
            umbrella_threshold: 30,
        }
    }
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("reading fixtures: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing fixtures: {0}")]
    Parse(#[from] toml::de::Error),
}

impl Fixtures {
    /// Parses a TOML overlay and merges it over the defaults.
    pub fn from_toml(text: &str) -> Result<Self, FixtureError> {
        #[derive(Deserialize, Default)]
        #[serde(default, deny_unknown_fields)]
        struct Overlay {
            weather: BTreeMap<String, WeatherRecord>,
            employees: BTreeMap<String, EmployeeProfile>,
            snacks: Option<Vec<String>>,
            umbrella_threshold: Option<i64>,
        }
        let overlay: Overlay = toml::from_str(text)?;
        let mut f = Fixtures::default();
        f.weather.extend(overlay.weather);
        f.employees.extend(overlay.employees);
        if let Some(s) = overlay.snacks {
            f.snacks = s;
        }
        if let Some(t) = overlay.umbrella_threshold {
            f.umbrella_threshold = t;
        }
        Ok(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Fixture record when present (matched on the slugified name), otherwise
    /// a synthetic one derived from a stable hash of the lowercased city.
    pub fn weather_for(&self, city: &str) -> WeatherRecord {
        let wanted = slugify(city);
        if let Some(rec) = self.weather.iter().find(|(k, _)| slugify(k) == wanted).map(|(_, v)| v) {
            return rec.clone();
        }
        const CONDITIONS: [&str; 4] = ["Sunny", "Partly Cloudy", "Cloudy", "Rain"];
        let h = fnv1a(city.to_lowercase().as_bytes());
        WeatherRecord {
            temperature_f: 40 + (h % 61) as i64,
            condition: CONDITIONS[(h % 4) as usize].to_owned(),
            precipitation_chance: (h % 100) as i64,
        }
    }
}

/// 64-bit FNV-1a; stable across processes and toolchains, unlike `DefaultHasher`.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

type BoxedExecutor = Box<dyn Fn(&ToolCall, &MemoryStore) -> Result<Value, ToolError> + Send + Sync>;

fn text_arg<'a>(call: &'a ToolCall, name: &str) -> &'a str {
    // presence and type were checked against the schema
    call.arg_str(name).unwrap_or_default()
}

fn mock_tools(fixtures: &Fixtures) -> Vec<(ToolSpec, BoxedExecutor)> {
    use ArgType::Text;
    let mut out: Vec<(ToolSpec, BoxedExecutor)> = Vec::new();

    let fx = fixtures.clone();
    out.push((
        ToolSpec::new("get_weather", "wx")
            .arg("city", Text, true)
            .ref_arg("city"),
        Box::new(move |call, _| {
            let city = text_arg(call, "city");
            let rec = fx.weather_for(city);
            Ok(json!({
                "city": city,
                "temperature_f": rec.temperature_f,
                "condition": rec.condition,
                "precipitation_chance": rec.precipitation_chance,
            }))
        }),
    ));

    out.push((
        ToolSpec::new("send_email", "mail")
            .arg("to", Text, true)
            .arg("subject", Text, false)
            .arg("body", Text, false)
            .ref_arg("to"),
        Box::new(|call, _| Ok(json!({"status": "queued", "to": text_arg(call, "to")}))),
    ));

    out.push((
        ToolSpec::new("generate_image", "img").arg("description", Text, true),
        Box::new(|call, _| Ok(json!({"status": "rendered", "description": text_arg(call, "description")}))),
    ));

    out.push((
        ToolSpec::new("cancel_trip", "trip"),
        Box::new(|_, _| Ok(json!({"status": "cancelled"}))),
    ));

    let snacks = fixtures.snacks.clone();
    out.push((
        ToolSpec::new("recommend_snacks", "snk"),
        Box::new(move |_, _| Ok(json!({"snacks": snacks}))),
    ));

    let fx = fixtures.clone();
    out.push((
        ToolSpec::new("check_umbrella_needed", "umb")
            .arg("city", Text, true)
            .ref_arg("city"),
        Box::new(move |call, memory: &MemoryStore| {
            let city = text_arg(call, "city");
            let stored = memory
                .lookup_call(&ToolCall::with("get_weather", [("city", city)]))
                .and_then(|ev| ev.payload["precipitation_chance"].as_i64());
            let precip = stored.unwrap_or_else(|| fx.weather_for(city).precipitation_chance);
            Ok(json!({
                "city": city,
                "precipitation_chance": precip,
                "needed": precip > fx.umbrella_threshold,
            }))
        }),
    ));

    let employees = fixtures.employees.clone();
    out.push((
        ToolSpec::new("get_employee_profile", "emp")
            .arg("name", Text, true)
            .ref_arg("name"),
        Box::new(move |call, _| {
            let name = text_arg(call, "name");
            let profile = employees.get(name).ok_or_else(|| ToolError::Execution {
                tool: "get_employee_profile".into(),
                message: format!("no profile for `{name}`"),
            })?;
            Ok(json!({"skills": profile.skills, "capacity": profile.capacity}))
        }),
    ));

    out
}
