//! The remote engine against a local stand-in for a chat-completion API.
//! Point SCL_REMOTE_BASE_URL and friends at a real endpoint and use
//! `scl run --engine remote` for live runs.

use scl::cognition::{RemoteConfig, RemoteEngine, StubChatServer};
use scl::memory::MemoryStore;
use scl::orchestrator::{run, RunError, RunOptions, TaskSpec};
use scl::tools::{Fixtures, ToolRegistry};

const REPLIES: [&str; 4] = [
    r#"{"reasoning": "Need Miami.", "action": {"type": "tool_call", "tool": "get_weather", "args": {"city": "Miami"}}}"#,
    "Let me think about this in prose first...",
    r#"Here you go: {"reasoning": "Miami is warm.", "evidence_refs": ["wx-miami-001"], "action": {"type": "answer", "text": "Miami"}}"#,
    "unused",
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stub = StubChatServer::start(REPLIES.iter().map(|s| s.to_string()).collect())?;
    let registry = ToolRegistry::mock(&Fixtures::default());
    let specs: Vec<_> = registry
        .names()
        .iter()
        .filter_map(|n| registry.spec(n))
        .cloned()
        .collect();
    let mut engine = RemoteEngine::new(RemoteConfig::new(&stub.base_url(), "demo-key", "demo-model")).with_tools(specs);

    let options = RunOptions {
        max_loops: Some(4),
        ..RunOptions::default()
    };
    let log = match run(
        &TaskSpec::weather(),
        &mut engine,
        &registry,
        &mut MemoryStore::in_memory(),
        &options,
    ) {
        Ok(log) => log,
        Err(RunError::EngineFailure { error, log }) => {
            println!("engine failed: {error}");
            *log
        }
        Err(e) => return Err(e.into()),
    };
    for (i, e) in log.loops() {
        println!(
            "loop {i}: {}",
            e.control.as_ref().map(|c| c["reason"].to_string()).unwrap_or_default()
        );
    }
    println!(
        "final_action={} after {} HTTP requests",
        log.summary.final_action,
        stub.requests().len()
    );
    Ok(())
}
