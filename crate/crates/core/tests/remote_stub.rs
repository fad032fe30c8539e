mod common;

use std::process::Command;
use std::time::Duration;

use common::*;
use scl::audit::{STATUS_COMPLETED, STATUS_ENGINE_FAILURE};
use scl::cognition::{EngineError, RemoteConfig, RemoteEngine, StubChatServer, StubReply};
use scl::memory::MemoryStore;
use scl::orchestrator::{run, RunError, TaskSpec};
use scl::tools::{Fixtures, ToolRegistry};

const QUERY_SF: &str = r#"{"reasoning": "Need SF first.", "action": {"type": "tool_call", "tool": "get_weather", "args": {"city": "San Francisco"}}}"#;
const IMAGE_SF: &str = r#"Sure! {"reasoning": "Only SF is known.", "evidence_refs": ["wx-sanfrancisco-001"], "action": {"type": "final", "subject": "San Francisco", "tool": "generate_image", "args": {"description": "San Francisco weather: Partly Cloudy, 64°F"}}}"#;

fn engine_for(stub: &StubChatServer) -> RemoteEngine {
    let mut config = RemoteConfig::new(&stub.base_url(), "test-key", "stub-model");
    config.backoff = Duration::from_millis(5);
    config.timeout = Duration::from_secs(5);
    let registry = ToolRegistry::mock(&Fixtures::default());
    RemoteEngine::new(config).with_tools(registry.names().iter().filter_map(|n| registry.spec(n)).cloned())
}

fn run_remote(stub: &StubChatServer, max_loops: u32) -> Result<scl::audit::AuditLog, RunError> {
    let mut engine = engine_for(stub);
    run(
        &TaskSpec::weather(),
        &mut engine,
        &ToolRegistry::mock(&Fixtures::default()),
        &mut MemoryStore::in_memory(),
        &bounded(max_loops),
    )
}

#[test]
fn conformant_replies_drive_the_loop() {
    let stub = StubChatServer::start(vec![QUERY_SF.into(), IMAGE_SF.into()]).unwrap();
    let log = run_remote(&stub, 4).unwrap();
    assert_eq!(log.summary.status, STATUS_COMPLETED);
    assert_eq!(log.summary.loops, 2);
    assert_eq!(log.log[1].res.as_ref().unwrap()["ref"], "wx-sanfrancisco-001");
    assert_eq!(log.summary.final_action, "generate_image(San Francisco)");

    let requests = stub.requests();
    assert_eq!(requests.len(), 2);
    assert_eq!(requests[0]["model"], "stub-model");
    // The second prompt carries the stored evidence.
    let second = requests[1]["messages"].to_string();
    assert!(second.contains("wx-sanfrancisco-001"));
}

#[test]
fn prose_twice_is_an_engine_failure() {
    let stub = StubChatServer::start(vec!["I think Miami is nice.".into()]).unwrap();
    let Err(RunError::EngineFailure { error, log }) = run_remote(&stub, 3) else {
        panic!("expected engine failure")
    };
    assert!(matches!(error, EngineError::Failure { attempts: 2, .. }));
    assert_eq!(log.summary.status, STATUS_ENGINE_FAILURE);
    assert_eq!(stub.requests().len(), 2);
}

#[test]
fn one_bad_reply_is_corrected() {
    let stub = StubChatServer::start(vec!["no json here".into(), QUERY_SF.into(), IMAGE_SF.into()]).unwrap();
    let log = run_remote(&stub, 4).unwrap();
    assert_eq!(log.summary.status, STATUS_COMPLETED);
    let requests = stub.requests();
    assert_eq!(requests.len(), 3);
    assert!(requests[1]["messages"].to_string().contains("Your reply was rejected"));
}

#[test]
fn transport_errors_are_retried() {
    let stub = StubChatServer::start_with(vec![
        StubReply::Status(500),
        StubReply::Content(QUERY_SF.into()),
        StubReply::Content(IMAGE_SF.into()),
    ])
    .unwrap();
    let log = run_remote(&stub, 4).unwrap();
    assert_eq!(log.summary.final_action, "generate_image(San Francisco)");
    assert_eq!(stub.requests().len(), 3);
}

#[test]
fn remote_control_still_gates_uncited_finals() {
    let uncited = r#"{"reasoning": "Guess.", "action": {"type": "final", "subject": "Miami", "tool": "generate_image", "args": {"description": "Miami"}}}"#;
    let stub = StubChatServer::start(vec![uncited.into()]).unwrap();
    let log = run_remote(&stub, 2).unwrap();
    assert!(log.loops().all(|(_, e)| e.action.is_none()));
    assert_eq!(control_reason(&log.log[1]), "REJECTED: Missing evidence citations");
}

#[test]
fn cli_reports_engine_failure_with_exit_2() {
    let stub = StubChatServer::start(vec!["prose only".into()]).unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_scl"))
        .args(["run", "--engine", "remote", "--task"])
        .arg(repo_path("experiments/weather.task"))
        .env("SCL_REMOTE_BASE_URL", stub.base_url())
        .env("SCL_REMOTE_API_KEY", "k")
        .env("SCL_REMOTE_MODEL", "m")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("status=aborted: engine failure"), "{stdout}");
    assert!(String::from_utf8_lossy(&output.stderr).contains("schema violation"));
}

#[test]
fn cli_remote_run_completes_against_stub() {
    let stub = StubChatServer::start(vec![QUERY_SF.into(), IMAGE_SF.into()]).unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_scl"))
        .args(["run", "--engine", "remote", "--task"])
        .arg(repo_path("experiments/weather.task"))
        .env("SCL_REMOTE_BASE_URL", stub.base_url())
        .env("SCL_REMOTE_API_KEY", "k")
        .env("SCL_REMOTE_MODEL", "m")
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
}
