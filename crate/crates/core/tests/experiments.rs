mod common;

use common::*;
use scl::audit::{compute_metrics, serialize_audit, STATUS_COMPLETED};
use scl::cognition::{MockEngine, Proposal};
use scl::domain::ToolCall;
use scl::memory::MemoryStore;
use scl::orchestrator::{run, RunOptions, TaskSpec};
use scl::tools::{Fixtures, ToolRegistry};
use serde_json::json;

#[test]
fn weather_matches_reference_layout() {
    let (log, memory) = run_mock(&TaskSpec::weather());
    let view = log.compact_view();
    assert_eq!(
        view["task"],
        "Check San Francisco, Miami, and Atlanta weather; apply branching rule"
    );
    assert_eq!(
        view["policies"],
        json!([
            "must_cite_stored_evidence",
            "no_final_answer_without_control_pass",
            "single_final_action"
        ])
    );
    assert_eq!(
        view["log"][0],
        json!({"loop": "init", "module": "Retrieval", "res": {"need": ["SF weather", "Miami weather", "Atlanta weather"], "threshold_hot_F": 55}})
    );
    let expected = [
        ("San Francisco", 64, "wx-sanfrancisco-001"),
        ("Miami", 90, "wx-miami-001"),
        ("Atlanta", 73, "wx-atlanta-001"),
    ];
    for (i, (city, t, r)) in expected.iter().enumerate() {
        assert_eq!(
            view["log"][i + 1],
            json!({"loop": city, "phases": ["Cognition", "Control", "Action", "Memory"], "res": {"city": city, "temp_F": t, "ref": r}})
        );
    }
    assert_eq!(
        view["log"][4],
        json!({
            "loop": "integrate",
            "phases": ["Cognition", "Control", "Action", "Memory"],
            "decision": "generate_image(San Francisco)",
            "evidence": ["wx-sanfrancisco-001", "wx-miami-001", "wx-atlanta-001"],
            "explanation": "All 3 cities above 55°F; chose coolest (SF: 64°F)"
        })
    );
    assert_eq!(
        view["summary"],
        json!({"final_action": "generate_image(San Francisco)", "policy_violations": 0})
    );
    assert_eq!(log.summary.status, STATUS_COMPLETED);
    assert!(memory.rejections().is_empty());
}

#[test]
fn weather_image_description() {
    let (log, _) = run_mock(&TaskSpec::weather());
    let action = log.log[4].action.as_ref().unwrap();
    assert_eq!(
        action["call"]["args"]["description"],
        "San Francisco weather: Partly Cloudy, 64°F"
    );
}

#[test]
fn runs_are_byte_identical_and_match_golden() {
    for (spec, id) in [(TaskSpec::weather(), "weather"), (TaskSpec::allocation(), "allocation")] {
        let a = serialize_audit(&run_mock(&spec).0);
        let b = serialize_audit(&run_mock(&spec).0);
        assert_eq!(a, b);
        assert_eq!(a, golden_text(id), "golden drift for {id}");
    }
}

#[test]
fn allocation_rejects_plan_a_and_keeps_it() {
    let (log, memory) = run_mock(&TaskSpec::allocation());
    assert_eq!(log.summary.loops, 7);
    assert_eq!(log.summary.policy_violations, 0);
    assert_eq!(log.summary.preventions, 1);
    let loop5 = &log.log[5];
    assert_eq!(loop5.control_status(), Some("FAIL"));
    assert!(control_reason(loop5).starts_with("Detected overload on Bob"));
    assert!(loop5.action.is_none());

    let rejected = &memory.rejections()[0];
    assert_eq!(rejected.plan_label, "A");
    let Ok(Proposal::Allocation { allocation }) = serde_json::from_value::<Proposal>(rejected.payload.clone()) else {
        panic!("rejected payload is the plan")
    };
    assert_eq!(allocation.employee_of("UI Mockups"), Some("Bob"));
    assert_eq!(allocation.employee_of("Dashboard"), Some("Bob"));

    let loop6 = &log.log[6];
    assert_eq!(loop6.control_status(), Some("PASS"));
    assert_eq!(loop6.decision.as_deref(), Some("approve_plan(B)"));
    let Proposal::Allocation { allocation: plan_b } =
        serde_json::from_value(loop6.cognition.as_ref().unwrap()["proposal"].clone()).unwrap()
    else {
        panic!()
    };
    for (task, who) in [
        ("Financial Report", "Alice"),
        ("Dashboard", "Bob"),
        ("UI Mockups", "Dana"),
        ("Backend APIs", "Charlie"),
        ("Frontend Integration", "Dana"),
    ] {
        assert_eq!(plan_b.employee_of(task), Some(who));
    }

    let body = log.log[7].action.as_ref().unwrap()["call"]["args"]["body"]
        .as_str()
        .unwrap()
        .to_owned();
    let rows = scl::control::table_rows(&body);
    assert_eq!(rows.len(), 5);
    assert_eq!(log.summary.final_action, "send_email(manager@example.com)");
}

#[test]
fn profile_refs_follow_grammar() {
    let (_, memory) = run_mock(&TaskSpec::allocation());
    let refs: Vec<&str> = memory.evidence().map(|e| e.reference.as_str()).collect();
    assert_eq!(
        &refs[..4],
        ["emp-alice-001", "emp-bob-001", "emp-charlie-001", "emp-dana-001"]
    );
}

#[test]
fn table_one_column_from_both_runs() {
    for spec in [TaskSpec::weather(), TaskSpec::allocation()] {
        let m = compute_metrics(&run_mock(&spec).0).unwrap();
        assert_eq!(m.policy_violations, 0);
        assert_eq!(m.redundant_tool_calls, 0);
        assert_eq!(m.audit_trail_completeness, 1.0);
        assert_eq!(m.evidence_citation_rate, 1.0);
        assert_eq!(m.conditional_logic_errors, 0.0);
        assert_eq!(m.memory_drift_events, 0);
    }
}

#[test]
fn preseeded_memory_skips_satisfied_need() {
    let spec = TaskSpec::weather();
    let registry = ToolRegistry::mock(&Fixtures::default());
    let mut memory = MemoryStore::in_memory();
    let sf = ToolCall::with("get_weather", [("city", "San Francisco")]);
    let res = registry.execute_tool(&sf, &memory).unwrap();
    memory.put_evidence(&sf, &res, 0).unwrap();

    let log = run(&spec, &mut MockEngine, &registry, &mut memory, &RunOptions::default()).unwrap();
    assert_eq!(log.log[1].loop_label, "Miami");
    assert_eq!(log.summary.loops, 3);
    assert_eq!(log.summary.final_action, "generate_image(San Francisco)");
    let m = compute_metrics(&log).unwrap();
    assert_eq!(m.evidence_citation_rate, 1.0);
    assert_eq!(m.memory_drift_events, 0);
    assert!(scl::audit::check_trace_properties(&log)
        .unwrap()
        .iter()
        .all(|p| p.holds));
}

#[test]
fn journal_replay_reproduces_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mem.jsonl");
    let mut memory = MemoryStore::open(&path).unwrap();
    run(
        &TaskSpec::allocation(),
        &mut MockEngine,
        &ToolRegistry::mock(&Fixtures::default()),
        &mut memory,
        &RunOptions::default(),
    )
    .unwrap();
    let reopened = MemoryStore::open(&path).unwrap();
    assert_eq!(reopened, memory);
    assert_eq!(reopened.rejections().len(), 1);
    assert_eq!(reopened.decisions().len(), 1);
}

#[test]
fn cold_snap_fixtures_take_the_one_city_branch() {
    let fixtures = Fixtures::load(repo_path("experiments/cold-snap.fixtures")).unwrap();
    let mut memory = MemoryStore::in_memory();
    let log = run(
        &TaskSpec::weather(),
        &mut MockEngine,
        &ToolRegistry::mock(&fixtures),
        &mut memory,
        &RunOptions::default(),
    )
    .unwrap();
    assert_eq!(log.summary.final_action, "answer(Atlanta)");
    assert_eq!(compute_metrics(&log).unwrap().conditional_logic_errors, 0.0);
}

#[test]
fn every_branch_runs_to_completion() {
    // Thresholds chosen against the default readings SF 64, Miami 90, Atlanta 73.
    let cases = [
        (55, "generate_image(San Francisco)", 4),
        (70, "send_email(Atlanta)", 4),
        (80, "answer(Miami)", 4),
        (95, "recommend_snacks()", 5),
    ];
    for (threshold, expected, loops) in cases {
        let mut spec = TaskSpec::weather();
        let scl::orchestrator::Scenario::Weather(w) = &mut spec.scenario else {
            panic!()
        };
        w.threshold_f = threshold;
        let (log, _) = run_mock(&spec);
        assert_eq!(log.summary.final_action, expected, "threshold {threshold}");
        assert_eq!(log.summary.loops, loops);
        let m = compute_metrics(&log).unwrap();
        assert_eq!(m.conditional_logic_errors, 0.0);
        assert_eq!(m.audit_trail_completeness, 1.0);
        assert!(scl::audit::check_trace_properties(&log)
            .unwrap()
            .iter()
            .all(|p| p.holds));
    }
}
