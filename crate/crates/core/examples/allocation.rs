//! Fairness-governed task allocation: the first draft overloads one person,
//! Control rejects it, the planner repairs it, and the approved plan is
//! mailed to the manager.

use scl::cognition::MockEngine;
use scl::memory::MemoryStore;
use scl::orchestrator::{run, RunOptions, TaskSpec};
use scl::tools::{Fixtures, ToolRegistry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let registry = ToolRegistry::mock(&Fixtures::default());
    let mut memory = MemoryStore::in_memory();
    let log = run(
        &TaskSpec::allocation(),
        &mut MockEngine,
        &registry,
        &mut memory,
        &RunOptions::default(),
    )?;

    for (index, entry) in log.loops() {
        let control = entry.control.as_ref().expect("every loop is checked");
        println!(
            "loop {index} [{}] {}: {}",
            entry.loop_label, control["status"], control["reason"]
        );
    }
    for rejected in memory.rejections() {
        println!("\nkept rejected plan {}: {}", rejected.plan_label, rejected.reason);
    }
    let email = log.log.last().and_then(|e| e.action.as_ref()).expect("final email");
    println!("\n{}", email["call"]["args"]["body"].as_str().unwrap_or_default());
    println!("final_action={}", log.summary.final_action);
    Ok(())
}
