//! Multi-step conditional reasoning: query three cities, then branch on the
//! temperatures. Pass a threshold to see the other branches, e.g.
//! `cargo run --example weather_trip -- 80`.

use scl::audit::{compute_metrics, serialize_audit};
use scl::cognition::MockEngine;
use scl::memory::MemoryStore;
use scl::orchestrator::{run, RunOptions, Scenario, TaskSpec};
use scl::tools::{Fixtures, ToolRegistry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = TaskSpec::weather();
    if let (Some(arg), Scenario::Weather(w)) = (std::env::args().nth(1), &mut spec.scenario) {
        w.threshold_f = arg.parse()?;
    }
    let registry = ToolRegistry::mock(&Fixtures::default());
    let mut memory = MemoryStore::in_memory();
    let log = run(&spec, &mut MockEngine, &registry, &mut memory, &RunOptions::default())?;

    print!("{}", serialize_audit(&log));
    println!("\n{}", compute_metrics(&log)?);
    for evidence in memory.evidence() {
        println!("stored {} <- {}", evidence.reference.as_str(), evidence.key.as_str());
    }
    Ok(())
}
