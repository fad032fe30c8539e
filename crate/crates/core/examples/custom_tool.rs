//! Register an extra tool and watch its results become citable evidence.

use scl::domain::ToolCall;
use scl::memory::MemoryStore;
use scl::tools::{ArgType, Fixtures, ToolError, ToolRegistry, ToolSpec};
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut registry = ToolRegistry::mock(&Fixtures::default());
    let spec = ToolSpec::new("get_flight_price", "fare")
        .arg("destination", ArgType::Text, true)
        .ref_arg("destination");
    registry.register_tool(spec, |call: &ToolCall, _: &MemoryStore| {
        let to = call.arg_str("destination").unwrap_or_default();
        Ok::<_, ToolError>(json!({"destination": to, "usd": 120 + 7 * to.len()}))
    })?;

    let mut memory = MemoryStore::in_memory();
    for city in ["Miami", "Atlanta", "Miami"] {
        let call = ToolCall::with("get_flight_price", [("destination", city)]);
        if let Some(stored) = memory.lookup_call(&call) {
            println!("{city}: already stored as {}", stored.reference.as_str());
            continue;
        }
        let result = registry.execute_tool(&call, &memory)?;
        let evidence = memory.put_evidence(&call, &result, 0)?;
        println!("{city}: {} -> {}", evidence.reference.as_str(), evidence.payload);
    }

    let bad = ToolCall::with("get_flight_price", [("to", "Oslo")]);
    println!("schema check: {}", registry.execute_tool(&bad, &memory).unwrap_err());
    Ok(())
}
