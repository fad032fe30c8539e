//! Parse, print and union policy files. Pass a path to check your own file.

use scl::metaprompt::{builtin_policies, parse_policy_file, serialize_policies};

const SAMPLE: &str = "\
- type: evidence_citation
  scope: all_final_actions
  enforcement: reject
- type: redundancy_check
  scope: tool_calls
  enforcement: warn_then_reject
- type: fairness_check
  scope: allocations
  enforcement: reject
  params.max_load_fraction: 0.4
";

fn main() {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(path).expect("readable policy file"),
        None => SAMPLE.to_owned(),
    };
    match parse_policy_file(&text) {
        Ok(policies) => {
            println!("parsed {} policies:\n{}", policies.len(), serialize_policies(&policies));
            let merged = builtin_policies().union(policies);
            println!("in force with the built-ins: {:?}", merged.ids());
        }
        Err(e) => println!("rejected: {e}"),
    }

    let typo = "- type: evidence_citation\n  scope: all_final_actions\n  enforcement: ignore\n";
    println!("\na bad file is located: {}", parse_policy_file(typo).unwrap_err());
}
