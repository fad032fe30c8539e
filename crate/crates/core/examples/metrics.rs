//! Recompute the reliability figures from audit logs given on the command
//! line, or from both bundled golden logs.

use scl::audit::{compute_metrics, parse_audit};

fn main() {
    let mut paths: Vec<String> = std::env::args().skip(1).collect();
    if paths.is_empty() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../experiments/golden");
        paths = ["weather", "allocation"]
            .iter()
            .map(|id| format!("{dir}/{id}.audit.json"))
            .collect();
    }
    for path in paths {
        let text = std::fs::read_to_string(&path).expect("readable audit log");
        let log = parse_audit(&text).expect("valid audit log");
        println!("== {path}\n{}\n", compute_metrics(&log).expect("metrics"));
    }
}
