//! Offline verification of an audit log. With no argument, checks the bundled
//! weather log and then a copy with one Control entry removed.

use scl::audit::{check_trace_properties, parse_audit, AuditLog};

fn report(title: &str, log: &AuditLog) {
    println!("== {title}");
    for result in check_trace_properties(log).expect("well-formed log") {
        println!("  {result}");
    }
}

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../experiments/golden/weather.audit.json"
        )
        .to_owned()
    });
    let text = std::fs::read_to_string(&path).expect("readable audit log");
    let log = parse_audit(&text).expect("valid audit log");
    report(&path, &log);

    let mut tampered = log.clone();
    let entry = &mut tampered.log[2];
    entry.control = None;
    if let Some(phases) = &mut entry.phases {
        phases.retain(|p| p != "Control");
    }
    report("same log without the Control entry of log[2]", &tampered);
}
