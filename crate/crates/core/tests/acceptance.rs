//! Full acceptance run at the pinned seeds and tolerances. One line per
//! criterion goes straight to stderr so it shows up without `--nocapture`.

use std::io::Write;

use gps_fluid::harness::validate_suite;

#[test]
fn acceptance_criteria() {
    let outcomes = validate_suite("all").expect("known selector");
    let mut err = std::io::stderr().lock();
    for o in &outcomes {
        writeln!(err, "{o}").unwrap();
    }
    let ids: Vec<u8> = outcomes.iter().map(|o| o.id).collect();
    for id in 1..=10 {
        assert!(ids.contains(&id), "criterion {id} not run");
    }
    let failed: Vec<String> = outcomes
        .iter()
        .filter(|o| !o.pass)
        .map(|o| format!("{o} [{}]", o.detail))
        .collect();
    assert!(failed.is_empty(), "failed:\n{}", failed.join("\n"));
}
