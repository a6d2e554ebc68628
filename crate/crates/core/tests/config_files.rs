use std::path::PathBuf;

use swerve::{load_scenario, parse_scenario, scenario_to_string, Error};

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn shipped_scenarios_load_and_round_trip() {
    let mut count = 0;
    for entry in std::fs::read_dir(scenario_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "ini") {
            let scenario = load_scenario(&path).unwrap();
            let again = parse_scenario(&scenario_to_string(&scenario)).unwrap();
            assert_eq!(scenario, again, "{}", path.display());
            count += 1;
        }
    }
    assert_eq!(count, 7);
}

#[test]
fn missing_file_reports_the_path() {
    let path = scenario_dir().join("does-not-exist.ini");
    match load_scenario(&path) {
        Err(Error::Io { path: p, .. }) => assert_eq!(p, path),
        other => panic!("expected an I/O error, got {other:?}"),
    }
}
