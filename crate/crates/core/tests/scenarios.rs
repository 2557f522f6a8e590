use std::f64::consts::FRAC_PI_2;

use kslab::experiment::{run_scenario, ScenarioConfig};
use kslab::Error;

fn config(name: &str, dir: &tempfile::TempDir) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::defaults(name).unwrap();
    cfg.out = Some(dir.path().join(name));
    cfg
}

#[test]
fn rotation_energy_matches_half_pi() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("rotation-energy", &dir);
    cfg.samples = 20_000;
    let report = run_scenario(&cfg).unwrap();
    assert!(report.passed, "{:?}", report.checks);
    let e = report.metrics["E"];
    assert!((e - FRAC_PI_2).abs() / FRAC_PI_2 < 0.02, "E = {e}");
    for name in &report.artifacts {
        assert!(dir.path().join("rotation-energy").join(name).exists());
    }
}

#[test]
fn l1_parallelogram_violation_is_expected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("parallelogram", &dir);
    cfg.set("target", "normed(2,l1)").unwrap();
    let report = run_scenario(&cfg).unwrap();
    assert!(report.passed, "{:?}", report.checks);
    assert!(report.check("violation_vs_closed_form").is_some());
}

#[test]
fn unknown_tags_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config("scaling", &dir);
    assert!(cfg.set("domain", "hexagon(1)").is_ok());
    assert!(matches!(run_scenario(&cfg), Err(Error::UnknownTag(_))));
}

#[test]
fn reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("triangle", &dir);
    let strip = |r: kslab::experiment::RunReport| {
        let mut v = serde_json::to_value(r).unwrap();
        v.as_object_mut().unwrap().remove("wall_clock_s");
        v
    };
    let a = strip(run_scenario(&cfg).unwrap());
    let b = strip(run_scenario(&cfg).unwrap());
    assert_eq!(a, b);
}
