use std::fs;
use std::process::Command;

fn kslab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kslab"))
}

#[test]
fn list_shows_catalog() {
    let out = kslab().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["rotation-energy", "trotter-convergence", "parallelogram", "curve-energy"] {
        assert!(text.contains(name), "{name} missing");
    }
}

#[test]
fn defaults_round_trip_through_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = kslab().args(["defaults", "speed-identity"]).output().unwrap();
    assert!(out.status.success());
    let cfg = dir.path().join("speed.cfg");
    fs::write(&cfg, out.stdout).unwrap();
    let run_dir = dir.path().join("run");
    let status = kslab()
        .arg("run")
        .arg(&cfg)
        .arg("--out")
        .arg(&run_dir)
        .args(["--threads", "1"])
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["scenario"], "speed-identity");
}

#[test]
fn bad_configs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.cfg");
    fs::write(&bogus, "scenario = no-such-thing\n").unwrap();
    let status = kslab().arg("run").arg(&bogus).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let unknown = dir.path().join("unknown.cfg");
    fs::write(&unknown, "scenario = scaling\nwobble = 3\n").unwrap();
    let out = kslab().arg("run").arg(&unknown).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    assert!(!kslab().args(["defaults", "nope"]).status().unwrap().success());
}
