use std::path::Path;
use std::process::{Command, Output};

fn obca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obca")).args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn plan_then_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = obca(&["plan", "valet_parking", "--mode", "td", "--out", out, "--format", "json,csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(dir.path().join("valet_parking.csv").exists());
    assert!(!dir.path().join("valet_parking.svg").exists());
    let result = dir.path().join("valet_parking.json");
    let o = obca(&["check", result.to_str().unwrap(), "valet_parking"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("collisions 0"));
}

#[test]
fn failed_plans_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"mpc": {"max_iter": 2}}"#).unwrap();
    let o = obca(&["--config", config.to_str().unwrap(), "plan", "fig2_parking"]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"schema": 1, "extra": true}"#).unwrap();
    let o = obca(&["plan", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("malformed scenario"));
    let o = obca(&["plan", "no_such_scenario"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn small_grid_and_scale_runs() {
    let o = obca(&["grid", "fig2_parking", "--x=-8:2:-6", "--y", "3", "--modes", "td,tdr"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("0/2"));

    let dir = tempfile::tempdir().unwrap();
    let gallery = dir.path().join("g");
    assert!(obca(&["gallery", gallery.to_str().unwrap()]).status.success());
    let scale = dir.path().join("s");
    std::fs::create_dir(&scale).unwrap();
    for name in ["case_a_pedestrian", "case_e_curved_boundary"] {
        let f = format!("{name}.json");
        std::fs::copy(gallery.join(&f), scale.join(&f)).unwrap();
    }
    let report = dir.path().join("scale.json");
    let o = obca(&["scale", scale.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let t = text(&o);
    assert!(t.contains("case_a_pedestrian") && t.contains("case_e_curved_boundary"));
    assert!(Path::new(&report).exists());
}
