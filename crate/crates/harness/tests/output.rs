use obca_core::grid_search::Gear;
use obca_core::nlp_mpc::Mode;
use obca_core::pipeline::{plan_with_profile, GearRange, PlanResult, Scenario};
use obca_harness::gallery::bundled;
use obca_harness::output::{
    csv_rows, emit_outputs, parse_trajectory_csv, scene_svg, trajectory_csv, Format, CSV_HEADER,
};
use serde_json::json;

fn plan_bundled(name: &str, steps: usize) -> (PlanResult, Scenario) {
    let file = bundled(name).unwrap();
    let sc = file.scenario().unwrap();
    let p = file.planner_config(Some(&json!({"mpc": {"steps": steps, "mode": "tdr"}}))).unwrap();
    (plan_with_profile(&sc, &p.grid, &p.mpc, &p.profile).unwrap(), sc)
}

#[test]
fn two_step_plan_has_three_state_rows() {
    // The profile stage needs three steps per gear segment, so cut a solved
    // plan down to K = 2.
    let (mut r, _) = plan_bundled("fig2_parking", 40);
    r.trajectory.states.truncate(3);
    r.trajectory.controls.truncate(2);
    r.gear_partitions = vec![GearRange { gear: Gear::Forward, start: 0, end: 3 }];
    let text = trajectory_csv(&r);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 4);
    let rows = parse_trajectory_csv(&text).unwrap();
    assert!(rows[0].jerk.is_none() && rows[1].jerk.is_some());
    assert!(rows[2].delta.is_none() && rows[2].a.is_none());
}

#[test]
fn csv_and_json_round_trip() {
    let (r, _) = plan_bundled("fig2_parking", 160);
    assert_eq!(r.mode, Mode::Tdr);
    let rows = csv_rows(&r);
    let back = parse_trajectory_csv(&trajectory_csv(&r)).unwrap();
    assert_eq!(back.len(), r.trajectory.states.len());
    for (a, b) in rows.iter().zip(&back) {
        assert_eq!(a.k, b.k);
        assert_eq!(a.gear, b.gear);
        for (x, y) in [(a.t, b.t), (a.x, b.x), (a.y, b.y), (a.v, b.v), (a.phi, b.phi)] {
            assert!((x - y).abs() <= 1e-12);
        }
        for (x, y) in [(a.delta, b.delta), (a.a, b.a), (a.jerk, b.jerk)] {
            assert_eq!(x.is_some(), y.is_some());
            assert!((x.unwrap_or(0.0) - y.unwrap_or(0.0)).abs() <= 1e-12);
        }
    }
    let json = serde_json::to_string(&r).unwrap();
    let parsed: PlanResult = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed, r);
    // The parking manoeuvre backs into the spot.
    assert!(rows.iter().any(|row| row.gear == Gear::Reverse));
}

#[test]
fn svg_draws_every_obstacle_and_one_path() {
    let (r, sc) = plan_bundled("case_c_two_vehicles", 160);
    let obstacles = sc.all_obstacles().unwrap();
    let svg = scene_svg(&r, &obstacles, &sc.footprint, 10);
    assert_eq!(obstacles.len(), 8);
    assert_eq!(svg.matches(r#"class="obstacle""#).count(), obstacles.len());
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert_eq!(svg.matches(r#"class="path""#).count(), 1);
    assert_eq!(svg.matches(r#"class="footprint""#).count(), 17);
}

#[test]
fn emit_writes_the_requested_files() {
    let (r, sc) = plan_bundled("fig2_parking", 40);
    let dir = tempfile::tempdir().unwrap();
    let obstacles = sc.all_obstacles().unwrap();
    let written =
        emit_outputs(&r, &obstacles, &sc.footprint, dir.path(), "lot", &[Format::Csv, Format::Svg, Format::Json])
            .unwrap();
    let names: Vec<String> = written.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["lot.csv", "lot.svg", "lot_controls.svg", "lot.json"]);
    let parsed: PlanResult = serde_json::from_str(&std::fs::read_to_string(dir.path().join("lot.json")).unwrap()).unwrap();
    assert_eq!(parsed, r);
}

#[test]
fn unwritable_directory_is_an_io_error() {
    let (r, sc) = plan_bundled("fig2_parking", 40);
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let err = emit_outputs(&r, &[], &sc.footprint, &blocker, "p", &[Format::Csv]).unwrap_err();
    assert!(err.to_string().contains("cannot write"));
}

#[test]
fn format_names() {
    assert_eq!("svg".parse::<Format>(), Ok(Format::Svg));
    assert!("png".parse::<Format>().is_err());
    assert!(parse_trajectory_csv("k,t\n").is_err());
}
