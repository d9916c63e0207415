use obca_core::geometry::ObstacleKind;
use obca_core::nlp_mpc::{Mode, WarmStartChoice};
use obca_core::pipeline::parking_lot;
use obca_core::vehicle::VehicleState;
use obca_harness::gallery::{bundled, gallery, SCALING_CASES};
use obca_harness::scenario::{PlannerConfig, ScenarioError, ScenarioFile};
use serde_json::json;

fn minimal() -> serde_json::Value {
    json!({
        "schema": 1,
        "vehicle": {"length": 4.0, "width": 2.0, "wheelbase": 2.5, "rear_axle_to_center": 1.2},
        "obstacles": [
            {"segment": [[-5.0, -3.0], [5.0, -3.0]], "thickness": 0.2},
            {"vertices": [[6.0, 2.0], [8.0, 2.0], [8.0, 4.0], [6.0, 4.0]]}
        ],
        "start": {"x": 0.0, "y": 0.0, "phi": 0.0},
        "goal": {"x": 3.0, "y": 0.0, "phi": 0.0}
    })
}

#[test]
fn gallery_parses_to_valid_scenarios() {
    let all = gallery();
    assert_eq!(all.len(), 9);
    for (name, file) in all {
        assert_eq!(file.name, name);
        file.scenario().unwrap_or_else(|e| panic!("{name}: {e}"));
        file.planner_config(None).unwrap();
    }
}

#[test]
fn fig2_matches_the_builtin_parking_lot() {
    let file = bundled("fig2_parking").unwrap();
    let sc = file.scenario().unwrap();
    let lot = parking_lot(VehicleState::new(-6.0, 3.0, 0.0, 0.0));
    assert_eq!(sc.all_obstacles().unwrap(), lot.all_obstacles().unwrap());
    assert_eq!(sc.x0, lot.x0);
    assert_eq!(sc.x_f, lot.x_f);
    assert_eq!(sc.footprint, lot.footprint);
    assert_eq!(sc.limits, lot.limits);
    assert_eq!(sc.region, lot.region);
}

#[test]
fn scaling_cases_have_the_table_edge_counts() {
    let expected = [(5, 4), (5, 4), (6, 8), (6, 8), (9, 0)];
    for (name, counts) in SCALING_CASES.iter().zip(expected) {
        assert_eq!(bundled(name).unwrap().edge_counts(), counts, "{name}");
    }
}

#[test]
fn obstacle_kinds_default_by_shape() {
    let file = ScenarioFile::from_json(&minimal().to_string()).unwrap();
    let sc = file.scenario().unwrap();
    assert_eq!(sc.obstacles[0].kind, ObstacleKind::BoundaryA);
    assert_eq!(sc.obstacles[1].kind, ObstacleKind::AgentB);
    assert_eq!(sc.limits.wheelbase, 2.5);
}

#[test]
fn json_round_trip() {
    let file = bundled("hailing").unwrap();
    assert_eq!(ScenarioFile::from_json(&file.to_json()).unwrap(), file);
}

#[test]
fn unknown_keys_are_rejected() {
    let mut v = minimal();
    v["colour"] = json!("red");
    assert!(matches!(ScenarioFile::from_json(&v.to_string()), Err(ScenarioError::Parse(_))));
    let mut v = minimal();
    v["obstacles"][1]["radius"] = json!(1.0);
    assert!(matches!(ScenarioFile::from_json(&v.to_string()), Err(ScenarioError::Parse(_))));
    let mut v = minimal();
    v["planner"] = json!({"mpc": {"steps": 50, "gamma": 1.0}});
    let file = ScenarioFile::from_json(&v.to_string()).unwrap();
    assert!(matches!(file.planner_config(None), Err(ScenarioError::Parse(_))));
}

#[test]
fn schema_version_is_checked() {
    let mut v = minimal();
    v["schema"] = json!(2);
    assert!(matches!(ScenarioFile::from_json(&v.to_string()), Err(ScenarioError::Schema(2))));
}

#[test]
fn bad_obstacles_are_invalid() {
    for bad in [
        json!({"segment": [[0.0, 0.0], [1.0, 0.0]]}),
        json!({"segment": [[0.0, 0.0], [1.0, 0.0]], "thickness": -1.0}),
        json!({"vertices": [[0.0, 0.0], [1.0, 0.0]]}),
        json!({"vertices": [[9.0, 9.0], [10.0, 9.0], [10.0, 10.0]], "thickness": 0.1}),
        json!({}),
    ] {
        let mut v = minimal();
        v["obstacles"] = json!([bad]);
        let file = ScenarioFile::from_json(&v.to_string()).unwrap();
        assert!(matches!(file.scenario(), Err(ScenarioError::Invalid(_))), "{bad}");
    }
}

#[test]
fn colliding_start_is_invalid() {
    let mut v = minimal();
    v["start"] = json!({"x": 6.0, "y": 2.0, "phi": 0.0});
    let file = ScenarioFile::from_json(&v.to_string()).unwrap();
    assert!(matches!(file.scenario(), Err(ScenarioError::Invalid(_))));
}

#[test]
fn planner_layers_merge_in_order() {
    let scenario_layer = json!({"mpc": {"steps": 80, "mode": "td"}, "grid": {"max_expansions": 1000}});
    let cli_layer = json!({"mpc": {"steps": 40, "warm_start": "cold"}});
    let c = PlannerConfig::from_layers(&[&scenario_layer, &cli_layer]).unwrap();
    let d = PlannerConfig::default();
    assert_eq!(c.mpc.steps, 40);
    assert_eq!(c.mpc.mode, Mode::Td);
    assert_eq!(c.mpc.warm_start, WarmStartChoice::Cold);
    assert_eq!(c.mpc.alpha_e, d.mpc.alpha_e);
    assert_eq!(c.grid.max_expansions, 1000);
    assert_eq!(c.profile, d.profile);
    assert_eq!(PlannerConfig::from_layers(&[]).unwrap(), d);
}

#[test]
fn invalid_planner_values_are_rejected() {
    let bad = json!({"mpc": {"steps": 1}});
    assert!(matches!(PlannerConfig::from_layers(&[&bad]), Err(ScenarioError::Invalid(_))));
}
