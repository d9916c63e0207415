use obca_core::geometry::{Point2, VehicleFootprint};
use obca_core::nlp_mpc::Mode;
use obca_core::pipeline::Scenario;
use obca_core::vehicle::VehicleState;
use obca_harness::experiments::{
    median, run_grid_experiment, run_scaling_experiment, AxisRange, RangeError, ScalingCase, ScalingEntry,
    ScalingReport, ScalingRow,
};
use obca_harness::scenario::PlannerConfig;

fn empty_scene() -> Scenario {
    Scenario {
        obstacles: Vec::new(),
        boundary_segments: Vec::new(),
        boundary_thickness: 0.1,
        x0: VehicleState::default(),
        x_f: VehicleState::new(8.0, 1.0, 0.0, 0.0),
        footprint: VehicleFootprint::new(4.933, 2.11, 1.4235).unwrap(),
        limits: Default::default(),
        region: Some((Point2::new(-6.0, -6.0), Point2::new(14.0, 6.0))),
    }
}

fn quick() -> PlannerConfig {
    let mut p = PlannerConfig::default();
    p.mpc.steps = 60;
    p
}

#[test]
fn standard_grid_has_105_starts() {
    let x: AxisRange = "-10:1:10".parse().unwrap();
    let y: AxisRange = "2:0.5:4".parse().unwrap();
    assert_eq!(x.values().len(), 21);
    assert_eq!(y.values(), vec![2.0, 2.5, 3.0, 3.5, 4.0]);
    assert_eq!(x.values().len() * y.values().len(), 105);
    assert_eq!(*x.values().last().unwrap(), 10.0);
}

#[test]
fn degenerate_range_is_one_value() {
    assert_eq!("3:1:3".parse::<AxisRange>().unwrap().values(), vec![3.0]);
    assert_eq!("-2.5".parse::<AxisRange>().unwrap().values(), vec![-2.5]);
}

#[test]
fn bad_ranges_are_rejected() {
    assert_eq!("1:0:3".parse::<AxisRange>(), Err(RangeError::Empty));
    assert_eq!("3:1:1".parse::<AxisRange>(), Err(RangeError::Empty));
    assert_eq!("1:2".parse::<AxisRange>(), Err(RangeError::Syntax("1:2".into())));
    assert!(matches!("a:1:2".parse::<AxisRange>(), Err(RangeError::Syntax(_))));
}

#[test]
fn single_start_in_an_empty_scene_never_fails() {
    let r = run_grid_experiment(
        &empty_scene(),
        AxisRange::new(0.0, 1.0, 0.0).unwrap(),
        AxisRange::new(0.0, 1.0, 0.0).unwrap(),
        &[Mode::Tdr],
        &quick(),
    );
    assert_eq!(r.cases.len(), 1);
    let s = r.summary_for(Mode::Tdr).unwrap();
    assert_eq!((s.failures, s.total), (0, 1));
    assert_eq!(s.percent(), 0.0);
    assert!(r.table().contains("0/1"));
    assert_eq!(r.reduction_vs_base(Mode::Tdr), None);
}

#[test]
fn grid_runs_every_start_in_every_mode_in_order() {
    let x = AxisRange::new(-1.0, 1.0, 0.0).unwrap();
    let y = AxisRange::new(0.0, 0.5, 0.5).unwrap();
    let r = run_grid_experiment(&empty_scene(), x, y, &[Mode::Base, Mode::Tdr], &quick());
    let starts: Vec<(Mode, f64, f64)> = r.cases.iter().map(|c| (c.result.mode, c.x, c.y)).collect();
    let mut expected = Vec::new();
    for m in [Mode::Base, Mode::Tdr] {
        for xv in [-1.0, 0.0] {
            for yv in [0.0, 0.5] {
                expected.push((m, xv, yv));
            }
        }
    }
    assert_eq!(starts, expected);
    for s in &r.summary {
        assert_eq!(s.total, 4);
        assert_eq!(s.failures, r.cases_for(s.mode).filter(|c| !c.result.succeeded).count());
    }
    let (base, tdr) = r.paired_metrics(Mode::Base, Mode::Tdr).unwrap();
    assert_eq!(base.successes, tdr.successes);
}

fn row(name: &str, entries: &[Option<(f64, f64)>]) -> ScalingRow {
    let modes = [Mode::Base, Mode::Tdr];
    ScalingRow {
        name: name.into(),
        n_oa: 5,
        n_ob: 4,
        entries: entries
            .iter()
            .zip(modes)
            .map(|(t, mode)| ScalingEntry { mode, times: *t, iterations: None })
            .collect(),
    }
}

#[test]
fn failed_modes_print_na_and_drop_out() {
    let report = ScalingReport {
        modes: vec![Mode::Base, Mode::Tdr],
        rows: vec![row("b", &[Some((0.029, 1.80)), Some((0.016, 1.74))]), row("x", &[None, Some((0.02, 1.0))])],
    };
    let (tf, tt) = report.rows[0].improvement().unwrap();
    assert!((tf - 44.83).abs() < 0.01 && (tt - 3.33).abs() < 0.01);
    assert_eq!(report.rows[1].improvement(), None);
    let table = report.table();
    let last = table.lines().last().unwrap();
    assert_eq!(last.matches("N.A.").count(), 4, "{table}");
}

#[test]
fn single_scenario_single_mode_has_no_comparison() {
    let case = ScalingCase {
        name: "empty".into(),
        n_oa: 0,
        n_ob: 0,
        scenario: empty_scene(),
        planner: quick(),
    };
    let report = run_scaling_experiment(&[case], &[Mode::Tdr]);
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].improvement(), None);
    let e = report.rows[0].entries[0];
    let (tf, tt) = e.times.unwrap();
    assert!((tf - tt / 60.0).abs() < 1e-12);
    assert!(!report.table().contains("impr"));
}

#[test]
fn median_of_counts() {
    assert_eq!(median(&[3, 1, 2]), 2.0);
    assert_eq!(median(&[4, 1, 3, 2]), 2.5);
    assert!(median(&[]).is_nan());
}
