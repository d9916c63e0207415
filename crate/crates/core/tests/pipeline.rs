use obca_core::geometry::Point2;
use obca_core::grid_search::{Gear, GridConfig};
use obca_core::nlp_mpc::{Mode, MpcConfig, SolveStatus};
use obca_core::pipeline::{parking_lot, partition_states, plan, GearRange, PlanError, PlanResult, Scenario};
use obca_core::vehicle::VehicleState;
use proptest::prelude::*;

fn run(x: f64, y: f64, mode: Mode) -> PlanResult {
    let sc = parking_lot(VehicleState::new(x, y, 0.0, 0.0));
    plan(&sc, &GridConfig::default(), &MpcConfig::with_mode(mode)).unwrap()
}

fn with_speeds(v: &[f64]) -> Vec<VehicleState> {
    v.iter().map(|&v| VehicleState::new(0.0, 0.0, v, 0.0)).collect()
}

#[test]
fn parking_scene_solves_in_tdr() {
    let r = run(-8.0, 3.0, Mode::Tdr);
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!(r.audit.is_clean(), "{:?}", r.audit);
    assert!(r.succeeded());
    let last = r.trajectory.states.last().unwrap();
    let goal = parking_lot(VehicleState::default()).x_f;
    assert!((last.x - goal.x).hypot(last.y - goal.y) < 0.1);
    let ranges = &r.gear_partitions;
    assert_eq!(ranges.first().unwrap().start, 0);
    assert_eq!(ranges.last().unwrap().end, r.trajectory.states.len());
    assert!(ranges.windows(2).all(|w| w[0].end == w[1].start));
}

#[test]
fn modes_share_the_coarse_path() {
    let base = run(4.0, 2.5, Mode::Base);
    let tdr = run(4.0, 2.5, Mode::Tdr);
    assert_eq!(base.coarse_path, tdr.coarse_path);
    assert_ne!(base.trajectory.states, tdr.trajectory.states);
    assert_ne!(base.warm_start, tdr.warm_start);
}

#[test]
fn enclosed_start_fails_in_coarse_search() {
    let mut sc = parking_lot(VehicleState::new(6.0, 4.0, 0.0, 0.0));
    let p = Point2::new;
    sc.boundary_segments.extend([
        (p(2.0, 1.0), p(10.0, 1.0)),
        (p(10.0, 1.0), p(10.0, 7.0)),
        (p(10.0, 7.0), p(2.0, 7.0)),
        (p(2.0, 7.0), p(2.0, 1.0)),
    ]);
    let err = plan(&sc, &GridConfig::default(), &MpcConfig::default()).unwrap_err();
    assert!(matches!(err, PlanError::CoarseSearchFailed(_)), "{err:?}");
    assert_eq!(err.stage(), "coarse_search");
}

#[test]
fn colliding_start_is_rejected() {
    let sc = parking_lot(VehicleState::new(0.0, 7.5, 0.0, 0.0));
    let err = plan(&sc, &GridConfig::default(), &MpcConfig::default()).unwrap_err();
    assert_eq!(err.stage(), "scenario");
}

#[test]
fn obstacle_free_scene_plans() {
    let sc = Scenario {
        obstacles: Vec::new(),
        boundary_segments: Vec::new(),
        boundary_thickness: 0.1,
        x0: VehicleState::default(),
        x_f: VehicleState::new(8.0, 1.0, 0.0, 0.0),
        footprint: parking_lot(VehicleState::default()).footprint,
        limits: Default::default(),
        region: Some((Point2::new(-6.0, -6.0), Point2::new(14.0, 6.0))),
    };
    let r = plan(&sc, &GridConfig::default(), &MpcConfig::default()).unwrap();
    assert!(r.succeeded(), "{:?}", r.status);
}

#[test]
fn replanning_is_deterministic() {
    let mut a = run(-2.0, 3.5, Mode::Tdr);
    let mut b = run(-2.0, 3.5, Mode::Tdr);
    for r in [&mut a, &mut b] {
        r.timings = Default::default();
        r.trajectory.report.wall_time = 0.0;
    }
    assert_eq!(a, b);
}

#[test]
fn stage_timings_cover_the_total() {
    let r = run(7.0, 2.0, Mode::Td);
    let t = r.timings;
    assert!((t.stage_sum() - t.total).abs() <= 0.05 * t.total, "{t:?}");
    assert!((t.per_frame - t.total / 160.0).abs() < 1e-15);
}

#[test]
fn forward_only_is_one_range() {
    let r = partition_states(&with_speeds(&[0.0, 0.5, 1.0, 0.5, 0.0]));
    assert_eq!(r, vec![GearRange { gear: Gear::Forward, start: 0, end: 5 }]);
}

#[test]
fn single_crossing_splits_in_two() {
    let r = partition_states(&with_speeds(&[0.0, 1.0, 0.5, 0.0, -0.5, -1.0, 0.0]));
    assert_eq!(
        r,
        vec![
            GearRange { gear: Gear::Forward, start: 0, end: 3 },
            GearRange { gear: Gear::Reverse, start: 3, end: 7 },
        ]
    );
}

#[test]
fn all_zero_is_forward() {
    let r = partition_states(&with_speeds(&[0.0, 0.0]));
    assert_eq!(r, vec![GearRange { gear: Gear::Forward, start: 0, end: 2 }]);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn range_count_follows_sign_changes(v in prop::collection::vec(prop::sample::select(vec![-1.0, 0.0, 0.5]), 1..40)) {
        let ranges = partition_states(&with_speeds(&v));
        let signs: Vec<bool> = v.iter().filter(|x| **x != 0.0).map(|x| *x > 0.0).collect();
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert_eq!(ranges.len(), changes + 1);
        prop_assert_eq!(ranges[0].start, 0);
        prop_assert_eq!(ranges.last().unwrap().end, v.len());
        for w in ranges.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
        for r in &ranges {
            for x in &v[r.start..r.end] {
                prop_assert!(*x == 0.0 || (*x > 0.0) == (r.gear == Gear::Forward));
            }
        }
    }
}
