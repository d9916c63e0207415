use obca_core::geometry::{polygon_distance, segment_to_obstacle, ConvexObstacle, Point2, VehicleFootprint};
use obca_core::grid_search::{
    partition_by_gear, plan_coarse_path, CoarsePathPoint, Gear, GridConfig, GridSearchError,
};
use obca_core::vehicle::{angle_diff, VehicleLimits, VehicleState};

fn footprint() -> VehicleFootprint {
    VehicleFootprint::new(4.933, 2.11, 1.4235).unwrap()
}

/// Distance audit at every returned pose plus heading-change bound.
fn audit(path: &[CoarsePathPoint], obstacles: &[ConvexObstacle], config: &GridConfig) {
    let fp = footprint();
    let limits = VehicleLimits::default();
    for p in path {
        let body = fp.at(&VehicleState::new(p.x, p.y, 0.0, p.phi));
        for o in obstacles {
            assert!(polygon_distance(&body, o) > 0.0, "collision at {p:?}");
        }
    }
    let bound = config.primitive_arc * limits.max_steering().tan() / limits.wheelbase + 1e-9;
    for w in path.windows(2) {
        assert!((w[1].phi - w[0].phi).abs() <= bound, "heading jump {w:?}");
        assert!((w[1].x - w[0].x).hypot(w[1].y - w[0].y) <= config.primitive_arc + 1e-9);
    }
}

fn walls_around(cx: f64, cy: f64, half: f64) -> Vec<ConvexObstacle> {
    let c = [
        Point2::new(cx - half, cy - half),
        Point2::new(cx + half, cy - half),
        Point2::new(cx + half, cy + half),
        Point2::new(cx - half, cy + half),
    ];
    (0..4).map(|i| segment_to_obstacle(c[i], c[(i + 1) % 4], 0.2).unwrap()).collect()
}

#[test]
fn straight_goal_ahead() {
    let config = GridConfig::default();
    let path = plan_coarse_path(
        &[],
        &footprint(),
        &VehicleState::new(0.0, 0.0, 0.0, 0.0),
        &VehicleState::new(10.0, 0.0, 0.0, 0.0),
        &VehicleLimits::default(),
        &config,
        None,
    )
    .unwrap();
    assert!(path.iter().all(|p| p.gear == Gear::Forward));
    assert!(path.windows(2).all(|w| w[1].x > w[0].x));
    let end = path.last().unwrap();
    assert!((end.x - 10.0).abs() < 1e-6 && end.y.abs() < 1e-6);
    audit(&path, &[], &config);
}

#[test]
fn walled_off_goal_has_no_path() {
    let walls = walls_around(0.0, 20.0, 5.0);
    let config = GridConfig {
        max_expansions: 20_000,
        ..GridConfig::default()
    };
    let r = plan_coarse_path(
        &walls,
        &footprint(),
        &VehicleState::new(0.0, 0.0, 0.0, 0.0),
        &VehicleState::new(0.0, 20.0, 0.0, 0.0),
        &VehicleLimits::default(),
        &config,
        Some((Point2::new(-10.0, -6.0), Point2::new(10.0, 30.0))),
    );
    assert!(matches!(r, Err(GridSearchError::NoPathFound(_))), "{r:?}");
}

#[test]
fn colliding_endpoints_are_rejected() {
    let block = walls_around(0.0, 0.0, 1.0);
    let r = plan_coarse_path(
        &block,
        &footprint(),
        &VehicleState::new(0.0, 1.0, 0.0, 0.0),
        &VehicleState::new(10.0, 10.0, 0.0, 0.0),
        &VehicleLimits::default(),
        &GridConfig::default(),
        None,
    );
    assert_eq!(r, Err(GridSearchError::StartInCollision));
    let r = plan_coarse_path(
        &block,
        &footprint(),
        &VehicleState::new(10.0, 10.0, 0.0, 0.0),
        &VehicleState::new(0.0, 1.0, 0.0, 0.0),
        &VehicleLimits::default(),
        &GridConfig::default(),
        None,
    );
    assert_eq!(r, Err(GridSearchError::GoalInCollision));
}

#[test]
fn goal_behind_start_uses_reverse() {
    let config = GridConfig::default();
    let path = plan_coarse_path(
        &[],
        &footprint(),
        &VehicleState::new(0.0, 0.0, 0.0, 0.0),
        &VehicleState::new(-5.0, 0.0, 0.0, 0.0),
        &VehicleLimits::default(),
        &config,
        None,
    )
    .unwrap();
    let segs = partition_by_gear(&path).unwrap();
    assert!(segs.iter().any(|s| s.gear == Gear::Reverse));
    audit(&path, &[], &config);
}

/// Bay parking: the road band y in [0, 8] and a spot below it.
fn parking_lot() -> Vec<ConvexObstacle> {
    let pts = [
        (-15.0, 0.0),
        (-1.6, 0.0),
        (-1.6, -6.0),
        (1.6, -6.0),
        (1.6, 0.0),
        (15.0, 0.0),
    ];
    let mut obs: Vec<ConvexObstacle> = pts
        .windows(2)
        .map(|w| {
            segment_to_obstacle(Point2::new(w[0].0, w[0].1), Point2::new(w[1].0, w[1].1), 0.1)
                .unwrap()
        })
        .collect();
    obs.push(segment_to_obstacle(Point2::new(-15.0, 8.0), Point2::new(15.0, 8.0), 0.1).unwrap());
    obs
}

#[test]
fn parking_path_gear_segments_match_changes() {
    let obstacles = parking_lot();
    let config = GridConfig::default();
    let start = std::time::Instant::now();
    let path = plan_coarse_path(
        &obstacles,
        &footprint(),
        &VehicleState::new(-6.0, 3.0, 0.0, 0.0),
        &VehicleState::new(0.0, -4.5, 0.0, std::f64::consts::FRAC_PI_2),
        &VehicleLimits::default(),
        &config,
        None,
    )
    .unwrap();
    eprintln!("parking search {:?}, {} points", start.elapsed(), path.len());
    audit(&path, &obstacles, &config);
    let changes = path.windows(2).filter(|w| w[0].gear != w[1].gear).count();
    assert_eq!(partition_by_gear(&path).unwrap().len(), changes + 1);
    let end = path.last().unwrap();
    assert!((end.x).hypot(end.y + 4.5) <= config.xy_resolution);
    assert!(angle_diff(end.phi, std::f64::consts::FRAC_PI_2).abs() <= config.phi_resolution);
}
