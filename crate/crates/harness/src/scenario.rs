//! Scenario files: a versioned JSON description of the vehicle, the
//! obstacles, the start and goal poses and planner overrides.

use std::path::Path;

use obca_core::geometry::{
    polygon_from_vertices, segment_to_obstacle, ConvexObstacle, ObstacleKind, Point2, VehicleFootprint,
};
use obca_core::grid_search::GridConfig;
use obca_core::nlp_mpc::MpcConfig;
use obca_core::pipeline::Scenario;
use obca_core::speed_profile::ProfileConfig;
use obca_core::vehicle::{Interval, VehicleLimits, VehicleState};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema version {0}, expected {SCHEMA_VERSION}")]
    Schema(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub vehicle: VehicleSpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    pub start: Pose,
    pub goal: Pose,
    /// Search region corners for the coarse planner.
    #[serde(default)]
    pub region: Option<[[f64; 2]; 2]>,
    /// Partial [`PlannerConfig`]; missing fields keep their defaults.
    #[serde(default)]
    pub planner: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub length: f64,
    pub width: f64,
    pub wheelbase: f64,
    pub rear_axle_to_center: f64,
    #[serde(default)]
    pub limits: LimitSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitSpec {
    pub steering: Interval,
    pub steering_rate: Interval,
    pub acceleration: Interval,
    pub speed: Interval,
}

impl Default for LimitSpec {
    fn default() -> Self {
        let l = VehicleLimits::default();
        Self {
            steering: l.steering,
            steering_rate: l.steering_rate,
            acceleration: l.acceleration,
            speed: l.speed,
        }
    }
}

/// Either a polygon by its vertices or a segment thickened into a thin
/// rectangle. Segments default to boundaries, polygons to agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<[[f64; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thickness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ObstacleKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

impl Pose {
    pub fn state(self) -> VehicleState {
        VehicleState::new(self.x, self.y, 0.0, self.phi)
    }
}

/// Planner settings shared by the scenario `planner` block and `--config`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub mpc: MpcConfig,
    pub grid: GridConfig,
    pub profile: ProfileConfig,
}

impl PlannerConfig {
    /// Defaults overlaid with each layer in turn; objects merge key by key.
    pub fn from_layers(layers: &[&Value]) -> Result<Self, ScenarioError> {
        let mut merged = serde_json::to_value(Self::default())?;
        for layer in layers {
            merge(&mut merged, layer);
        }
        let config: Self = serde_json::from_value(merged)?;
        config.mpc.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        config.grid.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(config)
    }
}

fn merge(base: &mut Value, layer: &Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (_, Value::Null) => {}
        (b, l) => *b = l.clone(),
    }
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: Self = serde_json::from_str(text)?;
        if file.schema != SCHEMA_VERSION {
            return Err(ScenarioError::Schema(file.schema));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario files serialize")
    }

    /// Builds and validates the planner scenario.
    pub fn scenario(&self) -> Result<Scenario, ScenarioError> {
        let v = &self.vehicle;
        let footprint = VehicleFootprint::new(v.length, v.width, v.rear_axle_to_center)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let limits = VehicleLimits {
            steering: v.limits.steering,
            steering_rate: v.limits.steering_rate,
            acceleration: v.limits.acceleration,
            speed: v.limits.speed,
            wheelbase: v.wheelbase,
        };
        let obstacles = self
            .obstacles
            .iter()
            .enumerate()
            .map(|(i, o)| o.obstacle().map_err(|e| ScenarioError::Invalid(format!("obstacle {i}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let scenario = Scenario {
            obstacles,
            boundary_segments: Vec::new(),
            boundary_thickness: 0.0,
            x0: self.start.state(),
            x_f: self.goal.state(),
            footprint,
            limits,
            region: self.region.map(|[a, b]| (Point2::new(a[0], a[1]), Point2::new(b[0], b[1]))),
        };
        scenario.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(scenario)
    }

    pub fn planner_config(&self, extra: Option<&Value>) -> Result<PlannerConfig, ScenarioError> {
        let mut layers = vec![&self.planner];
        layers.extend(extra);
        PlannerConfig::from_layers(&layers)
    }

    /// Number of boundary and agent edges, `N_OA` and `N_OB`.
    pub fn edge_counts(&self) -> (usize, usize) {
        let mut counts = (0, 0);
        for o in &self.obstacles {
            match (o.resolved_kind(), &o.vertices) {
                (ObstacleKind::BoundaryA, None) => counts.0 += 1,
                (ObstacleKind::BoundaryA, Some(v)) => counts.0 += v.len(),
                (ObstacleKind::AgentB, None) => counts.1 += 1,
                (ObstacleKind::AgentB, Some(v)) => counts.1 += v.len(),
            }
        }
        counts
    }
}

impl ObstacleSpec {
    fn resolved_kind(&self) -> ObstacleKind {
        self.kind.unwrap_or(if self.segment.is_some() {
            ObstacleKind::BoundaryA
        } else {
            ObstacleKind::AgentB
        })
    }

    pub fn obstacle(&self) -> Result<ConvexObstacle, String> {
        let kind = self.resolved_kind();
        match (&self.vertices, &self.segment) {
            (Some(v), None) => {
                if self.thickness.is_some() {
                    return Err("thickness applies to segments only".into());
                }
                let pts: Vec<Point2> = v.iter().map(|p| Point2::new(p[0], p[1])).collect();
                polygon_from_vertices(&pts, kind).map_err(|e| e.to_string())
            }
            (None, Some([a, b])) => {
                let t = self.thickness.ok_or("segment needs a thickness")?;
                let mut o = segment_to_obstacle(Point2::new(a[0], a[1]), Point2::new(b[0], b[1]), t)
                    .map_err(|e| e.to_string())?;
                o.kind = kind;
                Ok(o)
            }
            _ => Err("give exactly one of vertices or segment".into()),
        }
    }
}
