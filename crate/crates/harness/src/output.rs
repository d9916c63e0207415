//! CSV, SVG and JSON artifacts for a plan.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use obca_core::geometry::{ConvexObstacle, Point2, VehicleFootprint};
use obca_core::grid_search::Gear;
use obca_core::pipeline::PlanResult;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::jerk;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed CSV line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Svg,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "csv" => Ok(Format::Csv),
            "svg" => Ok(Format::Svg),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format {other:?}, expected csv, svg or json")),
        }
    }
}

pub const CSV_HEADER: &str = "k,t,x,y,v,phi,delta,a,jerk,gear";

/// One CSV line. Control columns are empty on the final state row and jerk
/// on the first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub k: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub phi: f64,
    pub delta: Option<f64>,
    pub a: Option<f64>,
    pub jerk: Option<f64>,
    pub gear: Gear,
}

pub fn csv_rows(result: &PlanResult) -> Vec<CsvRow> {
    let traj = &result.trajectory;
    let accel: Vec<f64> = traj.controls.iter().map(|c| c.acceleration).collect();
    let jerks = jerk(&accel, traj.dt);
    let gear_of = |k: usize| {
        result
            .gear_partitions
            .iter()
            .find(|r| (r.start..r.end).contains(&k))
            .map_or(Gear::Forward, |r| r.gear)
    };
    traj.states
        .iter()
        .enumerate()
        .map(|(k, s)| CsvRow {
            k,
            t: k as f64 * traj.dt,
            x: s.x,
            y: s.y,
            v: s.v,
            phi: s.phi,
            delta: traj.controls.get(k).map(|c| c.steering),
            a: traj.controls.get(k).map(|c| c.acceleration),
            jerk: k.checked_sub(1).and_then(|j| jerks.get(j)).copied(),
            gear: gear_of(k),
        })
        .collect()
}

fn gear_name(g: Gear) -> &'static str {
    match g {
        Gear::Forward => "forward",
        Gear::Reverse => "reverse",
    }
}

/// Rust's shortest round-trip float formatting keeps the CSV lossless.
pub fn trajectory_csv(result: &PlanResult) -> String {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in csv_rows(result) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.k,
            r.t,
            r.x,
            r.y,
            r.v,
            r.phi,
            opt(r.delta),
            opt(r.a),
            opt(r.jerk),
            gear_name(r.gear)
        );
    }
    out
}

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<CsvRow>, OutputError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(OutputError::Csv { line: 1, reason: "missing header".into() }),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = |reason: &str| OutputError::Csv { line: i + 1, reason: reason.into() };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(bad("expected 10 columns"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            Ok(CsvRow {
                k: f[0].parse().map_err(|_| bad("bad index"))?,
                t: num(f[1])?,
                x: num(f[2])?,
                y: num(f[3])?,
                v: num(f[4])?,
                phi: num(f[5])?,
                delta: opt(f[6])?,
                a: opt(f[7])?,
                jerk: opt(f[8])?,
                gear: match f[9] {
                    "forward" => Gear::Forward,
                    "reverse" => Gear::Reverse,
                    _ => return Err(bad("bad gear")),
                },
            })
        })
        .collect()
}

fn points(pts: &[Point2]) -> String {
    pts.iter().map(|p| format!("{:.4},{:.4}", p.x, p.y)).collect::<Vec<_>>().join(" ")
}

/// Top-down scene: one `obstacle` polygon per obstacle, `footprint`
/// snapshots every `footprint_every` states plus the last, and the `path`
/// polyline of rear-axle positions. World `y` points up.
pub fn scene_svg(
    result: &PlanResult,
    obstacles: &[ConvexObstacle],
    footprint: &VehicleFootprint,
    footprint_every: usize,
) -> String {
    let states = &result.trajectory.states;
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut grow = |p: Point2| {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    };
    obstacles.iter().flat_map(|o| o.vertices.iter()).for_each(|p| grow(*p));
    states.iter().for_each(|s| grow(Point2::new(s.x, s.y)));
    let pad = 1.0 + footprint.bounding_radius();
    let (w, h) = (hi.x - lo.x + 2.0 * pad, hi.y - lo.y + 2.0 * pad);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.3} {:.3} {:.3} {:.3}" width="{:.0}" height="{:.0}">"#,
        lo.x - pad,
        -(hi.y + pad),
        w,
        h,
        w * 30.0,
        h * 30.0
    );
    out.push_str("<g transform=\"scale(1,-1)\" stroke-width=\"0.05\">\n");
    for o in obstacles {
        let _ = writeln!(
            out,
            r##"<polygon class="obstacle" points="{}" fill="#888" stroke="#444"/>"##,
            points(&o.vertices)
        );
    }
    let every = footprint_every.max(1);
    for (k, s) in states.iter().enumerate() {
        if k % every == 0 || k + 1 == states.len() {
            let _ = writeln!(
                out,
                r##"<polygon class="footprint" points="{}" fill="none" stroke="#27c"/>"##,
                points(&footprint.at(s).vertices)
            );
        }
    }
    let path: Vec<Point2> = states.iter().map(|s| Point2::new(s.x, s.y)).collect();
    let _ = writeln!(
        out,
        r##"<polyline class="path" points="{}" fill="none" stroke="#d22"/>"##,
        points(&path)
    );
    out.push_str("</g>\n</svg>\n");
    out
}

/// Steering, acceleration and jerk traces against time, one panel each.
pub fn controls_svg(result: &PlanResult) -> String {
    let traj = &result.trajectory;
    let delta: Vec<f64> = traj.controls.iter().map(|c| c.steering).collect();
    let accel: Vec<f64> = traj.controls.iter().map(|c| c.acceleration).collect();
    let jerks = jerk(&accel, traj.dt);
    let panels = [("steering", &delta, 0usize), ("acceleration", &accel, 0), ("jerk", &jerks, 1)];
    let (width, height) = (600.0, 150.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}">"#,
        height * panels.len() as f64
    );
    let t_end = (traj.controls.len().max(2) - 1) as f64 * traj.dt;
    for (i, (name, values, offset)) in panels.iter().enumerate() {
        let top = i as f64 * height;
        let span = values.iter().fold(1e-9_f64, |m, v| m.max(v.abs()));
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let t = (k + offset) as f64 * traj.dt;
                let px = 40.0 + (width - 50.0) * t / t_end;
                let py = top + height / 2.0 - (height / 2.0 - 15.0) * v / span;
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r##"<text x="4" y="{:.0}" font-size="12">{name} (max |.| {span:.3})</text>"##,
            top + 14.0
        );
        let _ = writeln!(
            out,
            r##"<line x1="40" x2="{0}" y1="{1:.1}" y2="{1:.1}" stroke="#ccc"/>"##,
            width - 10.0,
            top + height / 2.0
        );
        let _ = writeln!(
            out,
            r##"<polyline class="{name}" points="{}" fill="none" stroke="#27c"/>"##,
            pts.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn result_json(result: &PlanResult) -> String {
    serde_json::to_string_pretty(result).expect("plan results serialize")
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, OutputError> {
    std::fs::write(&path, text).map_err(|source| OutputError::Io { path: path.display().to_string(), source })?;
    Ok(path)
}

/// Writes `<stem>.csv`, `<stem>.svg` plus `<stem>_controls.svg`, and
/// `<stem>.json` into `dir` as requested.
pub fn emit_outputs(
    result: &PlanResult,
    obstacles: &[ConvexObstacle],
    footprint: &VehicleFootprint,
    dir: &Path,
    stem: &str,
    formats: &[Format],
) -> Result<Vec<PathBuf>, OutputError> {
    std::fs::create_dir_all(dir).map_err(|source| OutputError::Io { path: dir.display().to_string(), source })?;
    let mut written = Vec::new();
    for f in formats {
        match f {
            Format::Csv => written.push(write(dir.join(format!("{stem}.csv")), &trajectory_csv(result))?),
            Format::Svg => {
                written.push(write(dir.join(format!("{stem}.svg")), &scene_svg(result, obstacles, footprint, 10))?);
                written.push(write(dir.join(format!("{stem}_controls.svg")), &controls_svg(result))?);
            }
            Format::Json => written.push(write(dir.join(format!("{stem}.json")), &result_json(result))?),
        }
    }
    Ok(written)
}
