use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use obca_core::nlp_mpc::{verify_solution, Mode, SolveStatus};
use obca_core::pipeline::{plan_with_profile, PlanResult};
use obca_harness::experiments::{run_grid_experiment, run_scaling_experiment, AxisRange, ScalingCase};
use obca_harness::gallery::{bundled, GALLERY};
use obca_harness::metrics::compare_metrics;
use obca_harness::output::{emit_outputs, Format};
use obca_harness::scenario::ScenarioFile;
use serde_json::Value;

/// Free-space trajectory planner: single plans, the grid-of-starts and
/// timing experiments, and solution audits.
#[derive(Parser)]
#[command(name = "obca", version)]
struct Cli {
    /// JSON file overriding planner settings (`mpc`, `grid`, `profile`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one scenario and write the requested artifacts.
    Plan {
        /// Scenario file, or the name of a bundled scenario.
        scenario: String,
        #[arg(long, default_value = "tdr")]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "csv,svg,json")]
        format: Vec<Format>,
    },
    /// Plan from every start of a grid (heading zero) in every mode.
    Grid {
        scenario: String,
        #[arg(long, default_value = "-10:1:10", allow_hyphen_values = true)]
        x: AxisRange,
        #[arg(long, default_value = "2:0.5:4", allow_hyphen_values = true)]
        y: AxisRange,
        #[arg(long, value_delimiter = ',', default_value = "base,td,tdr")]
        modes: Vec<Mode>,
        /// Write the full report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time every scenario in a directory under each mode.
    Scale {
        dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "base,tdr")]
        modes: Vec<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-audit a saved plan against its scenario.
    Check { result: PathBuf, scenario: String },
    /// Write the bundled scenarios to a directory.
    Gallery { out: PathBuf },
}

type Failure = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(arg: &str) -> Result<ScenarioFile, Failure> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(file) = bundled(arg) {
            return Ok(file);
        }
    }
    Ok(ScenarioFile::load(path)?)
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    Ok(())
}

/// Whether every requested plan succeeded.
fn run(cli: Cli) -> Result<bool, Failure> {
    let overrides = cli.config.as_deref().map(read_json).transpose()?;
    match cli.command {
        Command::Plan { scenario, mode, out, format } => {
            let file = load_scenario(&scenario)?;
            let sc = file.scenario()?;
            let mut planner = file.planner_config(overrides.as_ref())?;
            planner.mpc.mode = mode;
            let result = plan_with_profile(&sc, &planner.grid, &planner.mpc, &planner.profile);
            let result = match result {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("plan failed at {}: {e}", e.stage());
                    return Ok(false);
                }
            };
            print_plan(&result);
            if let Some(dir) = out {
                let stem = if file.name.is_empty() { "plan" } else { file.name.as_str() };
                let obstacles = sc.all_obstacles()?;
                for p in emit_outputs(&result, &obstacles, &sc.footprint, &dir, stem, &format)? {
                    println!("wrote {}", p.display());
                }
            }
            Ok(result.succeeded())
        }
        Command::Grid { scenario, x, y, modes, out } => {
            let file = load_scenario(&scenario)?;
            let sc = file.scenario()?;
            let planner = file.planner_config(overrides.as_ref())?;
            let report = run_grid_experiment(&sc, x, y, &modes, &planner);
            print!("{}", report.table());
            if let Some((base, tdr)) = report.paired_metrics(Mode::Base, Mode::Tdr) {
                let [s, a, j] = compare_metrics(&base, &tdr);
                println!(
                    "over {} starts where base and tdr succeed: mean |steering| {:.4} -> {:.4} ({s:.2}%), |a| {:.4} -> {:.4} ({a:.2}%), |jerk| {:.4} -> {:.4} ({j:.2}%)",
                    base.successes,
                    base.steering.mean,
                    tdr.steering.mean,
                    base.acceleration.mean,
                    tdr.acceleration.mean,
                    base.jerk.mean,
                    tdr.jerk.mean
                );
            }
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            Ok(report.summary.iter().all(|s| s.failures == 0))
        }
        Command::Scale { dir, modes, out } => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|e| format!("cannot read {}: {e}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(format!("no scenario files in {}", dir.display()).into());
            }
            let cases = paths
                .iter()
                .map(|p| -> Result<ScalingCase, Failure> {
                    let file = ScenarioFile::load(p)?;
                    let (n_oa, n_ob) = file.edge_counts();
                    let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    Ok(ScalingCase {
                        name,
                        n_oa,
                        n_ob,
                        scenario: file.scenario()?,
                        planner: file.planner_config(overrides.as_ref())?,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let report = run_scaling_experiment(&cases, &modes);
            print!("{}", report.table());
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            Ok(report.rows.iter().flat_map(|r| &r.entries).all(|e| e.times.is_some()))
        }
        Command::Check { result, scenario } => {
            let plan: PlanResult = serde_json::from_value(read_json(&result)?)?;
            let sc = load_scenario(&scenario)?.scenario()?;
            let obstacles = sc.all_obstacles()?;
            let traj = &plan.trajectory;
            let audit = verify_solution(traj, &obstacles, &sc.footprint, &sc.limits, traj.dt);
            println!("status {:?}", traj.report.status);
            println!("max dynamics residual {:.3e}", audit.max_dynamics_residual);
            println!(
                "dynamics {} limits {} collisions {} certificates {}",
                audit.dynamics_violations.len(),
                audit.limit_violations.len(),
                audit.collisions.len(),
                audit.certificate_violations.len()
            );
            if let Some(d) = audit.min_distance {
                println!("min distance {d:.4}");
            }
            Ok(traj.report.status == SolveStatus::Optimal && audit.is_clean())
        }
        Command::Gallery { out } => {
            std::fs::create_dir_all(&out).map_err(|e| format!("cannot create {}: {e}", out.display()))?;
            for (name, text) in GALLERY {
                let path = out.join(format!("{name}.json"));
                std::fs::write(&path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
                println!("wrote {}", path.display());
            }
            Ok(true)
        }
    }
}

fn print_plan(r: &PlanResult) {
    let t = &r.timings;
    println!("mode {} status {:?} succeeded {}", r.mode.name(), r.status, r.succeeded());
    println!(
        "iterations {} objective {:.6} steps {} dt {:.4}",
        r.trajectory.report.iterations,
        r.trajectory.report.objective,
        r.trajectory.controls.len(),
        r.trajectory.dt
    );
    println!(
        "timings: coarse {:.3}s profile {:.3}s dual {:.3}s mpc {:.3}s total {:.3}s per frame {:.4}s",
        t.coarse_search, t.temporal_profile, t.dual_warm_start, t.mpc, t.total, t.per_frame
    );
    if !r.audit.is_clean() {
        println!("audit: {:?}", r.audit);
    }
}
