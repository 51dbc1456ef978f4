//! Command-line frontend: solve runs, refinement studies, the property
//! checker, and trajectory batches. All artifacts are plain CSV/JSON under
//! the chosen output directory (fields/, reports/, trajectories/), floats
//! printed with 17 significant digits so downstream order computations are
//! not rounding-limited.
//!
//! Exit codes: 0 success, 1 property-check failure, 2 configuration error,
//! 3 runtime (solver) error.

use crate::analysis;
use crate::geometry::Mesh;
use crate::operator::Fault;
use crate::problems::{builtin, BuiltinParams, ProblemSpec};
use crate::solver::{solve, Solution, SolveOptions};
use crate::trajectories::{self, Feedback, SimOptions};
use crate::{Error, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "hjb-sl",
    version,
    about = "Semi-Lagrangian solver for controlled degenerate diffusions with Dirichlet exit costs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve a built-in problem and write value fields plus a summary.
    Solve(SolveArgs),
    /// Refinement study: halve dx per level, report errors and orders.
    Converge(ConvergeArgs),
    /// Run the structural property checker; nonzero exit on any failure.
    Check(CheckArgs),
    /// Simulate feedback-controlled trajectories from the solved field.
    Trajectories(TrajArgs),
}

#[derive(Args, Clone)]
struct ProblemFlags {
    /// Built-in problem: test1, test2, test3, test4.
    #[arg(long)]
    problem: String,
    /// Viscosity of test1.
    #[arg(long, default_value_t = 0.1)]
    nu: f64,
    /// Lattice points per dimension for box control sets.
    #[arg(long, default_value_t = 21)]
    control_points: usize,
    /// Rings for ball control sets.
    #[arg(long, default_value_t = 8)]
    rings: usize,
    /// Angles per ring for ball control sets.
    #[arg(long, default_value_t = 24)]
    angles: usize,
}

impl ProblemFlags {
    fn build(&self) -> Result<ProblemSpec> {
        builtin(
            &self.problem,
            &BuiltinParams {
                nu: self.nu,
                box_points: self.control_points,
                rings: self.rings,
                angles: self.angles,
            },
        )
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemFlags,
    /// Target mesh spacing.
    #[arg(long)]
    dx: Option<f64>,
    /// Load the mesh from a file instead of generating one.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Time step (mutually exclusive with --cfl).
    #[arg(long)]
    dt: Option<f64>,
    /// Time step as a multiple of dx (mutually exclusive with --dt).
    #[arg(long)]
    cfl: Option<f64>,
    /// Times at which to write value-field CSVs.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    times: Vec<f64>,
    /// Worker threads; 0 uses all cores. Default from HJB_SL_WORKERS.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ConvergeArgs {
    #[command(flatten)]
    problem: ProblemFlags,
    /// Coarsest spacing; each level halves it.
    #[arg(long)]
    dx0: f64,
    /// Number of refinement levels.
    #[arg(long, default_value_t = 4)]
    levels: usize,
    /// dt = cfl * dx on every level.
    #[arg(long, default_value_t = 1.0)]
    cfl: f64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Restrict the suite to one problem (default: all four).
    #[arg(long)]
    problem: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    nu: f64,
    /// Ordered field pairs per monotonicity check.
    #[arg(long, default_value_t = 1000)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    /// Corrupt a branch weight on purpose; the checker must then fail.
    #[arg(long, hide = true)]
    fault_gamma_flip: bool,
}

#[derive(Args)]
struct TrajArgs {
    #[command(flatten)]
    problem: ProblemFlags,
    /// Target mesh spacing; defaults to the room problem's reference
    /// resolution sqrt(2)/50.
    #[arg(long)]
    dx: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// dt = cfl * dx; defaults to 1 if neither --dt nor --cfl is given.
    #[arg(long)]
    cfl: Option<f64>,
    /// Start points as "x1,x2;x1,x2;..."; defaults to the six room starts.
    #[arg(long, allow_hyphen_values = true)]
    starts: Option<String>,
    /// Base seed; trajectory i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Euler substep; defaults to dt/2.
    #[arg(long)]
    substep: Option<f64>,
    /// Disable the diffusion: deterministic paths, seed-independent.
    #[arg(long)]
    sigma_off: bool,
    /// Feedback law: gradient (projected -grad V) or argmin (stored controls).
    #[arg(long, default_value = "gradient")]
    feedback: String,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Parse and execute; returns the process exit code. Tests call this
/// in-process instead of spawning the binary.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.cmd {
        Cmd::Solve(a) => cmd_solve(a),
        Cmd::Converge(a) => cmd_converge(a),
        Cmd::Check(a) => cmd_check(a),
        Cmd::Trajectories(a) => cmd_trajectories(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 2,
                _ => 3,
            }
        }
    }
}

fn workers_from(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("HJB_SL_WORKERS")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(0)
}

/// dx or mesh file, dt or cfl against the effective spacing.
fn resolve_mesh_and_dt(
    spec: &ProblemSpec,
    dx: Option<f64>,
    mesh_path: Option<&Path>,
    dt: Option<f64>,
    cfl: Option<f64>,
) -> Result<(Arc<Mesh>, f64, f64)> {
    let (mesh, dx_eff) = match (mesh_path, dx) {
        (Some(path), _) => {
            let mesh = crate::geometry::load_mesh(path)?;
            let dx = mesh.dx();
            (mesh, dx)
        }
        (None, Some(dx)) => (spec.build_mesh(dx)?, dx),
        (None, None) => {
            return Err(Error::Config("give either --dx or --mesh".into()));
        }
    };
    let dt = match (dt, cfl) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "--dt and --cfl are mutually exclusive".into(),
            ))
        }
        (Some(dt), None) => dt,
        (None, Some(c)) => c * dx_eff,
        (None, None) => return Err(Error::Config("give exactly one of --dt or --cfl".into())),
    };
    Ok((Arc::new(mesh), dx_eff, dt))
}

fn write(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

fn solve_summary(
    spec: &ProblemSpec,
    sol: &Solution,
    dx: f64,
    dt_requested: f64,
    workers: usize,
    cfl: Option<f64>,
) -> serde_json::Value {
    let stability_bound = spec.psi_sup + spec.problem.horizon * spec.f_sup;
    serde_json::json!({
        "problem": spec.name,
        "params": spec.params,
        "controls": spec.problem.controls.descriptor(),
        "n_controls": spec.problem.controls.len(),
        "theory_covered": spec.theory_covered,
        "mesh": {
            "nodes": sol.mesh().n_vertices(),
            "elements": sol.mesh().n_elements(),
            "dx_requested": dx,
            "dx": sol.mesh().dx(),
        },
        "dt_requested": dt_requested,
        "dt": sol.dt(),
        "dt_adjusted": sol.dt_adjusted,
        "cfl": cfl,
        "n_steps": sol.n_steps(),
        "workers": workers,
        "used_cache": sol.used_cache,
        "wall_seconds": sol.wall_seconds,
        "sup_norm": sol.sup_norm(),
        "stability_bound": stability_bound,
    })
}

fn cmd_solve(args: SolveArgs) -> Result<i32> {
    let spec = args.problem.build()?;
    let (mesh, dx_eff, dt) =
        resolve_mesh_and_dt(&spec, args.dx, args.mesh.as_deref(), args.dt, args.cfl)?;
    let workers = workers_from(args.workers);
    let opts = SolveOptions {
        workers,
        ..Default::default()
    };
    let sol = solve(&spec.problem, mesh, dt, &opts)?;

    for &t in &args.times {
        let k = sol
            .level_index_of(t)
            .map_err(|_| Error::Config(format!("time {t} outside [0, {}]", sol.horizon())))?;
        let field = sol.field(k)?;
        let path = args
            .out
            .join("fields")
            .join(format!("{}_t{:.6}.csv", spec.name, t));
        write(&path, &field.to_csv())?;
        println!("wrote {}", path.display());
    }
    let summary = solve_summary(&spec, &sol, dx_eff, dt, workers, args.cfl);
    let path = args
        .out
        .join("reports")
        .join(format!("{}_solve_summary.json", spec.name));
    write(
        &path,
        &serde_json::to_string_pretty(&summary).expect("json"),
    )?;
    println!("wrote {}", path.display());
    println!(
        "solved {}: {} nodes, {} steps, sup|V| = {:.6}, {:.2}s",
        spec.name,
        sol.mesh().n_vertices(),
        sol.n_steps(),
        sol.sup_norm(),
        sol.wall_seconds
    );
    Ok(0)
}

fn cmd_converge(args: ConvergeArgs) -> Result<i32> {
    let spec = args.problem.build()?;
    let opts = SolveOptions {
        workers: workers_from(args.workers),
        ..Default::default()
    };
    let report = analysis::refine_study(&spec, args.dx0, args.levels, args.cfl, &opts)?;
    let csv = report.to_csv();
    print!("{csv}");
    let base = args.out.join("reports");
    let csv_path = base.join(format!("{}_convergence.csv", spec.name));
    write(&csv_path, &csv)?;
    let json_path = base.join(format!("{}_convergence.json", spec.name));
    write(&json_path, &report.to_json())?;
    println!("wrote {}", csv_path.display());
    println!("wrote {}", json_path.display());
    Ok(0)
}

fn cmd_check(args: CheckArgs) -> Result<i32> {
    let params = BuiltinParams {
        nu: args.nu,
        ..Default::default()
    };
    let names: Vec<&str> = match &args.problem {
        Some(name) => vec![name.as_str()],
        None => vec!["test1", "test2", "test3", "test4"],
    };
    let fault = if args.fault_gamma_flip {
        Fault::FlipGammaMinus
    } else {
        Fault::None
    };
    let opts = SolveOptions {
        workers: workers_from(args.workers),
        ..Default::default()
    };
    let mut outcomes = Vec::new();

    outcomes.push(analysis::property_weight_identities(10_000, args.seed));
    outcomes.push(analysis::property_unconstrained_reduction(
        200,
        args.seed ^ 0x5eed,
    )?);
    for name in &names {
        let spec = builtin(name, &params)?;
        // Coarse per-problem scale: spacing and step sized to the domain.
        let (dx, dt) = match *name {
            "test1" => (0.05, 0.05),
            "test2" => (0.25, 0.125),
            "test3" => (0.1, 0.05),
            _ => (2f64.sqrt() / 25.0, 0.05),
        };
        outcomes.push(analysis::property_monotonicity_with(
            &spec, dx, dt, args.pairs, args.seed, fault,
        )?);
        outcomes.push(analysis::property_constant_addition_with(
            &spec, dx, dt, args.pairs, args.seed, fault,
        )?);
        outcomes.push(analysis::property_stability(
            &spec,
            &[dx, dx / 2.0],
            0.5,
            &opts,
        )?);
    }
    if args.problem.as_deref().is_none_or(|p| p == "test2") {
        let spec = builtin("test2", &params)?;
        let (decay, _) = analysis::property_consistency_decay(&spec, &[0.5, 0.25, 0.125, 0.0625])?;
        outcomes.push(decay);
    }

    let mut failures = 0;
    for outcome in &outcomes {
        println!("{outcome}");
        if !outcome.passed {
            failures += 1;
        }
    }
    if failures > 0 {
        println!("{failures} of {} properties failed", outcomes.len());
        Ok(1)
    } else {
        println!("all {} properties passed", outcomes.len());
        Ok(0)
    }
}

fn parse_starts(raw: &str, dim: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for part in raw.split(';') {
        let coords: Vec<f64> = part
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad start point {part:?}: {e}")))?;
        if coords.len() != dim {
            return Err(Error::Config(format!(
                "start point {part:?} has {} coordinates, expected {dim}",
                coords.len()
            )));
        }
        out.push(coords);
    }
    Ok(out)
}

fn cmd_trajectories(args: TrajArgs) -> Result<i32> {
    let mut spec = args.problem.build()?;
    if args.sigma_off {
        // Solve and simulate the deterministic variant consistently.
        spec.problem.diffusion = Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0));
    }
    let feedback = match args.feedback.as_str() {
        "gradient" => Feedback::Gradient,
        "argmin" => Feedback::ArgminControl,
        other => return Err(Error::Config(format!("unknown feedback law {other:?}"))),
    };
    let dx = args.dx.unwrap_or(2f64.sqrt() / 50.0);
    let cfl = match (args.dt, args.cfl) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "--dt and --cfl are mutually exclusive".into(),
            ))
        }
        (None, None) => Some(1.0),
        (_, c) => c,
    };
    let (mesh, dx_eff, dt) = resolve_mesh_and_dt(&spec, Some(dx), None, args.dt, cfl)?;
    let workers = workers_from(args.workers);
    let opts = SolveOptions {
        workers,
        store_controls: feedback == Feedback::ArgminControl,
        ..Default::default()
    };
    let sol = solve(&spec.problem, mesh, dt, &opts)?;

    let starts: Vec<Vec<f64>> = match &args.starts {
        Some(raw) => parse_starts(raw, spec.problem.domain.dim())?,
        None => trajectories::ROOM_STARTS
            .iter()
            .map(|p| p.to_vec())
            .collect(),
    };
    let sim_opts = SimOptions {
        seed: args.seed,
        substep: args.substep,
        sigma_off: args.sigma_off,
        feedback,
    };
    let records = trajectories::simulate_batch(&sol, &spec, &starts, args.seed, &sim_opts)?;

    let dir = args.out.join("trajectories");
    for (i, record) in records.iter().enumerate() {
        let path = dir.join(format!("{}_traj_{i}.csv", spec.name));
        write(&path, &record.to_csv())?;
        let status = match &record.terminal {
            trajectories::Terminal::Exited { time, label, .. } => {
                format!("exited through {label} at t = {time:.4}")
            }
            trajectories::Terminal::Horizon => "reached the horizon".to_string(),
        };
        println!(
            "trajectory {i} from {:?} (seed {}): {status}, total cost {:.4}",
            record.x0,
            record.seed,
            record.total_cost()
        );
    }
    let mut summary: serde_json::Value =
        serde_json::from_str(&trajectories::batch_summary_json(&records)).expect("json");
    summary["problem"] = spec.name.clone().into();
    summary["dx"] = dx_eff.into();
    summary["dt"] = sol.dt().into();
    summary["base_seed"] = args.seed.into();
    summary["sigma_off"] = args.sigma_off.into();
    summary["feedback"] = args.feedback.clone().into();
    let path = dir.join(format!("{}_batch.json", spec.name));
    write(
        &path,
        &serde_json::to_string_pretty(&summary).expect("json"),
    )?;
    println!("wrote {}", path.display());
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn start_point_parsing() {
        let pts = parse_starts("-0.1,-0.3; 0.2,0.3", 2).unwrap();
        assert_eq!(pts, vec![vec![-0.1, -0.3], vec![0.2, 0.3]]);
        assert!(parse_starts("0.1", 2).is_err());
        assert!(parse_starts("a,b", 2).is_err());
    }

    #[test]
    fn worker_flag_beats_environment() {
        assert_eq!(workers_from(Some(3)), 3);
    }

    #[test]
    fn dt_cfl_exclusivity() {
        let spec = builtin("test1", &BuiltinParams::default()).unwrap();
        assert!(resolve_mesh_and_dt(&spec, Some(0.1), None, Some(0.1), Some(1.0)).is_err());
        assert!(resolve_mesh_and_dt(&spec, Some(0.1), None, None, None).is_err());
        assert!(resolve_mesh_and_dt(&spec, None, None, Some(0.1), None).is_err());
        let (mesh, dx, dt) = resolve_mesh_and_dt(&spec, Some(0.1), None, None, Some(0.5)).unwrap();
        assert_eq!(mesh.n_vertices(), 11);
        assert_eq!(dx, 0.1);
        assert_eq!(dt, 0.05);
    }
}
