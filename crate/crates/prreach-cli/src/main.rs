//! Command-line front end: hazard-grid synthesis, polynomial fitting,
//! risk-bounded gain optimization, verification, reach-set dumps and the
//! offline/online experiments.
//!
//! Exit codes: 0 success, 1 i/o failure, 2 usage error, 3 infeasible or
//! numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use prreach::config::RunConfig;
use prreach::dynamics::{closed_loop, GainMatrix, STATE_DIM};
use prreach::hazard::{
    fit_poly, load_grid_path, synth_grid, LinearFormPoly, SynthExtent, SynthKind,
};
use prreach::optimizer::{solve, verify, SolveStatus};
use prreach::reach::propagate;
use prreach::sim::{
    default_experiment_maps, run_offline_experiment, run_online_experiment, ExperimentContext,
};
use prreach::Zonotope;

#[derive(Parser)]
#[command(
    name = "prreach",
    about = "Probabilistic risk assessment of UAV flight plans via zonotope reachability",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hazard grid CSV.
    SynthHazard(SynthHazardArgs),
    /// Fit a sum-of-powers polynomial to a hazard grid.
    Fit(FitArgs),
    /// Solve the risk-bounded gain optimization for one hazard cause.
    Optimize(OptimizeArgs),
    /// Re-propagate a solution's closed loop and check the thresholds.
    Verify(VerifyArgs),
    /// Dump per-step reach-set polygons as JSON lines.
    ReachDump(ReachDumpArgs),
    /// Run the offline or online experiment and write the report.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GridKind {
    Constant,
    Ramp,
    GaussianBlobs,
}

#[derive(Args)]
struct SynthHazardArgs {
    #[arg(long, value_enum)]
    kind: GridKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extent as x_min,x_max,y_min,y_max.
    #[arg(long, default_value = "0,10,0,10", value_parser = parse_extent)]
    extent: [f64; 4],
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    /// Constant value (constant kind).
    #[arg(long, default_value_t = 0.2)]
    value: f64,
    /// Ramp coefficients gx,gy,offset (ramp kind).
    #[arg(long, default_value = "0.05,0,0", value_parser = parse_triple)]
    ramp: [f64; 3],
    /// Blob count (gaussian-blobs kind).
    #[arg(long, default_value_t = 3)]
    blobs: usize,
    #[arg(long, default_value_t = 0.5)]
    amplitude: f64,
    #[arg(long, default_value_t = 1.5)]
    sigma: f64,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    degree: u32,
    #[arg(long, default_value_t = 2)]
    terms_per_degree: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional fit-report JSON path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CauseArg {
    DeficientRotor,
    SensorError,
    Wind,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    cause: CauseArg,
    /// Fitted hazard map JSON; defaults to the bundled synthetic person map.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Solve online from this onset step with the remaining horizon.
    #[arg(long)]
    online_from: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    cause: CauseArg,
    #[arg(long)]
    map: Option<PathBuf>,
    /// Solution JSON produced by `optimize`.
    #[arg(long)]
    solution: PathBuf,
    /// Risk-profile CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReachDumpArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    cause: CauseArg,
    /// Optional solution JSON; the baseline LQR loop is dumped otherwise.
    #[arg(long)]
    solution: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentMode {
    Offline,
    Online,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    mode: ExperimentMode,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Online flight count; the config value is used when absent.
    #[arg(long)]
    flights: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_extent(s: &str) -> Result<[f64; 4], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if parts.len() != 4 {
        return Err("extent needs exactly 4 comma-separated numbers".to_string());
    }
    Ok([parts[0], parts[1], parts[2], parts[3]])
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if parts.len() != 3 {
        return Err("expected 3 comma-separated numbers".to_string());
    }
    Ok([parts[0], parts[1], parts[2]])
}

/// Failure modes mapped onto exit codes.
enum CliError {
    Io(String),
    Numerical(String),
    Infeasible,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Numerical(_) | CliError::Infeasible => 3,
        }
    }
}

fn io_err<E: std::fmt::Display>(context: String) -> impl Fn(E) -> CliError {
    move |e| CliError::Io(format!("{context}: {e}"))
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    RunConfig::from_json(&text)
        .map_err(|e| CliError::Io(format!("cannot parse config {}: {e}", path.display())))
}

fn load_map(path: &Path) -> Result<LinearFormPoly, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read map {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Io(format!("cannot parse map {}: {e}", path.display())))
}

fn context_with_map(
    cfg: &RunConfig,
    map: &Option<PathBuf>,
) -> Result<(ExperimentContext, LinearFormPoly), CliError> {
    let poly = match map {
        Some(path) => load_map(path)?,
        None => {
            default_experiment_maps(cfg.seed)
                .map_err(|e| CliError::Numerical(e.to_string()))?
                .remove(0)
                .1
        }
    };
    let ctx = ExperimentContext::new(cfg, vec![("map".to_string(), poly.clone())])
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok((ctx, poly))
}

fn cause_index(cause: CauseArg) -> usize {
    match cause {
        CauseArg::DeficientRotor => 0,
        CauseArg::SensorError => 1,
        CauseArg::Wind => 2,
    }
}

fn cmd_synth_hazard(args: &SynthHazardArgs) -> Result<(), CliError> {
    let kind = match args.kind {
        GridKind::Constant => SynthKind::Constant { value: args.value },
        GridKind::Ramp => SynthKind::Ramp {
            gx: args.ramp[0],
            gy: args.ramp[1],
            offset: args.ramp[2],
        },
        GridKind::GaussianBlobs => SynthKind::GaussianBlobs {
            count: args.blobs,
            amplitude: args.amplitude,
            sigma: args.sigma,
        },
    };
    let extent = SynthExtent {
        x_min: args.extent[0],
        x_max: args.extent[1],
        y_min: args.extent[2],
        y_max: args.extent[3],
        spacing: args.spacing,
    };
    let grid =
        synth_grid(&kind, &extent, args.seed).map_err(|e| CliError::Numerical(e.to_string()))?;
    let file = std::fs::File::create(&args.out)
        .map_err(io_err(format!("cannot create {}", args.out.display())))?;
    grid.write_csv(file)
        .map_err(io_err("cannot write grid CSV".to_string()))?;
    println!(
        "wrote {} cells to {}",
        grid.cells().len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    let grid = load_grid_path(&args.grid).map_err(|e| CliError::Io(e.to_string()))?;
    let (poly, report) = fit_poly(&grid, args.degree, args.terms_per_degree, args.seed)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let json =
        serde_json::to_string_pretty(&poly).map_err(io_err("cannot serialize map".to_string()))?;
    std::fs::write(&args.out, json)
        .map_err(io_err(format!("cannot write {}", args.out.display())))?;
    println!(
        "fit: rmse {:.6e}, max abs error {:.6e}, {} training cells ({} outside H), {} clamp warnings",
        report.rmse,
        report.max_abs_error,
        report.training_cells,
        report.indicator_cells,
        report.clamp_warnings
    );
    if let Some(path) = &args.report {
        let json = serde_json::to_string_pretty(&report)
            .map_err(io_err("cannot serialize report".to_string()))?;
        std::fs::write(path, json).map_err(io_err(format!("cannot write {}", path.display())))?;
    }
    Ok(())
}

fn cmd_optimize(args: &OptimizeArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    let (ctx, poly) = context_with_map(&cfg, &args.map)?;
    let cause = &ctx.causes[cause_index(args.cause)];
    let spec = match args.online_from {
        None => ctx
            .offline_problem(cause, &poly)
            .map_err(|e| CliError::Numerical(e.to_string()))?,
        Some(onset) => {
            if onset == 0 || onset >= ctx.horizon {
                return Err(CliError::Io(format!(
                    "--online-from must lie in 1..{}",
                    ctx.horizon - 1
                )));
            }
            // online from the nominal plan position at the onset step
            let plan = ctx
                .thresholds_from(&ctx.x0, ctx.horizon, &poly)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let d_nom = closed_loop(&ctx.nominal, &ctx.nominal_gain)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let zero = Zonotope::point(DVector::zeros(STATE_DIM));
            let seq = propagate(
                &d_nom,
                &ctx.x0,
                &zero,
                onset,
                &ctx.pipeline.propagate_opts(),
            )
            .map_err(|e| CliError::Numerical(e.to_string()))?;
            let e_onset = seq.set(onset).center().clone();
            ctx.online_problem(cause, &poly, &e_onset, onset, &plan, &cause.gain)
                .map_err(|e| CliError::Numerical(e.to_string()))?
        }
    };
    let solution = solve(&spec, &ctx.solver).map_err(|e| CliError::Numerical(e.to_string()))?;
    let mut value =
        serde_json::to_value(&solution).map_err(io_err("cannot serialize solution".to_string()))?;
    if let serde_json::Value::Object(map) = &mut value {
        map.insert(
            "horizon".to_string(),
            serde_json::Value::from(spec.horizon()),
        );
        map.insert(
            "cause".to_string(),
            serde_json::Value::from(cause.cause.label()),
        );
    }
    let json = serde_json::to_string_pretty(&value)
        .map_err(io_err("cannot serialize solution".to_string()))?;
    std::fs::write(&args.out, json)
        .map_err(io_err(format!("cannot write {}", args.out.display())))?;
    println!(
        "status {:?}, objective |D-D0|_F {:.6}, |K0-K'|_F {:.6}, {} iterations, {:.3}s",
        solution.status,
        solution.objective_closed_loop,
        solution.objective_gain,
        solution.iterations,
        solution.runtime_seconds
    );
    if matches!(
        solution.status,
        SolveStatus::Infeasible | SolveStatus::MaxIter
    ) {
        return Err(CliError::Infeasible);
    }
    Ok(())
}

fn load_solution_gain(path: &Path) -> Result<GainMatrix, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read solution {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Io(format!("cannot parse solution {}: {e}", path.display())))?;
    let rows = value
        .get("k_prime")
        .and_then(|v| v.as_array())
        .ok_or_else(|| CliError::Io("solution JSON lacks k_prime".to_string()))?;
    let nrows = rows.len();
    let ncols = rows
        .first()
        .and_then(|r| r.as_array())
        .map(|r| r.len())
        .unwrap_or(0);
    let mut k = nalgebra::DMatrix::zeros(nrows, ncols);
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| CliError::Io("k_prime rows must be arrays".to_string()))?;
        for (j, v) in row.iter().enumerate() {
            k[(i, j)] = v
                .as_f64()
                .ok_or_else(|| CliError::Io("k_prime entries must be numbers".to_string()))?;
        }
    }
    Ok(GainMatrix(k))
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    let (ctx, poly) = context_with_map(&cfg, &args.map)?;
    let cause = &ctx.causes[cause_index(args.cause)];
    let gain = load_solution_gain(&args.solution)?;
    let spec = ctx
        .offline_problem(cause, &poly)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let (profile, feasible, degenerate) =
        verify(&spec, &gain).map_err(|e| CliError::Numerical(e.to_string()))?;
    println!(
        "feasible: {feasible}; degenerate projections: {degenerate}; max per-step risk {:.6}",
        profile.per_step().iter().cloned().fold(0.0, f64::max)
    );
    if let Some(path) = &args.out {
        let file = std::fs::File::create(path)
            .map_err(io_err(format!("cannot create {}", path.display())))?;
        profile
            .write_csv(file)
            .map_err(io_err("cannot write profile CSV".to_string()))?;
    }
    if !feasible {
        return Err(CliError::Infeasible);
    }
    Ok(())
}

fn cmd_reach_dump(args: &ReachDumpArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    let (ctx, _poly) = context_with_map(&cfg, &None)?;
    let cause = &ctx.causes[cause_index(args.cause)];
    let gain = match &args.solution {
        Some(path) => load_solution_gain(path)?,
        None => cause.gain.clone(),
    };
    let d = closed_loop(&cause.model, &gain).map_err(|e| CliError::Numerical(e.to_string()))?;
    let seq = propagate(
        &d,
        &ctx.x0,
        &cause.disturbance,
        ctx.horizon,
        &ctx.pipeline.propagate_opts(),
    )
    .map_err(|e| CliError::Numerical(e.to_string()))?;
    let file = std::fs::File::create(&args.out)
        .map_err(io_err(format!("cannot create {}", args.out.display())))?;
    seq.write_jsonl(file)
        .map_err(io_err("cannot write reach dump".to_string()))?;
    println!(
        "wrote {} reach-set records to {}",
        ctx.horizon,
        args.out.display()
    );
    Ok(())
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(io_err(format!("cannot create {}", args.out_dir.display())))?;
    // probe writability up front so a bad output dir fails before the solves
    let probe = args.out_dir.join(".write_probe");
    std::fs::write(&probe, b"").map_err(io_err(format!(
        "output dir {} not writable",
        args.out_dir.display()
    )))?;
    let _ = std::fs::remove_file(&probe);
    let maps = if cfg.maps.is_empty() {
        default_experiment_maps(cfg.seed).map_err(|e| CliError::Numerical(e.to_string()))?
    } else {
        let mut maps = Vec::new();
        for map_ref in &cfg.maps {
            maps.push((map_ref.name.clone(), load_map(Path::new(&map_ref.path))?));
        }
        maps
    };
    let ctx = ExperimentContext::new(&cfg, maps).map_err(|e| CliError::Numerical(e.to_string()))?;
    let report = match args.mode {
        ExperimentMode::Offline => {
            let outcome =
                run_offline_experiment(&ctx).map_err(|e| CliError::Numerical(e.to_string()))?;
            write_plot_data(&ctx, &outcome.artifacts, &args.out_dir)?;
            outcome.report
        }
        ExperimentMode::Online => {
            let flights = args.flights.unwrap_or(cfg.flights);
            let seed = args.seed.unwrap_or(cfg.seed);
            run_online_experiment(&ctx, flights, seed)
                .map_err(|e| CliError::Numerical(e.to_string()))?
        }
    };
    let json_path = args.out_dir.join(format!("{}_report.json", report.mode));
    let md_path = args.out_dir.join(format!("{}_report.md", report.mode));
    let json = serde_json::to_string_pretty(&report)
        .map_err(io_err("cannot serialize report".to_string()))?;
    std::fs::write(&json_path, json)
        .map_err(io_err(format!("cannot write {}", json_path.display())))?;
    std::fs::write(&md_path, report.to_markdown())
        .map_err(io_err(format!("cannot write {}", md_path.display())))?;
    println!("{}", report.to_markdown());
    println!("wrote {} and {}", json_path.display(), md_path.display());
    Ok(())
}

/// Overlay inputs for external plotting: per-(cause, map) trajectories,
/// reach polygons for both controllers, and a sampled heatmap per map.
fn write_plot_data(
    ctx: &ExperimentContext,
    artifacts: &[prreach::sim::OfflineArtifact],
    out_dir: &Path,
) -> Result<(), CliError> {
    let plot_dir = out_dir.join("plots");
    std::fs::create_dir_all(&plot_dir)
        .map_err(io_err(format!("cannot create {}", plot_dir.display())))?;
    for (name, poly) in &ctx.maps {
        let path = plot_dir.join(format!("heatmap_{name}.csv"));
        let mut out = String::from("x,y,value\n");
        let mut y = -1.0;
        while y <= 10.0 {
            let mut x = -1.0;
            while x <= 10.0 {
                out.push_str(&format!("{x},{y},{}\n", poly.eval(x, y)));
                x += 0.25;
            }
            y += 0.25;
        }
        std::fs::write(&path, out).map_err(io_err(format!("cannot write {}", path.display())))?;
    }
    for artifact in artifacts {
        let stem = format!("{}_{}", artifact.cause, artifact.map);
        for (tag, record) in [
            ("lqr", &artifact.lqr_record),
            ("prr-offline", &artifact.prr_record),
        ] {
            let path = plot_dir.join(format!("trajectory_{stem}_{tag}.csv"));
            let file = std::fs::File::create(&path)
                .map_err(io_err(format!("cannot create {}", path.display())))?;
            record
                .write_csv(file)
                .map_err(io_err("cannot write trajectory CSV".to_string()))?;
        }
        let cause = ctx
            .causes
            .iter()
            .find(|c| c.cause.label() == artifact.cause)
            .expect("cause exists");
        for (tag, gain) in [("lqr", &cause.gain), ("prr-offline", &artifact.gain)] {
            let d =
                closed_loop(&cause.model, gain).map_err(|e| CliError::Numerical(e.to_string()))?;
            let seq = propagate(
                &d,
                &ctx.x0,
                &cause.disturbance,
                ctx.horizon,
                &ctx.pipeline.propagate_opts(),
            )
            .map_err(|e| CliError::Numerical(e.to_string()))?;
            let path = plot_dir.join(format!("reach_{stem}_{tag}.jsonl"));
            let file = std::fs::File::create(&path)
                .map_err(io_err(format!("cannot create {}", path.display())))?;
            seq.write_jsonl(file)
                .map_err(io_err("cannot write reach dump".to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::SynthHazard(args) => cmd_synth_hazard(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Optimize(args) => cmd_optimize(args),
        Command::Verify(args) => cmd_verify(args),
        Command::ReachDump(args) => cmd_reach_dump(args),
        Command::Experiment(args) => cmd_experiment(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Io(msg) | CliError::Numerical(msg) => eprintln!("error: {msg}"),
                CliError::Infeasible => eprintln!("error: problem is infeasible"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
