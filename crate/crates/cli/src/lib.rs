//! `gapctl`: command-line driver for gap solutions, critical bounds,
//! controllability reports and minimum-energy controls.
//!
//! Every command writes `summary.json` into the output directory and prints
//! the same record on stdout. Commands that produce controls also write
//! `trajectory.csv`, `states.csv` and, with `--svg`, `figure.svg`.
//!
//! Exit codes: 0 on success, 2 when an iterative solve did not converge, 1 on
//! usage, configuration or input errors.

pub mod config;
pub mod output;
pub mod svg;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use gapctl_core::analyze::{adjoint_range_residual, default_min_len, default_tau};
use gapctl_core::controllability::{kalman_rank_channel, GramianReport};
use gapctl_core::model::BUILTIN_NAMES;
use gapctl_core::oracle::brute_force_gap;
use gapctl_core::{
    build_affine, check_bang_bang, critical_bound_affine, discrete_gramian, dykstra_min_energy,
    extract_switchings, kalman_rank, l2_norm, ltv_rank, project_affine, reconstruct_ua, simulate,
    solve_gap, Bounds, ControlTrajectory, CriticalOptions, CtrbReport, Error, Grid, SignalKind,
    SolveOptions, Solver,
};

use config::LoadedInstance;
use output::SummaryRecord;

pub const DEFAULT_NODES: usize = 2000;

#[derive(Debug, Parser)]
#[command(
    name = "gapctl",
    version,
    about = "Best-approximation solutions for infeasible bounded-control problems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimal-distance pair between the boundary-feasible controls and the box.
    Gap(GapArgs),
    /// Smallest symmetric bound for which the problem is feasible.
    Critical(CriticalArgs),
    /// Controllability rank tests.
    Ctrb(CtrbArgs),
    /// Minimum-norm feasible control by Dykstra's method.
    MinEnergy(MinEnergyArgs),
    /// Switching structure and optimality checks of a saved trajectory.
    Analyze(AnalyzeArgs),
    /// List the builtin benchmark systems.
    Systems(SystemsArgs),
}

#[derive(Debug, Clone, Args)]
#[group(id = "source", required = true, multiple = false)]
pub struct Source {
    /// Builtin system name (see `gapctl systems`).
    #[arg(long)]
    pub system: Option<String>,
    /// JSON configuration file describing the instance.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[group(id = "optional_source", required = false, multiple = false)]
pub struct OptionalSource {
    /// Builtin system name, used for the adjoint-range check.
    #[arg(long)]
    pub system: Option<String>,
    /// JSON configuration file, used for the adjoint-range check.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Number of Euler steps (defaults to 2000 or the configuration's value).
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub nodes: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Also write figure.svg.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Map,
    Dr,
    Fast,
}

impl From<SolverArg> for Solver {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Map => Solver::Map,
            SolverArg::Dr => Solver::Dr,
            SolverArg::Fast => Solver::Fast,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GapArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub common: Common,
    /// Symmetric control bound a (box [-a, a]).
    #[arg(long)]
    pub bound: Option<f64>,
    #[arg(long, value_enum, default_value_t = SolverArg::Map)]
    pub solver: SolverArg,
    /// Stop when successive gap vectors differ by at most this (h-weighted).
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 2_000_000)]
    pub max_iter: usize,
    /// Compare with the exhaustive active-set solution (at most 8 control values).
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CriticalArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = SolverArg::Fast)]
    pub solver: SolverArg,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Relative bisection tolerance on the bound.
    #[arg(long, default_value_t = 1e-4)]
    pub tol_a: f64,
    /// Gap below which a bound counts as feasible (default 1e-6 (1 + |xi|)).
    #[arg(long)]
    pub feas_tol: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub a_init: f64,
    #[arg(long, default_value_t = 2_000_000)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CtrbArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct MinEnergyArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub bound: Option<f64>,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 2_000_000)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Trajectory CSV written by `gap`, `critical` or `min-energy`.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub source: OptionalSource,
    /// Symmetric bound the trajectory was computed for.
    #[arg(long)]
    pub bound: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Dead band for sign decisions (default 1e-7 max |v|).
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SystemsArgs {
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Why a command failed, which decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Unconverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ProbeUnconverged { .. } | Error::LikelyInfeasible { .. } => {
                Failure::Unconverged(e.to_string())
            }
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<String> for Failure {
    fn from(s: String) -> Self {
        Failure::Usage(s)
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            println!("{}", summary.to_json());
            if summary.converged {
                0
            } else {
                2
            }
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Unconverged(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

/// Runs one command, writing its files, and returns the summary record.
pub fn execute(cmd: &Command) -> Result<SummaryRecord, Failure> {
    let start = Instant::now();
    let (mut summary, out) = match cmd {
        Command::Gap(args) => (cmd_gap(args)?, &args.common.out),
        Command::Critical(args) => (cmd_critical(args)?, &args.common.out),
        Command::Ctrb(args) => (cmd_ctrb(args)?, &args.common.out),
        Command::MinEnergy(args) => (cmd_min_energy(args)?, &args.common.out),
        Command::Analyze(args) => (cmd_analyze(args)?, &args.out),
        Command::Systems(args) => (cmd_systems()?, &args.out),
    };
    summary.wall_time_seconds = start.elapsed().as_secs_f64();
    if !summary.is_finite() {
        return Err(Failure::Usage("summary contains non-finite values".into()));
    }
    ensure_dir(out)?;
    output::write_text(&out.join("summary.json"), &(summary.to_json() + "\n"))?;
    Ok(summary)
}

fn ensure_dir(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))
}

fn load(
    system: &Option<String>,
    config: &Option<PathBuf>,
) -> Result<Option<LoadedInstance>, String> {
    match (system, config) {
        (Some(name), None) => config::load_builtin(name).map(Some),
        (None, Some(path)) => config::load_config(path).map(Some),
        (None, None) => Ok(None),
        (Some(_), Some(_)) => Err("give either --system or --config, not both".into()),
    }
}

fn load_required(source: &Source) -> Result<LoadedInstance, String> {
    load(&source.system, &source.config)?
        .ok_or_else(|| "one of --system or --config is required".into())
}

fn resolve_grid(li: &LoadedInstance, common: &Common) -> Result<Grid, String> {
    let nodes = common
        .nodes
        .map(|n| n as usize)
        .or(li.nodes)
        .unwrap_or(DEFAULT_NODES);
    if nodes < 2 {
        return Err(format!("at least 2 nodes are required, got {nodes}"));
    }
    li.instance.system.grid(nodes).map_err(|e| e.to_string())
}

fn require_bounds(li: &LoadedInstance, grid: &Grid, flag: Option<f64>) -> Result<Bounds, String> {
    li.bounds(grid.steps(), flag)?.ok_or_else(|| {
        "a control bound is required (--bound or 'bound'/'bounds' in the configuration)".into()
    })
}

fn write_controls(
    common: &Common,
    title: &str,
    li: &LoadedInstance,
    ua: &ControlTrajectory,
    ub: &ControlTrajectory,
    v: &ControlTrajectory,
    simulated: &ControlTrajectory,
) -> Result<(), String> {
    ensure_dir(&common.out)?;
    output::write_trajectory(
        output::create(&common.out.join("trajectory.csv"))?,
        ua,
        ub,
        v,
    )?;
    match simulate(
        &li.instance.system,
        ua.grid(),
        &li.instance.boundary.x0,
        simulated,
    ) {
        Ok(states) => {
            output::write_states(output::create(&common.out.join("states.csv"))?, &states)?
        }
        Err(e) => log::warn!("states.csv not written: {e}"),
    }
    if common.svg {
        output::write_text(
            &common.out.join("figure.svg"),
            &svg::render(title, ua, ub, v),
        )?;
    }
    Ok(())
}

fn base_summary(command: &str, li: &LoadedInstance, grid: &Grid) -> SummaryRecord {
    SummaryRecord {
        command: command.into(),
        instance: li.instance.label.clone(),
        nodes: grid.steps(),
        ..Default::default()
    }
}

fn cmd_gap(args: &GapArgs) -> Result<SummaryRecord, Failure> {
    let li = load_required(&args.source)?;
    let grid = resolve_grid(&li, &args.common)?;
    let bounds = require_bounds(&li, &grid, args.bound)?;
    let aff = build_affine(&li.instance.system, &grid, &li.instance.boundary)?;
    let opts = SolveOptions {
        tol: args.tol,
        max_iter: args.max_iter,
        ..SolveOptions::with_solver(args.solver.into())
    };
    let res = solve_gap(&aff, &bounds, &opts)?;
    let profile = extract_switchings(
        &res.v,
        SignalKind::GapVector,
        default_tau(&res.v),
        default_min_len(&grid),
    )?;

    let mut s = base_summary("gap", &li, &grid);
    s.solver = Some(res.solver.name().into());
    s.a = bounds.symmetric_value();
    s.gap_norm = Some(res.gap_norm);
    s.gap_lower_bound = Some(res.gap_lower_bound);
    s.switch_times = profile.all_times();
    s.iterations = res.iterations;
    s.converged = res.converged;
    s.detail("stop", format!("{:?}", res.stop));
    s.detail("kkt_residual", res.kkt_residual);
    s.detail("range_residual", adjoint_range_residual(&res.v, &aff)?);
    if let Some(d) = res.drift {
        s.detail("drift", d);
    }
    if args.oracle {
        let orc = brute_force_gap(&aff, &bounds)?;
        let h = grid.h();
        let obj = 0.5 * res.gap_norm * res.gap_norm;
        let orc_obj = 0.5 * orc.gap_norm * orc.gap_norm;
        let ub_dev = res
            .ub
            .as_slice()
            .iter()
            .zip(orc.ub.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        s.detail("oracle_gap_norm", orc.gap_norm);
        s.detail("oracle_objective_difference", (obj - orc_obj).abs());
        s.detail("oracle_ub_distance", (h * ub_dev).sqrt());
    }
    let title = format!(
        "gap: {} (N = {}, {})",
        li.instance.label,
        grid.steps(),
        res.solver
    );
    write_controls(&args.common, &title, &li, &res.ua, &res.ub, &res.v, &res.ub)?;
    Ok(s)
}

fn cmd_critical(args: &CriticalArgs) -> Result<SummaryRecord, Failure> {
    let li = load_required(&args.source)?;
    let grid = resolve_grid(&li, &args.common)?;
    let aff = build_affine(&li.instance.system, &grid, &li.instance.boundary)?;
    let opts = CriticalOptions {
        tol_a: args.tol_a,
        feas_tol: args.feas_tol,
        a_init: args.a_init,
        solve: SolveOptions {
            tol: args.tol,
            max_iter: args.max_iter,
            ..SolveOptions::with_solver(args.solver.into())
        },
    };
    let res = critical_bound_affine(&aff, &opts)?;
    let mut s = base_summary("critical", &li, &grid);
    s.solver = Some(res.final_gap.solver.name().into());
    s.a_c = Some(res.a_c);
    s.bracket = Some(res.bracket);
    s.evaluations = Some(res.evaluations);
    s.gap_norm = Some(res.final_gap.gap_norm);
    s.switch_times = res.switch_times.clone();
    s.iterations =
        res.probes.iter().map(|p| p.iterations).sum::<usize>() + res.final_gap.iterations;
    s.converged = res.final_gap.converged;
    s.detail("feas_tol", res.feas_tol);
    s.detail("monotone", res.monotone);
    s.detail(
        "switch_counts",
        res.switching
            .channels
            .iter()
            .map(|c| c.times.len())
            .collect::<Vec<_>>(),
    );
    let title = format!(
        "critical: {} (N = {}, a_c = {:.6})",
        li.instance.label,
        grid.steps(),
        res.a_c
    );
    let f = &res.final_gap;
    write_controls(&args.common, &title, &li, &f.ua, &f.ub, &f.v, &res.u_c)?;
    Ok(s)
}

fn ctrb_line(name: &str, r: &CtrbReport) -> String {
    format!(
        "{name:<20} {:>5} {:>9}  {:<14} {:.3e}",
        r.rank,
        r.required,
        format!("{:?}", r.verdict).to_lowercase(),
        r.conditioning
    )
}

fn cmd_ctrb(args: &CtrbArgs) -> Result<SummaryRecord, Failure> {
    let li = load_required(&args.source)?;
    let grid = resolve_grid(&li, &args.common)?;
    let sys = &li.instance.system;
    let mut s = base_summary("ctrb", &li, &grid);
    let mut lines = vec![format!(
        "{:<20} {:>5} {:>9}  {:<14} {}",
        "test", "rank", "required", "verdict", "conditioning"
    )];
    let mut verdicts = Vec::new();

    if sys.is_time_invariant() {
        let (a, b) = (sys.a().at_node(0), sys.b().at_node(0));
        let r = kalman_rank(a, b)?;
        lines.push(ctrb_line("kalman", &r));
        s.detail("kalman_rank", r.rank);
        s.detail("required", r.required);
        verdicts.push(r.controllable);
        if sys.m() > 1 {
            let mut per = Vec::new();
            for i in 0..sys.m() {
                let ri = kalman_rank_channel(a, b, i)?;
                lines.push(ctrb_line(&format!("kalman[u_{}]", i + 1), &ri));
                per.push(ri.rank);
            }
            s.detail("kalman_channel_ranks", per);
        }
    }
    let q = sys.n().max(2) - 1;
    let tc = 0.5 * (grid.t0() + grid.tf());
    let fd = 0.25 * (grid.tf() - grid.t0()) / q as f64;
    let r = ltv_rank(sys, &grid, tc, q, fd)?;
    lines.push(ctrb_line(&format!("ltv(t={tc:.4})"), &r));
    s.detail("ltv_rank", r.rank);
    s.detail("ltv_verdict", format!("{:?}", r.verdict).to_lowercase());
    if sys.is_time_invariant() {
        verdicts.push(r.controllable);
    }
    let aff = build_affine(sys, &grid, &li.instance.boundary)?;
    let gram: GramianReport = discrete_gramian(&aff);
    let gr = gram.as_ctrb_report();
    lines.push(ctrb_line("gramian", &gr));
    s.detail("gramian_rank", gram.rank);
    s.detail("gramian_min_eigenvalue", gram.min_eigenvalue);
    verdicts.push(gr.controllable);

    let controllable = verdicts.iter().all(|v| *v);
    s.detail("controllable", controllable);
    s.converged = true;
    println!(
        "system {} (n = {}, m = {}, N = {})",
        li.instance.label,
        sys.n(),
        sys.m(),
        grid.steps()
    );
    for l in &lines {
        println!("{l}");
    }
    println!(
        "{}",
        if controllable {
            "controllable"
        } else {
            "not controllable"
        }
    );
    Ok(s)
}

fn cmd_min_energy(args: &MinEnergyArgs) -> Result<SummaryRecord, Failure> {
    let li = load_required(&args.source)?;
    let grid = resolve_grid(&li, &args.common)?;
    let bounds = require_bounds(&li, &grid, args.bound)?;
    let aff = build_affine(&li.instance.system, &grid, &li.instance.boundary)?;
    let (u, stats) = dykstra_min_energy(&aff, &bounds, args.tol, args.max_iter)?;
    let ua = project_affine(&u, &aff)?;
    let v = ua.sub(&u)?;
    let mut s = base_summary("min-energy", &li, &grid);
    s.a = bounds.symmetric_value();
    s.iterations = stats.iterations;
    s.converged = stats.converged;
    s.gap_norm = Some(l2_norm(&v));
    let profile = extract_switchings(
        &u,
        SignalKind::Control,
        default_tau(&u),
        default_min_len(&grid),
    )?;
    s.switch_times = profile.all_times();
    s.detail("control_norm", l2_norm(&u));
    s.detail("affine_residual", stats.residual);
    let title = format!("min-energy: {} (N = {})", li.instance.label, grid.steps());
    write_controls(&args.common, &title, &li, &ua, &u, &v, &u)?;
    Ok(s)
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<SummaryRecord, Failure> {
    let li = load(&args.source.system, &args.source.config)?;
    let horizon = li
        .as_ref()
        .map(|l| (l.instance.system.t0(), l.instance.system.tf()));
    let file = fs::File::open(&args.input)
        .map_err(|e| format!("cannot open {}: {e}", args.input.display()))?;
    let traj = output::read_trajectory(file, horizon)?;
    let grid = *traj.ub.grid();
    let m = traj.ub.channels();
    let bounds = match (&li, args.bound) {
        (_, Some(a)) => Bounds::symmetric(a, m)?,
        (Some(l), None) => require_bounds(l, &grid, None)?,
        (None, None) => return Err(Failure::Usage("--bound is required".into())),
    };
    let tau = args.tau.unwrap_or_else(|| default_tau(&traj.v));
    let profile = extract_switchings(&traj.v, SignalKind::GapVector, tau, default_min_len(&grid))?;
    let bang = check_bang_bang(&traj.ub, &traj.v, &bounds, tau)?;
    let rebuilt = reconstruct_ua(&traj.ub, &traj.v, &bounds)?;
    let dev = rebuilt
        .as_slice()
        .iter()
        .zip(traj.ua.as_slice())
        .zip(traj.v.as_slice())
        .filter(|(_, v)| v.abs() > tau)
        .map(|((a, b), _)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut s = SummaryRecord {
        command: "analyze".into(),
        instance: li.as_ref().map_or_else(
            || args.input.display().to_string(),
            |l| l.instance.label.clone(),
        ),
        nodes: grid.steps(),
        a: bounds.symmetric_value(),
        gap_norm: Some(l2_norm(&traj.v)),
        switch_times: profile.all_times(),
        converged: true,
        ..Default::default()
    };
    s.detail("tau", tau);
    s.detail("bang_bang_agreement", bang.agreement);
    s.detail("bang_bang_tested", bang.tested);
    s.detail("bang_bang_exempt", bang.exempt);
    s.detail("reconstruction_max_deviation", dev);
    s.detail(
        "singular_intervals",
        profile
            .channels
            .iter()
            .map(|c| {
                c.singular
                    .iter()
                    .map(|(a, b)| vec![*a, *b])
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>(),
    );
    if let Some(l) = &li {
        let aff = build_affine(&l.instance.system, &grid, &l.instance.boundary)?;
        s.detail("range_residual", adjoint_range_residual(&traj.v, &aff)?);
    }
    Ok(s)
}

fn cmd_systems() -> Result<SummaryRecord, Failure> {
    let mut s = SummaryRecord {
        command: "systems".into(),
        instance: "builtin".into(),
        converged: true,
        ..Default::default()
    };
    println!(
        "{:<20} {:>3} {:>3}  {:<16} x0 -> xf",
        "name", "n", "m", "horizon"
    );
    for name in BUILTIN_NAMES {
        let inst = gapctl_core::builtin_instance(name)?;
        let sys = &inst.system;
        println!(
            "{:<20} {:>3} {:>3}  [{}, {}]{:<6} {:?} -> {:?}",
            name,
            sys.n(),
            sys.m(),
            sys.t0(),
            sys.tf(),
            "",
            inst.boundary.x0.as_slice(),
            inst.boundary.xf.as_slice()
        );
        s.detail(
            name,
            serde_json::json!({"n": sys.n(), "m": sys.m(), "t0": sys.t0(), "tf": sys.tf()}),
        );
    }
    Ok(s)
}
