//! `mpe`: command-line front end for runs, experiments, covering analyses
//! and offline diagnostics.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use moist_pe::config::{parse_config, RunConfig};
use moist_pe::dynamics::{Sources, SteadyForcing};
use moist_pe::energy::{attach_balances, report_with, EnergyReport};
use moist_pe::experiments::*;
use moist_pe::snapshot::{emit_snapshot, load_snapshot_with_grid};
use moist_pe::stepper::{run, StepConfig, StepError};
use moist_pe::{Grid, PhysParams, State};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "mpe",
    version,
    about = "Viscous moist primitive equations: simulation and verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory; overrides `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for ensembles and ladders.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for random initial data; overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate from the configured initial data and write the energy series.
    Run { config: PathBuf },
    /// Run a named experiment.
    Experiment { name: String, config: PathBuf },
    /// Covering estimate on trajectory samples of the reduced solution map.
    Covering { config: PathBuf },
    /// Recompute energy reports from snapshot files.
    Diag {
        #[arg(required = true)]
        snapshots: Vec<PathBuf>,
        /// Config supplying the physical parameters and forcing.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Manufactured-solution convergence ladder.
    Mms { config: PathBuf },
}

const EXPERIMENTS: &[&str] = &[
    "manufactured",
    "energy_balance",
    "q_decay",
    "absorbing_ball",
    "smoothing",
    "time_regularity",
    "covering",
];

#[derive(Debug)]
enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<StepError> for Failure {
    fn from(e: StepError) -> Self {
        Failure::Numerical(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Precondition(m) => Failure::Usage(m),
            ExperimentError::Step(s) => s.into(),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Usage(format!("{}: {e}", path.display()))
}

fn load_config(path: &Path, cli: &Cli) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut cfg = parse_config(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.directory = o.clone();
    }
    Ok(cfg)
}

fn initial_state(cfg: &RunConfig, g: &Grid) -> Result<State, Failure> {
    match &cfg.initial.snapshot {
        Some(path) => {
            let (sg, s) = load_snapshot_with_grid(path).map_err(|e| Failure::Usage(e.to_string()))?;
            if &sg != g {
                return Err(Failure::Usage(format!(
                    "{}: snapshot grid differs from the configured grid",
                    path.display()
                )));
            }
            Ok(s)
        }
        None => Ok(random_state(g, &cfg.params, cfg.seed, cfg.initial.amplitude)),
    }
}

fn energy_csv(reports: &[EnergyReport]) -> String {
    let mut text = EnergyReport::csv_header();
    text.push('\n');
    for r in reports {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    text
}

fn write_energy(path: &Path, reports: &[EnergyReport]) -> Result<(), Failure> {
    fs::write(path, energy_csv(reports)).map_err(io_err(path))
}

fn prepare_dir(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = cfg.output.directory.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join("config.ini");
    fs::write(&path, cfg.to_text()).map_err(io_err(&path))?;
    Ok(dir)
}

fn cmd_run(cfg: &RunConfig, verbose: bool) -> Result<ExitCode, Failure> {
    let g = cfg.grid.build();
    let p = &cfg.params;
    let dir = prepare_dir(cfg)?;
    let s0 = initial_state(cfg, &g)?;
    let forcing = SteadyForcing::from_params(p, &g);
    let src = Sources::from_params(p, &g);
    let mut reports = Vec::new();
    let mut prev: Option<State> = None;
    let mut write_err = None;
    let res = run(&s0, p, &g, &cfg.stepping, &forcing, &mut |k, s| {
        let r = report_with(s, prev.as_ref(), p, &g, &src);
        if verbose {
            eprintln!(
                "step {k:>7} t = {:.4} |.|_H = {:.6e} |.|_V^2 = {:.6e}",
                s.time, r.h_norm, r.v_sq_total
            );
        }
        reports.push(r);
        prev = Some(s.clone());
        if cfg.output.snapshots && write_err.is_none() {
            if let Err(e) = emit_snapshot(s, &g, &dir.join(format!("snap_{k:07}.mpe"))) {
                write_err = Some(e);
            }
        }
    });
    attach_balances(&mut reports);
    if cfg.output.energy {
        write_energy(&dir.join("energy.csv"), &reports)?;
    }
    if let Some(e) = write_err {
        return Err(Failure::Usage(e.to_string()));
    }
    let res = match res {
        Ok(r) => r,
        Err(e) => {
            if let StepError::NonFinite { state, .. } = &e {
                let _ = emit_snapshot(state, &g, &dir.join("abort.mpe"));
            }
            return Err(e.into());
        }
    };
    emit_snapshot(&res.state, &g, &dir.join("final.mpe")).map_err(|e| Failure::Usage(e.to_string()))?;
    let manifest = format!(
        "fingerprint={}\nsteps={}\nt_end={:?}\nmax_cfl={:?}\nmax_projection_iters={}\nwall_time_s={:.3}\n",
        cfg.fingerprint(),
        res.steps,
        res.state.time,
        res.max_cfl,
        res.max_projection_iters,
        res.wall_time.as_secs_f64()
    );
    let path = dir.join("run_manifest.txt");
    fs::write(&path, &manifest).map_err(io_err(&path))?;
    print!("{manifest}");
    Ok(ExitCode::SUCCESS)
}

fn mms_config(cfg: &RunConfig) -> MmsConfig {
    let n = cfg.grid.nx;
    let dt = cfg.stepping.dt;
    MmsConfig {
        ladder: vec![n, 2 * n, 4 * n],
        t_end: cfg.stepping.t_end,
        temporal_n: 2 * n,
        temporal_t_end: cfg.stepping.t_end,
        dts: vec![dt, dt / 2.0, dt / 4.0],
        ..Default::default()
    }
}

fn covering_config(cfg: &RunConfig) -> CoveringConfig {
    let e = &cfg.experiment;
    let d = CoveringConfig::default();
    CoveringConfig {
        trajectories: e.trajectories,
        seed: cfg.seed,
        v_norm: e.v_norm,
        dt: cfg.stepping.dt,
        t_end: cfg.stepping.t_end,
        skip: e.pre_evolve,
        snapshot_every: cfg.stepping.snapshot_every,
        map_time: e.map_time,
        theta: e.theta,
        k_max: e.k_max,
        tolerance: e.tolerance.unwrap_or(d.tolerance),
    }
}

/// Initial state evolved for `experiment.pre_evolve` time units.
fn absorbed_state(cfg: &RunConfig, g: &Grid, verbose: bool) -> Result<State, Failure> {
    let s0 = initial_state(cfg, g)?;
    let e = &cfg.experiment;
    let pre = StepConfig {
        t_end: e.pre_evolve,
        ..cfg.stepping.clone()
    };
    let (s, entry) = pre_evolve(&s0, &cfg.params, g, &pre, e.tail.min(e.pre_evolve))?;
    if verbose {
        match entry {
            Some(t) => eprintln!("entered the absorbing regime at t = {t:.3}"),
            None => eprintln!("no absorbing entry detected within the pre-evolution"),
        }
    }
    Ok(s)
}

fn run_experiment(name: &str, cfg: &RunConfig, verbose: bool) -> Result<ExperimentResult, Failure> {
    let g = cfg.grid.build();
    let p = &cfg.params;
    let e = &cfg.experiment;
    let step = &cfg.stepping;
    let res = match name {
        "manufactured" => exp_manufactured(p, cfg.grid.lx, cfg.grid.ly, &mms_config(cfg))?,
        "energy_balance" => {
            let bc = BalanceConfig {
                coarse_n: cfg.grid.nx,
                dt: step.dt,
                t_end: step.t_end,
                snapshot_every: step.snapshot_every,
                ..Default::default()
            };
            exp_energy_balance(p, cfg.grid.lx, cfg.grid.ly, &bc)?
        }
        "q_decay" => exp_q_decay(p, &initial_state(cfg, &g)?, &g, step, cfg.seed)?,
        "absorbing_ball" => {
            let base = initial_state(cfg, &g)?;
            let members: Vec<State> = e.radii.iter().map(|&r| with_v_norm(&base, r, p, &g)).collect();
            let bc = BallConfig {
                tail: e.tail,
                tolerance: e.tolerance.unwrap_or(BallConfig::default().tolerance),
                ..Default::default()
            };
            exp_absorbing_ball(&members, p, &g, step, &bc, cfg.seed)?
        }
        "smoothing" => {
            let base = absorbed_state(cfg, &g, verbose)?;
            let sc = SmoothingConfig {
                t_bar: e.t_bar,
                magnitudes: e.magnitudes.clone(),
                tolerance: e.tolerance.unwrap_or(SmoothingConfig::default().tolerance),
                seed: cfg.seed,
            };
            exp_smoothing_ladder(&base, p, &g, step, &sc)?
        }
        "time_regularity" => {
            let base = absorbed_state(cfg, &g, verbose)?;
            let rc = RegularityConfig {
                tolerance: e.tolerance.unwrap_or(RegularityConfig::default().tolerance),
                ..Default::default()
            };
            exp_time_regularity(&base, p, &g, step, &rc, cfg.seed)?
        }
        "covering" => exp_pe_covering(p, &g, &covering_config(cfg))?,
        other => {
            return Err(Failure::Usage(format!(
                "unknown experiment `{other}`; expected one of {}",
                EXPERIMENTS.join(", ")
            )))
        }
    };
    Ok(res)
}

fn finish(mut res: ExperimentResult, cfg: &RunConfig) -> Result<ExitCode, Failure> {
    res.fingerprint = cfg.fingerprint();
    let dir = prepare_dir(cfg)?;
    res.write(&dir).map_err(io_err(&dir))?;
    print!("{}", res.manifest());
    Ok(ExitCode::from(res.status.exit_code() as u8))
}

fn cmd_diag(paths: &[PathBuf], config: Option<&Path>, cli: &Cli) -> Result<ExitCode, Failure> {
    let p = match config {
        Some(c) => load_config(c, cli)?.params,
        None => PhysParams::default(),
    };
    let mut reports = Vec::new();
    let mut prev: Option<(Grid, State)> = None;
    for path in paths {
        let (g, s) = load_snapshot_with_grid(path).map_err(|e| Failure::Usage(e.to_string()))?;
        let src = Sources::from_params(&p, &g);
        let before = prev.as_ref().filter(|(pg, _)| *pg == g).map(|x| &x.1);
        reports.push(report_with(&s, before, &p, &g, &src));
        prev = Some((g, s));
    }
    attach_balances(&mut reports);
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            write_energy(&dir.join("diag.csv"), &reports)?;
        }
        None => print!("{}", energy_csv(&reports)),
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: &Cli) -> Result<ExitCode, Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Run { config } => cmd_run(&load_config(config, cli)?, cli.verbose),
        Command::Experiment { name, config } => {
            let cfg = load_config(config, cli)?;
            finish(run_experiment(name, &cfg, cli.verbose)?, &cfg)
        }
        Command::Covering { config } => {
            let cfg = load_config(config, cli)?;
            finish(run_experiment("covering", &cfg, cli.verbose)?, &cfg)
        }
        Command::Mms { config } => {
            let cfg = load_config(config, cli)?;
            finish(run_experiment("manufactured", &cfg, cli.verbose)?, &cfg)
        }
        Command::Diag { snapshots, config } => cmd_diag(snapshots, config.as_deref(), cli),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical abort: {m}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
