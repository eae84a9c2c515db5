//! Experiments: manufactured-solution ladder, energy balance, moisture
//! decay, absorbing ball, smoothing of differences, Lipschitz regularity in
//! time and the covering estimate on trajectory samples.
//!
//! Every experiment returns an [`ExperimentResult`] with its time series,
//! fitted constants, a verdict and the fingerprint of the configuration.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{Sources, SteadyForcing};
use crate::energy::{
    check_buoyancy_identity, check_q_balance, check_vt_balance, h_norm_sq, poincare_slack_ratio, report, report_with,
    v_total_sq, EnergyReport,
};
use crate::field::Field3D;
use crate::grid::Grid;
use crate::mms::Manufactured;
use crate::params::{ForcingPreset, ForcingSpec, PhysParams};
use crate::projection::{project, EllipticSolve};
use crate::state::{apply_boundary_conditions, State};
use crate::stepper::{run, StepConfig, StepError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Step(#[from] StepError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Inconclusive => "inconclusive",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 2,
            Status::Inconclusive => 3,
        }
    }

    /// Worst of two verdicts; failure dominates inconclusive.
    pub fn and(self, other: Status) -> Status {
        use Status::*;
        match (self, other) {
            (Fail, _) | (_, Fail) => Fail,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Pass,
        }
    }
}

/// A table of numbers with named columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r
                .iter()
                .map(|v| if v.is_nan() { String::new() } else { format!("{v:?}") })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Energy reports as a series; missing values become NaN (empty cells).
    pub fn from_reports(name: &str, reports: &[EnergyReport]) -> Self {
        let cols: Vec<&str> = EnergyReport::default().columns().iter().map(|c| c.0).collect();
        let mut s = Series::new(name, &cols);
        for r in reports {
            s.push(r.columns().iter().map(|c| c.1.unwrap_or(f64::NAN)).collect());
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    pub status: Status,
    /// Fitted and measured constants in insertion order.
    pub constants: Vec<(String, f64)>,
    pub notes: Vec<String>,
    pub series: Vec<Series>,
    pub fingerprint: String,
    pub wall_time: Duration,
}

impl ExperimentResult {
    fn new(name: &str, fingerprint: String) -> Self {
        Self {
            name: name.to_string(),
            status: Status::Pass,
            constants: Vec::new(),
            notes: Vec::new(),
            series: Vec::new(),
            fingerprint,
            wall_time: Duration::ZERO,
        }
    }

    fn set(&mut self, key: &str, v: f64) {
        self.constants.push((key.to_string(), v));
    }

    pub fn constant(&self, key: &str) -> Option<f64> {
        self.constants.iter().find(|c| c.0 == key).map(|c| c.1)
    }

    pub fn series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    /// Plain-text `key=value` manifest.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "name={}", self.name);
        let _ = writeln!(out, "status={}", self.status.as_str());
        let _ = writeln!(out, "fingerprint={}", self.fingerprint);
        let _ = writeln!(out, "wall_time_s={:.3}", self.wall_time.as_secs_f64());
        for (k, v) in &self.constants {
            let _ = writeln!(out, "{k}={v:?}");
        }
        for (i, n) in self.notes.iter().enumerate() {
            let _ = writeln!(out, "note.{i}={n}");
        }
        for s in &self.series {
            let _ = writeln!(out, "series.{}={}_{}.csv", s.name, self.name, s.name);
        }
        out
    }

    /// Writes the manifest and one CSV per series into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}_manifest.txt", self.name)), self.manifest())?;
        for s in &self.series {
            std::fs::write(dir.join(format!("{}_{}.csv", self.name, s.name)), s.to_csv())?;
        }
        Ok(())
    }
}

fn preset_text(f: &ForcingSpec) -> String {
    match f.preset {
        ForcingPreset::Zero => "zero".to_string(),
        ForcingPreset::Mode { m, n, l } => format!("mode {:?} {m} {n} {l}", f.amplitude),
        ForcingPreset::Bump { cx, cy, cz, width } => {
            format!("bump {:?} {cx:?} {cy:?} {cz:?} {width:?}", f.amplitude)
        }
    }
}

/// Canonical text of everything that determines a run. Floats use the
/// shortest round-trip representation so the text is platform independent.
pub fn canonical_text(g: &Grid, p: &PhysParams, cfg: &StepConfig, seed: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[grid]");
    let _ = writeln!(
        out,
        "Nx={}\nNy={}\nNz={}\nLx={:?}\nLy={:?}",
        g.nx, g.ny, g.nz, g.lx, g.ly
    );
    let _ = writeln!(out, "[params]");
    for (k, v) in p.scalars() {
        let _ = writeln!(out, "{k}={v:?}");
    }
    let _ = writeln!(out, "[forcing]");
    let _ = writeln!(out, "Q1={}\nQ2={}", preset_text(&p.Q1), preset_text(&p.Q2));
    let _ = writeln!(out, "[stepping]");
    let _ = writeln!(
        out,
        "dt={:?}\nt_end={:?}\ntheta_scheme={:?}\ncfl_max={:?}\nsnapshot_every={}\ndiffusion_tol={:?}\nprojection_tol={:?}",
        cfg.dt, cfg.t_end, cfg.theta, cfg.cfl_max, cfg.snapshot_every, cfg.diffusion_tol, cfg.projection_tol
    );
    let _ = writeln!(out, "seed={seed}");
    out
}

/// SHA-256 of [`canonical_text`] in hex.
pub fn fingerprint(g: &Grid, p: &PhysParams, cfg: &StepConfig, seed: u64) -> String {
    hex::encode(Sha256::digest(canonical_text(g, p, cfg, seed).as_bytes()))
}

/// Least-squares line `y = slope x + intercept` over a window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub x0: f64,
    pub x1: f64,
    pub n: usize,
    /// Root-mean-square residual.
    pub rms: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let (mx, my) = (x.iter().sum::<f64>() / nf, y.iter().sum::<f64>() / nf);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        sxx += (x[i] - mx).powi(2);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my).powi(2);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = (0..n).map(|i| (y[i] - slope * x[i] - intercept).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Some(LinearFit {
        slope,
        intercept,
        r2,
        x0: x[0],
        x1: x[n - 1],
        n,
        rms: (ss_res / nf).sqrt(),
    })
}

/// Observed convergence orders `log(e_k / e_{k+1}) / log(r)` between
/// successive ladder entries refined by the factor `r`.
pub fn observed_orders(errors: &[f64], r: f64) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).ln() / r.ln()).collect()
}

/// First time from which every monitored series stays within `band`
/// (relative) of its median over `t >= tail_start` for `hold` time units.
pub fn detect_entry_time(times: &[f64], series: &[Vec<f64>], tail_start: f64, band: f64, hold: f64) -> Option<f64> {
    let medians: Vec<f64> = series
        .iter()
        .map(|s| {
            let mut tail: Vec<f64> = times
                .iter()
                .zip(s)
                .filter(|(t, _)| **t >= tail_start)
                .map(|(_, v)| *v)
                .collect();
            if tail.is_empty() {
                return f64::NAN;
            }
            tail.sort_by(f64::total_cmp);
            tail[tail.len() / 2]
        })
        .collect();
    if medians.iter().any(|m| !m.is_finite()) {
        return None;
    }
    let inside = |n: usize| {
        series
            .iter()
            .zip(&medians)
            .all(|(s, m)| (s[n] - m).abs() <= band * m.abs().max(f64::MIN_POSITIVE))
    };
    let t_last = *times.last()?;
    let eps = 1e-9 * hold.max(1.0);
    for start in 0..times.len() {
        if times[start] + hold > t_last + eps {
            break;
        }
        let ok = (start..times.len())
            .take_while(|&n| times[n] <= times[start] + hold + eps)
            .all(inside);
        if ok {
            return Some(times[start]);
        }
    }
    None
}

fn robin_profile(z: f64, gamma: f64) -> f64 {
    1.0 - gamma / (2.0 + gamma) * z * z
}

/// Smooth random state from a few low modes that satisfy every boundary
/// condition; the velocity is projected onto the barotropic constraint.
pub fn random_state(g: &Grid, p: &PhysParams, seed: u64, amplitude: f64) -> State {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (kx, ky) = (PI / g.lx, PI / g.ly);
    let modes = 3usize;
    let mut coef = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let cv1 = coef(modes * modes * modes);
    let cv2 = coef(modes * modes * modes);
    let ct = coef(modes * modes * modes);
    let cq = coef(modes * modes * modes);
    let (gt, gq) = (p.robin_t(), p.robin_q());
    let sum = |c: &[f64], f: &dyn Fn(f64, f64, f64, usize, usize, usize) -> f64, x: f64, y: f64, z: f64| {
        let mut s = 0.0;
        for m in 0..modes {
            for n in 0..modes {
                for l in 0..modes {
                    let w = 1.0 / (1.0 + (m * m + n * n + l * l) as f64);
                    s += w * c[(m * modes + n) * modes + l] * f(x, y, z, m, n, l);
                }
            }
        }
        s
    };
    let mut s = State::zeros(g);
    s.v1 = Field3D::from_fn(g, |x, y, z| {
        sum(
            &cv1,
            &|x, y, z, m, n, l| ((m + 1) as f64 * kx * x).sin() * (n as f64 * ky * y).cos() * (l as f64 * PI * z).cos(),
            x,
            y,
            z,
        )
    });
    s.v2 = Field3D::from_fn(g, |x, y, z| {
        sum(
            &cv2,
            &|x, y, z, m, n, l| (m as f64 * kx * x).cos() * ((n + 1) as f64 * ky * y).sin() * (l as f64 * PI * z).cos(),
            x,
            y,
            z,
        )
    });
    s.t = Field3D::from_fn(g, |x, y, z| {
        sum(
            &ct,
            &|x, y, z, m, n, l| {
                (m as f64 * kx * x).cos() * (n as f64 * ky * y).cos() * (l as f64 * PI * z).cos() * robin_profile(z, gt)
            },
            x,
            y,
            z,
        )
    });
    s.q = Field3D::from_fn(g, |x, y, z| {
        sum(
            &cq,
            &|x, y, z, m, n, l| {
                (m as f64 * kx * x).cos() * (n as f64 * ky * y).cos() * (l as f64 * PI * z).cos() * robin_profile(z, gq)
            },
            x,
            y,
            z,
        )
    });
    let mut es = EllipticSolve::new(1e-13);
    es.max_iter = Some(10 * g.nx * g.ny);
    if let Ok((v1, v2, _)) = project(&s.v1, &s.v2, 1.0, g, &mut es) {
        s.v1 = v1;
        s.v2 = v2;
    }
    let s = apply_boundary_conditions(s, p, g);
    let h = h_norm_sq(&s, g).sqrt();
    if h > 0.0 {
        apply_boundary_conditions(s.scaled(amplitude / h), p, g)
    } else {
        s
    }
}

/// `s` rescaled to the given `V` norm.
pub fn with_v_norm(s: &State, target: f64, p: &PhysParams, g: &Grid) -> State {
    let v = v_total_sq(s, p, g).sqrt();
    if v == 0.0 {
        return s.clone();
    }
    apply_boundary_conditions(s.scaled(target / v), p, g)
}

/// `V` norm of a difference of states.
pub fn v_distance(a: &State, b: &State, p: &PhysParams, g: &Grid) -> f64 {
    v_total_sq(&a.diff(b), p, g).sqrt()
}

pub fn h_distance(a: &State, b: &State, g: &Grid) -> f64 {
    h_norm_sq(&a.diff(b), g).sqrt()
}

fn min_slacks(reports: &[EnergyReport]) -> (f64, f64) {
    reports
        .iter()
        .map(poincare_slack_ratio)
        .fold((f64::INFINITY, f64::INFINITY), |a, b| (a.0.min(b.0), a.1.min(b.1)))
}

/// Runs with the forcing of `p` and returns the final state together with
/// one energy report per snapshot.
pub fn run_with_reports(
    s0: &State,
    p: &PhysParams,
    g: &Grid,
    cfg: &StepConfig,
) -> Result<(State, Vec<EnergyReport>), StepError> {
    let forcing = SteadyForcing::from_params(p, g);
    let src = Sources::from_params(p, g);
    let mut reports = Vec::new();
    let mut prev: Option<State> = None;
    let res = run(s0, p, g, cfg, &forcing, &mut |_, s| {
        reports.push(report_with(s, prev.as_ref(), p, g, &src));
        prev = Some(s.clone());
    })?;
    crate::energy::attach_balances(&mut reports);
    Ok((res.state, reports))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmsConfig {
    /// Grid sizes of the spatial ladder (cubes scaled to the given box).
    pub ladder: Vec<usize>,
    pub t_end: f64,
    /// `dt = dt_per_h * h` on the spatial ladder.
    pub dt_per_h: f64,
    pub temporal_n: usize,
    pub temporal_t_end: f64,
    pub dts: Vec<f64>,
    /// The reference solution of the temporal ladder uses
    /// `min(dts) / reference_refinement`.
    pub reference_refinement: usize,
    pub min_spatial_order: f64,
    pub min_temporal_order: f64,
}

impl Default for MmsConfig {
    fn default() -> Self {
        Self {
            ladder: vec![8, 16, 32],
            t_end: 0.5,
            dt_per_h: 0.1,
            temporal_n: 16,
            temporal_t_end: 0.5,
            dts: vec![0.02, 0.01, 0.005],
            reference_refinement: 8,
            min_spatial_order: 1.8,
            min_temporal_order: 0.9,
        }
    }
}

fn rel_error(a: &State, b: &State, g: &Grid) -> f64 {
    (h_norm_sq(&a.diff(b), g) / h_norm_sq(b, g)).sqrt()
}

/// Convergence ladder on the manufactured solution. The spatial ladder uses
/// the steady solution, whose discrete time error vanishes identically; the
/// temporal ladder uses the time-modulated one on a fixed grid and measures
/// against a run with a much smaller step.
pub fn exp_manufactured(p: &PhysParams, lx: f64, ly: f64, mc: &MmsConfig) -> Result<ExperimentResult, ExperimentError> {
    let start = Instant::now();
    let bad = |m: &str| Err(ExperimentError::Precondition(m.to_string()));
    if mc.ladder.len() < 2 || mc.dts.len() < 2 {
        return bad("ladders need at least two entries");
    }
    let base = Grid::new(mc.ladder[0], mc.ladder[0], mc.ladder[0], lx, ly)
        .map_err(|e| ExperimentError::Precondition(e.to_string()))?;
    let cfg0 = StepConfig {
        dt: mc.dt_per_h * base.hx.min(base.hy).min(base.hz),
        t_end: mc.t_end,
        snapshot_every: usize::MAX,
        ..Default::default()
    };
    let mut res = ExperimentResult::new("manufactured", fingerprint(&base, p, &cfg0, 0));

    let mut spatial = Series::new("spatial", &["n", "h", "dt", "error", "order"]);
    let mut errors = Vec::new();
    for &n in &mc.ladder {
        let g = Grid::new(n, n, n, lx, ly).map_err(|e| ExperimentError::Precondition(e.to_string()))?;
        let m = Manufactured::steady(p, &g);
        let cfg = StepConfig {
            dt: mc.dt_per_h * g.hx.min(g.hy).min(g.hz),
            ..cfg0.clone()
        };
        let out = run(&m.exact_state(&g, 0.0), p, &g, &cfg, &m, &mut |_, _| {})?;
        let e = rel_error(&out.state, &m.exact_state(&g, out.state.time), &g);
        let order = errors.last().map(|&prev: &f64| (prev / e).log2()).unwrap_or(f64::NAN);
        spatial.push(vec![n as f64, g.hz, cfg.dt, e, order]);
        errors.push(e);
    }
    let so = observed_orders(&errors, 2.0);
    let spatial_order = so.iter().cloned().fold(f64::INFINITY, f64::min);

    let g = Grid::new(mc.temporal_n, mc.temporal_n, mc.temporal_n, lx, ly)
        .map_err(|e| ExperimentError::Precondition(e.to_string()))?;
    let m = Manufactured::unsteady(p, &g);
    let s0 = m.exact_state(&g, 0.0);
    let go = |dt: f64| -> Result<State, StepError> {
        let cfg = StepConfig {
            dt,
            t_end: mc.temporal_t_end,
            snapshot_every: usize::MAX,
            ..Default::default()
        };
        Ok(run(&s0, p, &g, &cfg, &m, &mut |_, _| {})?.state)
    };
    let dt_min = mc.dts.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut jobs: Vec<f64> = mc.dts.clone();
    jobs.push(dt_min / mc.reference_refinement as f64);
    let states: Vec<State> = jobs.par_iter().map(|&dt| go(dt)).collect::<Result<_, _>>()?;
    let reference = states.last().expect("reference run");
    let exact = m.exact_state(&g, reference.time);
    let mut temporal = Series::new("temporal", &["dt", "error", "order", "error_vs_exact"]);
    let mut terr = Vec::new();
    for (dt, s) in mc.dts.iter().zip(&states) {
        let e = rel_error(s, reference, &g);
        let order = terr.last().map(|&prev: &f64| (prev / e).log2()).unwrap_or(f64::NAN);
        temporal.push(vec![*dt, e, order, rel_error(s, &exact, &g)]);
        terr.push(e);
    }
    let ratios: Vec<f64> = mc.dts.windows(2).map(|w| w[0] / w[1]).collect();
    let temporal_order = terr
        .windows(2)
        .zip(&ratios)
        .map(|(e, r)| (e[0] / e[1]).ln() / r.ln())
        .fold(f64::INFINITY, f64::min);

    res.set("spatial_order", spatial_order);
    res.set("temporal_order", temporal_order);
    res.set("finest_spatial_error", *errors.last().unwrap_or(&f64::NAN));
    res.series = vec![spatial, temporal];
    res.status = if spatial_order >= mc.min_spatial_order && temporal_order >= mc.min_temporal_order {
        Status::Pass
    } else {
        Status::Fail
    };
    res.wall_time = start.elapsed();
    Ok(res)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceConfig {
    /// Coarse level; the fine level has half the spacing and a quarter of the step.
    pub coarse_n: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Same stride on both levels, so the centered time differences refine too.
    pub snapshot_every: usize,
    pub min_ratio: f64,
    pub identity_n: usize,
    pub identity_samples: u64,
    pub identity_tolerance: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            coarse_n: 8,
            dt: 0.01,
            t_end: 0.4,
            snapshot_every: 2,
            min_ratio: 3.0,
            identity_n: 16,
            identity_samples: 3,
            identity_tolerance: 1e-6,
        }
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max)
}

/// Two-level study of the energy balance residuals along the time-modulated
/// manufactured solution, plus the buoyancy-work identity on random
/// constrained states.
pub fn exp_energy_balance(
    p: &PhysParams,
    lx: f64,
    ly: f64,
    bc: &BalanceConfig,
) -> Result<ExperimentResult, ExperimentError> {
    let start = Instant::now();
    let grid = |n: usize| Grid::new(n, n, n, lx, ly).map_err(|e| ExperimentError::Precondition(e.to_string()));
    let levels = [(grid(bc.coarse_n)?, bc.dt), (grid(2 * bc.coarse_n)?, bc.dt / 4.0)];
    let cfg0 = StepConfig {
        dt: bc.dt,
        t_end: bc.t_end,
        snapshot_every: bc.snapshot_every,
        ..Default::default()
    };
    let mut res = ExperimentResult::new("energy_balance", fingerprint(&levels[0].0, p, &cfg0, 0));
    let histories: Vec<Vec<EnergyReport>> = levels
        .par_iter()
        .map(|(g, dt)| {
            let m = Manufactured::unsteady(p, g);
            let cfg = StepConfig {
                dt: *dt,
                ..cfg0.clone()
            };
            let mut reports = Vec::new();
            let mut prev: Option<State> = None;
            run(&m.exact_state(g, 0.0), p, g, &cfg, &m, &mut |_, s| {
                reports.push(report_with(s, prev.as_ref(), p, g, &m.sources(g, s.time)));
                prev = Some(s.clone());
            })?;
            crate::energy::attach_balances(&mut reports);
            Ok(reports)
        })
        .collect::<Result<_, StepError>>()?;
    let mut table = Series::new("levels", &["n", "dt", "max_r_q", "max_r_vt"]);
    let mut rq = Vec::new();
    let mut rvt = Vec::new();
    for ((g, dt), h) in levels.iter().zip(&histories) {
        let (a, b) = (max_of(&check_q_balance(h)), max_of(&check_vt_balance(h)));
        table.push(vec![g.nx as f64, *dt, a, b]);
        rq.push(a);
        rvt.push(b);
    }
    let ratio_q = rq[0] / rq[1];
    let ratio_vt = rvt[0] / rvt[1];
    let (sq, svt) = histories
        .iter()
        .map(|h| min_slacks(h))
        .fold((f64::INFINITY, f64::INFINITY), |a, b| (a.0.min(b.0), a.1.min(b.1)));

    let gi = grid(bc.identity_n)?;
    let identity = (0..bc.identity_samples)
        .map(|k| check_buoyancy_identity(&random_state(&gi, p, 1000 + k, 1.0), p, &gi))
        .fold(0.0, f64::max);

    res.set("ratio_q", ratio_q);
    res.set("ratio_vt", ratio_vt);
    res.set("buoyancy_identity", identity);
    res.set("min_poincare_slack_q", sq);
    res.set("min_poincare_slack_vt", svt);
    res.series = histories
        .iter()
        .zip(["energy_coarse", "energy_fine"])
        .map(|(h, name)| Series::from_reports(name, h))
        .collect();
    res.series.insert(0, table);
    res.status = if ratio_q >= bc.min_ratio && ratio_vt >= bc.min_ratio && identity <= bc.identity_tolerance {
        Status::Pass
    } else {
        Status::Fail
    };
    res.wall_time = start.elapsed();
    Ok(res)
}

/// Minimum coefficient of determination for a fit to count.
pub const MIN_R2: f64 = 0.95;

/// Decay of `|q|_2^2` without moisture source. Fits `log |q|^2` over the
/// second half of the run and compares with `1/(2 Rt4 + 2/beta)` less a 10%
/// allowance.
pub fn exp_q_decay(
    p: &PhysParams,
    s0: &State,
    g: &Grid,
    cfg: &StepConfig,
    seed: u64,
) -> Result<ExperimentResult, ExperimentError> {
    if !p.Q2.is_zero() {
        return Err(ExperimentError::Precondition("q decay needs Q2 = 0".into()));
    }
    let start = Instant::now();
    let mut res = ExperimentResult::new("q_decay", fingerprint(g, p, cfg, seed));
    let (_, reports) = run_with_reports(s0, p, g, cfg)?;
    let rate = p.q_decay_rate();
    let threshold = -rate * 0.9;
    let mut series = Series::new("q_norm", &["t", "q_l2_sq", "log_q_l2_sq"]);
    for r in &reports {
        let q2 = r.l2_q * r.l2_q;
        series.push(vec![r.time, q2, q2.ln()]);
    }
    let (sq, svt) = min_slacks(&reports);
    res.set("paper_rate", rate);
    res.set("threshold", threshold);
    res.set("min_poincare_slack_q", sq);
    res.set("min_poincare_slack_vt", svt);

    let t0 = s0.time;
    let t_mid = t0 + 0.5 * cfg.t_end;
    let (xs, ys): (Vec<f64>, Vec<f64>) = reports
        .iter()
        .filter(|r| r.time >= t_mid && r.l2_q > 0.0)
        .map(|r| (r.time, (r.l2_q * r.l2_q).ln()))
        .unzip();
    if reports.iter().all(|r| r.l2_q == 0.0) {
        res.notes.push("q vanishes identically".into());
        res.status = Status::Pass;
    } else {
        match linear_fit(&xs, &ys) {
            Some(fit) => {
                res.set("decay_rate_fit", fit.slope);
                res.set("fit_r2", fit.r2);
                res.set("fit_t0", fit.x0);
                res.set("fit_t1", fit.x1);
                res.set("fit_rms", fit.rms);
                res.status = if fit.r2 < MIN_R2 {
                    Status::Inconclusive
                } else if fit.slope <= threshold {
                    Status::Pass
                } else {
                    Status::Fail
                };
            }
            None => {
                res.notes.push("too few snapshots in the fit window".into());
                res.status = Status::Inconclusive;
            }
        }
    }
    res.series = vec![series, Series::from_reports("energy", &reports)];
    res.wall_time = start.elapsed();
    Ok(res)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BallConfig {
    /// Length of the tail window at the end of the run.
    pub tail: f64,
    /// Allowed relative spread of tail suprema across members.
    pub tolerance: f64,
    /// Members whose tail supremum is below this fraction of their initial
    /// norm count as decayed to rest.
    pub rest_fraction: f64,
}

impl Default for BallConfig {
    fn default() -> Self {
        Self {
            tail: 2.0,
            tolerance: 0.2,
            rest_fraction: 1e-3,
        }
    }
}

struct Track {
    times: Vec<f64>,
    v: Vec<f64>,
    h2: Vec<f64>,
    slack: (f64, f64),
}

fn track(s0: &State, p: &PhysParams, g: &Grid, cfg: &StepConfig) -> Result<(State, Track), StepError> {
    let (s, reports) = run_with_reports(s0, p, g, cfg)?;
    Ok((
        s,
        Track {
            times: reports.iter().map(|r| r.time).collect(),
            v: reports.iter().map(|r| r.v_sq_total.sqrt()).collect(),
            h2: reports
                .iter()
                .map(|r| (r.h2_v.powi(2) + r.h2_t.powi(2) + r.h2_q.powi(2)).sqrt())
                .collect(),
            slack: min_slacks(&reports),
        },
    ))
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    if max > 0.0 {
        (max - min) / max
    } else {
        0.0
    }
}

/// Ensemble run from several initial states; the absorbing ball shows up as
/// tail suprema of the `V` norm and of `|L u|` that do not depend on the
/// initial radius. Members run concurrently.
pub fn exp_absorbing_ball(
    members: &[State],
    p: &PhysParams,
    g: &Grid,
    cfg: &StepConfig,
    bc: &BallConfig,
    seed: u64,
) -> Result<ExperimentResult, ExperimentError> {
    if members.is_empty() {
        return Err(ExperimentError::Precondition("empty ensemble".into()));
    }
    let start = Instant::now();
    let mut res = ExperimentResult::new("absorbing_ball", fingerprint(g, p, cfg, seed));
    let tracks: Vec<Track> = members
        .par_iter()
        .map(|s0| track(s0, p, g, cfg).map(|x| x.1))
        .collect::<Result<_, _>>()?;

    let mut series = Series::new("norms", &["member", "t", "v_norm", "h2_norm"]);
    let (mut sup_v, mut sup_h2, mut entries) = (Vec::new(), Vec::new(), Vec::new());
    let mut at_rest = true;
    for (i, tr) in tracks.iter().enumerate() {
        let t_last = *tr.times.last().expect("at least one snapshot");
        let tail_start = t_last - bc.tail;
        let sup = |x: &[f64]| {
            tr.times
                .iter()
                .zip(x)
                .filter(|(t, _)| **t >= tail_start - 1e-12)
                .map(|(_, v)| *v)
                .fold(0.0, f64::max)
        };
        sup_v.push(sup(&tr.v));
        sup_h2.push(sup(&tr.h2));
        at_rest &= sup(&tr.v) <= bc.rest_fraction * tr.v[0];
        entries.push(detect_entry_time(
            &tr.times,
            &[tr.v.clone(), tr.h2.clone()],
            tail_start,
            0.05,
            1.0,
        ));
        for n in 0..tr.times.len() {
            series.push(vec![i as f64, tr.times[n], tr.v[n], tr.h2[n]]);
        }
        res.set(&format!("initial_v_norm.{i}"), tr.v[0]);
        res.set(&format!("tail_sup_v.{i}"), sup_v[i]);
        res.set(&format!("tail_sup_h2.{i}"), sup_h2[i]);
        res.set(&format!("entry_time.{i}"), entries[i].unwrap_or(f64::NAN));
    }
    let (sv, sh) = (spread(&sup_v), spread(&sup_h2));
    res.set("spread_v", sv);
    res.set("spread_h2", sh);
    res.set(
        "min_poincare_slack_q",
        tracks.iter().map(|t| t.slack.0).fold(f64::INFINITY, f64::min),
    );
    res.set(
        "min_poincare_slack_vt",
        tracks.iter().map(|t| t.slack.1).fold(f64::INFINITY, f64::min),
    );
    let tau2 = entries
        .iter()
        .map(|e| e.unwrap_or(f64::INFINITY))
        .fold(f64::NEG_INFINITY, f64::max);
    res.set("tau2", tau2);
    res.status = if at_rest {
        res.notes.push("every member decayed to rest".into());
        Status::Pass
    } else if entries.iter().any(|e| e.is_none()) {
        res.notes.push("a member had not settled before the tail".into());
        Status::Inconclusive
    } else if sv <= bc.tolerance && sh <= bc.tolerance {
        Status::Pass
    } else {
        Status::Fail
    };
    res.series = vec![series];
    res.wall_time = start.elapsed();
    Ok(res)
}

/// Difference history of two trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinHistory {
    pub times: Vec<f64>,
    pub d_h: Vec<f64>,
    pub d_v: Vec<f64>,
}

fn snapshots(s0: &State, p: &PhysParams, g: &Grid, cfg: &StepConfig) -> Result<Vec<State>, StepError> {
    let forcing = SteadyForcing::from_params(p, g);
    let mut out = Vec::new();
    run(s0, p, g, cfg, &forcing, &mut |_, s| out.push(s.clone()))?;
    Ok(out)
}

fn state_slacks(runs: &[&[State]], p: &PhysParams, g: &Grid) -> (f64, f64) {
    let reports: Vec<EnergyReport> = runs
        .iter()
        .flat_map(|r| r.iter())
        .map(|s| report(s, None, p, g))
        .collect();
    min_slacks(&reports)
}

fn twin_history(a: &[State], b: &[State], p: &PhysParams, g: &Grid) -> TwinHistory {
    let t0 = a[0].time;
    TwinHistory {
        times: a.iter().map(|s| s.time - t0).collect(),
        d_h: a.iter().zip(b).map(|(x, y)| h_distance(x, y, g)).collect(),
        d_v: a.iter().zip(b).map(|(x, y)| v_distance(x, y, p, g)).collect(),
    }
}

fn nearest(times: &[f64], t: f64) -> usize {
    (0..times.len())
        .min_by(|&i, &j| (times[i] - t).abs().total_cmp(&(times[j] - t).abs()))
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingConfig {
    /// Time after the start at which the smoothing quotient is read.
    pub t_bar: f64,
    /// Relative perturbation sizes `|diff(0)|_H / |s0|_H`.
    pub magnitudes: Vec<f64>,
    /// Allowed relative spread of the quotient across magnitudes.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            t_bar: 1.0,
            magnitudes: vec![1e-3, 1e-4, 1e-5],
            tolerance: 0.25,
            seed: 17,
        }
    }
}

/// Fits `rho2` from `log D_H` and the smallest `rho1` with
/// `D_V(t)^2 <= rho1 ((t+1)/t) e^{rho2 t} D_H(0)^2` for `t > 0`.
fn fit_smoothing(h: &TwinHistory) -> Option<(f64, f64, LinearFit)> {
    let d0 = h.d_h[0];
    let (xs, ys): (Vec<f64>, Vec<f64>) = h
        .times
        .iter()
        .zip(&h.d_h)
        .filter(|(t, d)| **t > 0.0 && **d > 0.0)
        .map(|(t, d)| (*t, d.ln()))
        .unzip();
    let fit = linear_fit(&xs, &ys)?;
    let rho2 = fit.slope;
    let rho1 = h
        .times
        .iter()
        .zip(&h.d_v)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, dv)| dv * dv / (((t + 1.0) / t) * (rho2 * t).exp() * d0 * d0))
        .fold(0.0, f64::max);
    Some((rho1, rho2, fit))
}

fn smoothing_constants(res: &mut ExperimentResult, tag: &str, h: &TwinHistory, t_bar: f64) -> (f64, Status) {
    let d0 = h.d_h[0];
    if d0 == 0.0 {
        let exact_zero = h.d_h.iter().chain(&h.d_v).all(|&d| d == 0.0);
        res.notes.push(format!(
            "{tag}: zero perturbation, differences identically zero = {exact_zero}"
        ));
        res.set(&format!("quotient_at_tbar{tag}"), 0.0);
        return (0.0, if exact_zero { Status::Pass } else { Status::Fail });
    }
    let n = nearest(&h.times, t_bar);
    let quotient = h.d_v[n] / d0;
    res.set(&format!("d_h0{tag}"), d0);
    res.set(&format!("quotient_at_tbar{tag}"), quotient);
    let mut status = if quotient.is_finite() {
        Status::Pass
    } else {
        Status::Fail
    };
    match fit_smoothing(h) {
        Some((rho1, rho2, fit)) => {
            res.set(&format!("rho1{tag}"), rho1);
            res.set(&format!("rho2{tag}"), rho2);
            res.set(&format!("rho2_r2{tag}"), fit.r2);
            if fit.r2 < MIN_R2 {
                status = status.and(Status::Inconclusive);
            }
        }
        None => status = status.and(Status::Inconclusive),
    }
    (quotient, status)
}

fn history_series(name: &str, h: &TwinHistory, d0: f64) -> Series {
    let mut s = Series::new(name, &["t", "d_h", "d_v", "quotient"]);
    for n in 0..h.times.len() {
        let q = if d0 > 0.0 { h.d_v[n] / d0 } else { 0.0 };
        s.push(vec![h.times[n], h.d_h[n], h.d_v[n], q]);
    }
    s
}

/// Twin-trajectory smoothing check for one pair of initial states.
pub fn exp_smoothing(
    s_a: &State,
    s_b: &State,
    p: &PhysParams,
    g: &Grid,
    cfg: &StepConfig,
    t_bar: f64,
    seed: u64,
) -> Result<ExperimentResult, ExperimentError> {
    let start = Instant::now();
    let mut res = ExperimentResult::new("smoothing", fingerprint(g, p, cfg, seed));
    let (a, b) = rayon::join(|| snapshots(s_a, p, g, cfg), || snapshots(s_b, p, g, cfg));
    let h = twin_history(&a?, &b?, p, g);
    let (_, status) = smoothing_constants(&mut res, "", &h, t_bar);
    res.status = status;
    res.series.push(history_series("difference", &h, h.d_h[0]));
    res.wall_time = start.elapsed();
    Ok(res)
}

/// Smoothing quotient `|diff(t_bar)|_V / |diff(0)|_H` for several
/// perturbation sizes along one random direction. Passes when the quotient
/// is finite and its relative spread is within the tolerance.
pub fn exp_smoothing_ladder(
    base: &State,
    p: &PhysParams,
    g: &Grid,
    cfg: &StepConfig,
    sc: &SmoothingConfig,
) -> Result<ExperimentResult, ExperimentError> {
    let start = Instant::now();
    let mut res = ExperimentResult::new("smoothing", fingerprint(g, p, cfg, sc.seed));
    let scale = h_norm_sq(base, g).sqrt();
    let dir = random_state(g, p, sc.seed, 1.0);
    let mut inits = vec![base.clone()];
    for &m in &sc.magnitudes {
        let mut s = base.clone();
        s.axpy(m * scale, &dir);
        inits.push(apply_boundary_conditions(s, p, g));
    }
    let runs: Vec<Vec<State>> = inits
        .par_iter()
        .map(|s| snapshots(s, p, g, cfg))
        .collect::<Result<_, _>>()?;
    let mut quotients = Vec::new();
    let mut status = Status::Pass;
    let mut d_v_at = Vec::new();
    for (i, m) in sc.magnitudes.iter().enumerate() {
        let h = twin_history(&runs[0], &runs[i + 1], p, g);
        let tag = format!(".{m:e}");
        let (q, st) = smoothing_constants(&mut res, &tag, &h, sc.t_bar);
        quotients.push(q);
        status = status.and(st);
        d_v_at.push(h.d_v[nearest(&h.times, sc.t_bar)]);
        res.series
            .push(history_series(&format!("difference_{m:e}"), &h, h.d_h[0]));
    }
    let sp = spread(&quotients);
    res.set("quotient_spread", sp);
    let (sq, svt) = state_slacks(&runs.iter().map(|r| r.as_slice()).collect::<Vec<_>>(), p, g);
    res.set("min_poincare_slack_q", sq);
    res.set("min_poincare_slack_vt", svt);
    // linear response: D_V scales with the perturbation
    for (w, m) in d_v_at.windows(2).zip(sc.magnitudes.windows(2)) {
        let ratio = (w[0] / w[1]) / (m[0] / m[1]);
        res.set(&format!("linearity.{:e}", m[1]), ratio);
    }
    if sp > sc.tolerance || quotients.iter().any(|q| !q.is_finite()) {
        status = Status::Fail;
    }
    res.status = status;
    res.wall_time = start.elapsed();
    Ok(res)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityConfig {
    /// Allowed relative change of the Lipschitz constant under dt halving.
    pub tolerance: f64,
    /// Quotients below this fraction of `|s0|_V` per unit time count as a
    /// steady state.
    pub steady_fraction: f64,
}

impl Default for RegularityConfig {
    fn default() -> Self {
        Self {
            tolerance: 0.15,
            steady_fraction: 1e-10,
        }
    }
}

/// Largest `|S(t) s0 - S(t') s0|_V / |t - t'|` over snapshot pairs `stride`
/// apart.
pub fn lipschitz_quotient(snaps: &[State], stride: usize, p: &PhysParams, g: &Grid) -> f64 {
    snaps
        .iter()
        .zip(snaps.iter().skip(stride))
        .map(|(a, b)| v_distance(b, a, p, g) / (b.time - a.time).abs())
        .fold(0.0, f64::max)
}

/// Lipschitz-in-time constant in `V` measured with `dt` and `dt/2` on the
/// same snapshot times.
pub fn exp_time_regularity(
    s0: &State,
    p: &PhysParams,
    g: &Grid,
    cfg: &StepConfig,
    rc: &RegularityConfig,
    seed: u64,
) -> Result<ExperimentResult, ExperimentError> {
    let start = Instant::now();
    let mut res = ExperimentResult::new("time_regularity", fingerprint(g, p, cfg, seed));
    let coarse = StepConfig {
        snapshot_every: 1,
        ..cfg.clone()
    };
    let fine = StepConfig {
        dt: cfg.dt / 2.0,
        snapshot_every: 2,
        ..cfg.clone()
    };
    let (a, b) = rayon::join(|| snapshots(s0, p, g, &coarse), || snapshots(s0, p, g, &fine));
    let (a, b) = (a?, b?);
    let rho = lipschitz_quotient(&a, 1, p, g);
    let rho_half = lipschitz_quotient(&b, 1, p, g);
    let rho_2dt = lipschitz_quotient(&a, 2, p, g);
    let mut series = Series::new("quotient", &["t", "quotient_dt", "quotient_dt_half"]);
    for n in 1..a.len().min(b.len()) {
        series.push(vec![
            a[n].time,
            v_distance(&a[n], &a[n - 1], p, g) / (a[n].time - a[n - 1].time),
            v_distance(&b[n], &b[n - 1], p, g) / (b[n].time - b[n - 1].time),
        ]);
    }
    let change = (rho - rho_half).abs() / rho.max(rho_half).max(f64::MIN_POSITIVE);
    let spacing = (rho - rho_2dt).abs() / rho.max(rho_2dt).max(f64::MIN_POSITIVE);
    res.set("rho3_dt", rho);
    res.set("rho3_dt_half", rho_half);
    res.set("rho3_spacing_2dt", rho_2dt);
    res.set("dt_halving_change", change);
    res.set("spacing_change", spacing);
    let (sq, svt) = state_slacks(&[&a, &b], p, g);
    res.set("min_poincare_slack_q", sq);
    res.set("min_poincare_slack_vt", svt);
    let steady = rho.max(rho_half) <= rc.steady_fraction * v_total_sq(s0, p, g).sqrt().max(f64::MIN_POSITIVE);
    res.status = if steady {
        res.notes.push("steady state, quotient vanishes".into());
        Status::Pass
    } else if rho.is_finite() && change <= rc.tolerance {
        Status::Pass
    } else {
        Status::Fail
    };
    res.series.push(series);
    res.wall_time = start.elapsed();
    Ok(res)
}

/// Runs to `cfg.t_end` and returns the final state with the empirical
/// absorbing entry time of its `V` and `|L u|` norms, judged on the last
/// `tail` time units.
pub fn pre_evolve(
    s0: &State,
    p: &PhysParams,
    g: &Grid,
    cfg: &StepConfig,
    tail: f64,
) -> Result<(State, Option<f64>), StepError> {
    let (s, tr) = track(s0, p, g, cfg)?;
    let t_last = *tr.times.last().expect("at least one snapshot");
    let entry = detect_entry_time(&tr.times, &[tr.v, tr.h2], t_last - tail, 0.05, 1.0);
    Ok((s, entry))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveringConfig {
    pub trajectories: usize,
    /// Seed of the first trajectory; the others follow consecutively.
    pub seed: u64,
    /// `V` norm of the initial states.
    pub v_norm: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Initial stretch of each trajectory left out of the sample.
    pub skip: f64,
    /// Snapshot stride of the base sample; the doubled sample halves it.
    pub snapshot_every: usize,
    pub map_time: f64,
    pub theta: f64,
    pub k_max: usize,
    /// Allowed relative change of the bound when the sample is doubled.
    pub tolerance: f64,
}

impl Default for CoveringConfig {
    fn default() -> Self {
        Self {
            trajectories: 3,
            seed: 100,
            v_norm: 2.0,
            dt: 0.01,
            t_end: 3.5,
            skip: 1.5,
            snapshot_every: 8,
            map_time: 0.05,
            theta: 0.5,
            k_max: 6,
            tolerance: 0.25,
        }
    }
}

/// Covering estimate of the dimension of a trajectory sample of the reduced
/// solution map, repeated on a sample of twice the size.
pub fn exp_pe_covering(p: &PhysParams, g: &Grid, cc: &CoveringConfig) -> Result<ExperimentResult, ExperimentError> {
    use crate::covering::{
        build_covering, fractal_dim_bound, pe_map, pe_norms, smoothing_map, trajectory_sample, MetricCloud,
    };
    let start = Instant::now();
    if cc.snapshot_every < 2 || cc.trajectories == 0 {
        return Err(ExperimentError::Precondition(
            "need at least one trajectory and a stride of 2 or more".into(),
        ));
    }
    let traj_cfg = |every: usize| StepConfig {
        dt: cc.dt,
        t_end: cc.t_end,
        snapshot_every: every,
        ..Default::default()
    };
    let mut res = ExperimentResult::new("covering", fingerprint(g, p, &traj_cfg(cc.snapshot_every), cc.seed));
    let (n_h, n_v) = pe_norms(p, g);
    let map = pe_map(
        p,
        g,
        &StepConfig {
            dt: cc.dt,
            t_end: cc.map_time,
            snapshot_every: usize::MAX,
            ..Default::default()
        },
    );
    let mut bounds = Vec::new();
    let mut table = Series::new("samples", &["points", "k", "n_theta", "dim_bound"]);
    for every in [cc.snapshot_every, cc.snapshot_every / 2] {
        let cfg = traj_cfg(every);
        let points: Vec<Vec<f64>> = (0..cc.trajectories as u64)
            .into_par_iter()
            .map(|i| {
                let s0 = with_v_norm(&random_state(g, p, cc.seed + i, 1.0), cc.v_norm, p, g);
                trajectory_sample(&s0, p, g, &cfg, cc.skip)
            })
            .collect::<Vec<_>>()
            .concat();
        let n = points.len();
        let err = |e: crate::covering::CoveringError| ExperimentError::Precondition(e.to_string());
        let cloud = MetricCloud::new(points, n_h.clone(), n_v.clone()).map_err(err)?;
        let k = smoothing_map(&map, &cloud).map_err(err)?;
        let tree = build_covering(&map, &cloud, cc.theta, cc.k_max).map_err(err)?;
        let d = fractal_dim_bound(&tree);
        table.push(vec![n as f64, k.k, tree.n_theta, d.value]);
        if d.degenerate {
            res.notes.push(format!("N(theta) <= 1 on the {n}-point sample"));
        }
        bounds.push(d.value);
    }
    let change = (bounds[1] - bounds[0]).abs() / bounds[0].abs().max(f64::MIN_POSITIVE);
    res.set("dim_bound", bounds[0]);
    res.set("dim_bound_doubled", bounds[1]);
    res.set("relative_change", change);
    res.series = vec![table];
    res.status = if bounds.iter().any(|b| !b.is_finite()) {
        Status::Fail
    } else if change <= cc.tolerance {
        Status::Pass
    } else {
        Status::Fail
    };
    res.wall_time = start.elapsed();
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::state_boundary_residual;

    #[test]
    fn linear_fit_recovers_a_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|t| -0.7 * t + 2.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 0.7).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[2.0]).is_none());
    }

    #[test]
    fn noisy_fit_has_low_r2() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!(linear_fit(&x, &y).unwrap().r2 < MIN_R2);
    }

    #[test]
    fn orders_of_a_quadratic_sequence() {
        let o = observed_orders(&[1.0, 0.25, 0.0625], 2.0);
        assert!(o.iter().all(|v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn entry_time_of_a_relaxing_signal() {
        let t: Vec<f64> = (0..=400).map(|i| i as f64 * 0.02).collect();
        let v: Vec<f64> = t.iter().map(|s| 1.0 + 3.0 * (-2.0 * s).exp()).collect();
        let e = detect_entry_time(&t, &[v], 6.0, 0.05, 1.0).unwrap();
        // 3 e^{-2t} <= 0.05 once t >= ln(60)/2
        assert!((e - 60f64.ln() / 2.0).abs() < 0.03, "{e}");
        let decaying: Vec<f64> = t.iter().map(|s| (-s).exp()).collect();
        assert!(detect_entry_time(&t, &[decaying], 6.0, 0.05, 1.0).is_none());
    }

    #[test]
    fn fingerprint_changes_with_every_ingredient() {
        let g = Grid::cube(8).unwrap();
        let p = PhysParams::default();
        let c = StepConfig::default();
        let f = fingerprint(&g, &p, &c, 1);
        assert_eq!(f, fingerprint(&g, &p, &c, 1));
        assert_eq!(f.len(), 64);
        assert_ne!(f, fingerprint(&g, &p, &c, 2));
        assert_ne!(f, fingerprint(&Grid::cube(10).unwrap(), &p, &c, 1));
        let c2 = StepConfig { dt: 0.005, ..c.clone() };
        assert_ne!(f, fingerprint(&g, &p, &c2, 1));
        let p2 = PhysParams { Rt4: 2.0, ..p.clone() };
        assert_ne!(f, fingerprint(&g, &p2, &c, 1));
    }

    #[test]
    fn random_state_is_admissible_and_seeded() {
        let g = Grid::new(8, 6, 8, 1.0, 0.8).unwrap();
        let p = PhysParams::default();
        let a = random_state(&g, &p, 5, 2.0);
        assert!(state_boundary_residual(&a, &p, &g) < 1e-12);
        assert!(crate::projection::mean_divergence(&a.v1, &a.v2, &g) < 1e-10);
        assert!((h_norm_sq(&a, &g).sqrt() - 2.0).abs() < 1e-12);
        assert_eq!(a, random_state(&g, &p, 5, 2.0));
        assert_ne!(a, random_state(&g, &p, 6, 2.0));
        let b = with_v_norm(&a, 3.0, &p, &g);
        assert!((v_total_sq(&b, &p, &g).sqrt() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_initial_moisture_passes_trivially() {
        let g = Grid::cube(6).unwrap();
        let p = PhysParams::default();
        let mut s = random_state(&g, &p, 1, 0.1);
        s.q = Field3D::zeros(&g);
        let cfg = StepConfig {
            dt: 0.05,
            t_end: 0.5,
            snapshot_every: 1,
            ..Default::default()
        };
        let r = exp_q_decay(&p, &s, &g, &cfg, 1).unwrap();
        assert_eq!(r.status, Status::Pass);
        let q2 = r.series("q_norm").unwrap().column("q_l2_sq").unwrap();
        assert!(q2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn q_decay_requires_zero_source() {
        let g = Grid::cube(4).unwrap();
        let p = PhysParams {
            Q2: ForcingSpec::mode(1.0, 1, 0, 0),
            ..Default::default()
        };
        let s = State::zeros(&g);
        assert!(matches!(
            exp_q_decay(&p, &s, &g, &StepConfig::default(), 0),
            Err(ExperimentError::Precondition(_))
        ));
    }

    #[test]
    fn q_decay_rate_is_grid_consistent() {
        let p = PhysParams::default();
        let cfg = StepConfig {
            dt: 0.01,
            t_end: 3.0,
            snapshot_every: 10,
            ..Default::default()
        };
        let fit = |n: usize| {
            let g = Grid::cube(n).unwrap();
            let s = random_state(&g, &p, 3, 0.5);
            let r = exp_q_decay(&p, &s, &g, &cfg, 3).unwrap();
            assert_eq!(r.status, Status::Pass);
            r.constant("decay_rate_fit").unwrap()
        };
        let (a, b) = (fit(8), fit(16));
        assert!((a - b).abs() <= 0.05 * b.abs(), "{a} {b}");
    }

    #[test]
    fn identical_twins_stay_identical() {
        let g = Grid::cube(6).unwrap();
        let p = PhysParams {
            Q1: ForcingSpec::mode(2.0, 1, 1, 0),
            ..Default::default()
        };
        let s = random_state(&g, &p, 2, 0.5);
        let cfg = StepConfig {
            dt: 0.05,
            t_end: 1.0,
            snapshot_every: 2,
            ..Default::default()
        };
        let r = exp_smoothing(&s, &s, &p, &g, &cfg, 1.0, 0).unwrap();
        assert_eq!(r.status, Status::Pass);
        let s = r.series("difference").unwrap();
        assert!(s
            .column("d_h")
            .unwrap()
            .iter()
            .chain(&s.column("d_v").unwrap())
            .all(|&d| d == 0.0));
    }

    #[test]
    fn zero_forcing_ensemble_decays_to_rest() {
        let g = Grid::cube(6).unwrap();
        let p = PhysParams::default();
        let base = random_state(&g, &p, 9, 1.0);
        let members: Vec<State> = [0.5, 1.0, 2.0].iter().map(|&r| with_v_norm(&base, r, &p, &g)).collect();
        let cfg = StepConfig {
            dt: 0.05,
            t_end: 14.0,
            snapshot_every: 10,
            ..Default::default()
        };
        let r = exp_absorbing_ball(&members, &p, &g, &cfg, &BallConfig::default(), 9).unwrap();
        assert_eq!(r.status, Status::Pass, "{}", r.manifest());
        assert!(r.constant("tail_sup_v.2").unwrap() < 1e-3 * r.constant("initial_v_norm.2").unwrap());
    }

    #[test]
    fn steady_state_has_vanishing_time_quotient() {
        let g = Grid::cube(4).unwrap();
        let p = PhysParams::default();
        let s = State::zeros(&g);
        let cfg = StepConfig {
            dt: 0.1,
            t_end: 0.5,
            ..Default::default()
        };
        let r = exp_time_regularity(&s, &p, &g, &cfg, &RegularityConfig::default(), 0).unwrap();
        assert_eq!(r.status, Status::Pass);
        assert_eq!(r.constant("rho3_dt"), Some(0.0));
    }

    #[test]
    fn manifest_lists_constants_and_series() {
        let mut r = ExperimentResult::new("demo", "abc".into());
        r.set("k", 1.5);
        r.series.push(Series::new("s", &["a", "b"]));
        r.series[0].push(vec![1.0, f64::NAN]);
        let m = r.manifest();
        assert!(m.contains("status=pass") && m.contains("k=1.5") && m.contains("series.s=demo_s.csv"));
        assert_eq!(r.series[0].to_csv(), "a,b\n1.0,\n");
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        assert!(dir.path().join("demo_manifest.txt").exists());
        assert!(dir.path().join("demo_s.csv").exists());
    }
}
