//! Semi-implicit time stepping.
//!
//! One step: explicit transport, Coriolis, buoyancy and sources (forward
//! Euler, sources at `t + theta dt`); theta-scheme diffusion
//! `(I + theta dt L) u* = u + dt E - (1 - theta) dt L u` per field by CG;
//! projection onto the barotropic constraint; ghost refill.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::dynamics::{diffusion_of, explicit_tendency, Forcing};
use crate::field::{Field2D, Field3D};
use crate::grid::Grid;
use crate::hydrostatics::diagnose_w;
use crate::params::PhysParams;
use crate::projection::{project, EllipticSolve};
use crate::solver::{conjugate_gradient, SolverError};
use crate::state::{apply_boundary_conditions_in_place, fill_ghosts, FaceBc, FieldKind, State};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("stepping.{key} = {value} is out of range ({reason})")]
    OutOfRange {
        key: &'static str,
        value: f64,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub dt: f64,
    pub t_end: f64,
    pub cfl_max: f64,
    /// 1 for backward Euler, 0.5 for Crank-Nicolson.
    pub theta: f64,
    pub snapshot_every: usize,
    pub diffusion_tol: f64,
    pub projection_tol: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_end: 1.0,
            cfl_max: 0.5,
            theta: 1.0,
            snapshot_every: 10,
            diffusion_tol: 1e-10,
            projection_tol: 1e-8,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key, value, reason| Err(ConfigError::OutOfRange { key, value, reason });
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", self.dt, "must be positive");
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return bad("t_end", self.t_end, "must be nonnegative");
        }
        if !(self.cfl_max > 0.0 && self.cfl_max <= 1.0) {
            return bad("cfl_max", self.cfl_max, "must lie in (0, 1]");
        }
        if self.theta != 0.5 && self.theta != 1.0 {
            return bad("theta_scheme", self.theta, "must be 0.5 or 1");
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every", 0.0, "must be at least 1");
        }
        Ok(())
    }

    /// Number of steps to reach `t_end`; exact multiples of `dt` are honoured
    /// despite round-off in the quotient.
    pub fn step_count(&self) -> usize {
        let r = self.t_end / self.dt;
        if (r - r.round()).abs() <= 1e-9 * r.max(1.0) {
            r.round() as usize
        } else {
            r.ceil() as usize
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("CFL {cfl:.3} exceeds {max} at t = {time}")]
    CflViolation { cfl: f64, max: f64, time: f64 },
    #[error("{source} at t = {time}")]
    NonConvergence {
        #[source]
        source: SolverError,
        time: f64,
    },
    #[error("non-finite values at t = {time}")]
    NonFinite { time: f64, state: Box<State> },
}

impl StepError {
    pub fn time(&self) -> f64 {
        match self {
            StepError::CflViolation { time, .. }
            | StepError::NonConvergence { time, .. }
            | StepError::NonFinite { time, .. } => *time,
        }
    }
}

/// Telemetry of one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub cfl: f64,
    pub diffusion_iters: [usize; 4],
    pub projection_iters: usize,
    pub projection_residual: f64,
    pub phi_s: Field2D,
}

/// Advective CFL number `dt max(|v1|/hx + |v2|/hy + |w|/hz)`.
pub fn cfl_number(s: &State, dt: f64, g: &Grid) -> f64 {
    let w = diagnose_w(s, g);
    let mut m: f64 = 0.0;
    for (_, _, _, n) in s.v1.node_indices() {
        m = m.max(s.v1.at(n).abs() / g.hx + s.v2.at(n).abs() / g.hy + w.at(n).abs() / g.hz);
    }
    dt * m
}

fn node_weights(g: &Grid) -> Vec<f64> {
    let f = Field3D::zeros(g);
    let mut w = vec![0.0; f.raw().len()];
    for (i, j, k, n) in f.node_indices() {
        w[n] = g.weight3(i, j, k);
    }
    w
}

fn dirichlet_mask(kind: FieldKind, p: &PhysParams, g: &Grid) -> Vec<bool> {
    let bc = kind.boundary(p);
    let f = Field3D::zeros(g);
    let mut m = vec![false; f.raw().len()];
    for (i, j, _, n) in f.node_indices() {
        m[n] = (bc.x == FaceBc::Dirichlet && (i == 0 || i == g.nx))
            || (bc.y == FaceBc::Dirichlet && (j == 0 || j == g.ny));
    }
    m
}

/// Solves `(I + c L) u = rhs` for one field, warm-started from `guess`.
/// Nodes carrying a Dirichlet condition are held at zero.
pub fn implicit_diffusion(
    rhs: &Field3D,
    guess: &Field3D,
    kind: FieldKind,
    c: f64,
    tol: f64,
    p: &PhysParams,
    g: &Grid,
) -> Result<(Field3D, usize), SolverError> {
    let bc = kind.boundary(p);
    let (ch, cv) = kind.diffusivity(p);
    let w = node_weights(g);
    let mask = dirichlet_mask(kind, p, g);
    let mut b = vec![0.0; w.len()];
    let mut x = vec![0.0; w.len()];
    for n in 0..w.len() {
        if w[n] > 0.0 && !mask[n] {
            b[n] = rhs.at(n);
            x[n] = guess.at(n);
        }
    }
    let mut tmp = Field3D::zeros(g);
    let apply = |v: &[f64], out: &mut [f64]| {
        tmp.raw_mut().copy_from_slice(v);
        fill_ghosts(&mut tmp, &bc, g);
        let l = crate::dynamics::diffusion(&tmp, ch, cv, g);
        for n in 0..out.len() {
            out[n] = if w[n] == 0.0 {
                0.0
            } else if mask[n] {
                v[n]
            } else {
                tmp.at(n) + c * l.at(n)
            };
        }
    };
    let stats = conjugate_gradient("implicit diffusion", &w, &b, &mut x, tol, 0.0, 1000, apply)?;
    let mut out = Field3D::zeros(g);
    out.raw_mut().copy_from_slice(&x);
    fill_ghosts(&mut out, &bc, g);
    Ok((out, stats.iterations))
}

/// Advances `s` by one step of size `cfg.dt`.
pub fn step(
    s: &State,
    p: &PhysParams,
    g: &Grid,
    cfg: &StepConfig,
    forcing: &dyn Forcing,
    es: &mut EllipticSolve,
) -> Result<(State, StepInfo), StepError> {
    let (dt, theta) = (cfg.dt, cfg.theta);
    let time = s.time;
    let cfl = cfl_number(s, dt, g);
    if cfl > cfg.cfl_max {
        return Err(StepError::CflViolation {
            cfl,
            max: cfg.cfl_max,
            time,
        });
    }
    let src = forcing.sources(time + theta * dt, g);
    let e = explicit_tendency(s, &src, p, g);
    let mut next = State::zeros(g);
    next.time = time + dt;
    let mut iters = [0; 4];
    for (c, kind) in FieldKind::ALL.into_iter().enumerate() {
        let u = s.field(kind);
        let mut rhs = u.clone();
        rhs.axpy(dt, e.field(kind));
        if theta < 1.0 {
            rhs.axpy(-(1.0 - theta) * dt, &diffusion_of(u, kind, p, g));
        }
        let (solved, it) = implicit_diffusion(&rhs, u, kind, theta * dt, cfg.diffusion_tol, p, g)
            .map_err(|source| StepError::NonConvergence { source, time })?;
        *next.field_mut(kind) = solved;
        iters[c] = it;
    }
    es.tolerance = cfg.projection_tol;
    let (v1, v2, phi_s) =
        project(&next.v1, &next.v2, dt, g, es).map_err(|source| StepError::NonConvergence { source, time })?;
    next.v1 = v1;
    next.v2 = v2;
    apply_boundary_conditions_in_place(&mut next, p, g);
    if !next.is_finite() {
        return Err(StepError::NonFinite {
            time: next.time,
            state: Box::new(next),
        });
    }
    Ok((
        next,
        StepInfo {
            cfl,
            diffusion_iters: iters,
            projection_iters: es.last_iters,
            projection_residual: es.last_residual,
            phi_s,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub state: State,
    pub steps: usize,
    /// Steps rejected and retried; always zero since dt is fixed.
    pub rejections: usize,
    pub wall_time: Duration,
    pub max_cfl: f64,
    pub max_projection_iters: usize,
}

/// Iterates [`step`] until `t_end`. `sink(step_index, state)` sees the
/// initial state, every `snapshot_every`-th state and the final one.
pub fn run(
    s0: &State,
    p: &PhysParams,
    g: &Grid,
    cfg: &StepConfig,
    forcing: &dyn Forcing,
    sink: &mut dyn FnMut(usize, &State),
) -> Result<RunResult, StepError> {
    let start = Instant::now();
    let n = cfg.step_count();
    let t0 = s0.time;
    let mut es = EllipticSolve::new(cfg.projection_tol);
    let mut s = s0.clone();
    let (mut max_cfl, mut max_proj) = (0.0f64, 0usize);
    sink(0, &s);
    for k in 1..=n {
        let (mut next, info) = step(&s, p, g, cfg, forcing, &mut es)?;
        next.time = t0 + k as f64 * cfg.dt;
        max_cfl = max_cfl.max(info.cfl);
        max_proj = max_proj.max(info.projection_iters);
        s = next;
        if k % cfg.snapshot_every == 0 || k == n {
            sink(k, &s);
        }
    }
    Ok(RunResult {
        state: s,
        steps: n,
        rejections: 0,
        wall_time: start.elapsed(),
        max_cfl,
        max_projection_iters: max_proj,
    })
}
