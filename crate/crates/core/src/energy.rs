//! Norms, energy functionals and balance residuals.
//!
//! The `V` norms are assembled from forward-difference cell sums
//! ([`forward_gradient_sq`]) plus the Robin surface terms, which is exactly
//! the quadratic form `<L u, u>` of the discrete diffusion operators. With
//! that choice the Poincare inequalities hold for every grid function, not
//! just up to truncation error. Pointwise derivative fields used for the
//! `L^6` norms (and the matching `L^2` norms of `v_z`, `T_z`, `q_z`) use the
//! node stencils of the dynamics instead.

use std::f64::consts::PI;

use crate::dynamics::{buoyancy_gradient, diffusion_of, Sources};
use crate::field::{Field2D, Field3D};
use crate::grid::Grid;
use crate::hydrostatics::{diagnose_w, split_barotropic};
use crate::ops::{dz_one_sided, forward_gradient_sq, inner, l2, top_surface_sq};
use crate::params::PhysParams;
use crate::state::{FieldKind, State};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyReport {
    pub time: f64,

    pub l2_v: f64,
    pub l2_t: f64,
    pub l2_q: f64,
    pub h_norm: f64,

    /// Squared `V` norms.
    pub v_sq_v: f64,
    pub v_sq_t: f64,
    pub v_sq_q: f64,
    pub v_sq_total: f64,

    pub l6_q: f64,
    pub l6_t: f64,
    pub l6_v_tilde: f64,
    pub l6_vz: f64,
    pub l6_tz: f64,
    pub l6_qz: f64,

    pub l2_vz: f64,
    pub l2_tz: f64,
    pub l2_qz: f64,

    pub top_l2_q: f64,
    pub top_l2_t: f64,
    pub top_l6_q: f64,
    pub top_l6_t: f64,

    pub grad_v: f64,
    pub grad_t: f64,
    pub grad_q: f64,
    pub grad_v_bar: f64,

    /// `|L1 v|`, `|L2 T|`, `|L3 q|`.
    pub h2_v: f64,
    pub h2_t: f64,
    pub h2_q: f64,

    pub dt_v: Option<f64>,
    pub dt_t: Option<f64>,
    pub dt_q: Option<f64>,

    /// `<Q1, T>` and `<Q2, q>`.
    pub work_q1: f64,
    pub work_q2: f64,
    /// `<S_v, v>`; zero for the physical forcing, which has no momentum source.
    pub work_v: f64,

    /// Filled in by [`attach_balances`] from neighbouring reports.
    pub r_q: Option<f64>,
    pub r_vt: Option<f64>,
    pub r_poincare_q: f64,
    pub r_poincare_vt: f64,
}

/// Best constant of the discrete Dirichlet Poincare inequality on `M`:
/// `|v|_2^2 <= C_M |v|^2` for velocities vanishing on their normal walls.
pub fn c_m(p: &PhysParams, g: &Grid) -> f64 {
    let lam = |h: f64, l: f64| 4.0 / (h * h) * (PI * h / (2.0 * l)).sin().powi(2);
    p.Re1 * (1.0 / lam(g.hx, g.lx)).max(1.0 / lam(g.hy, g.ly))
}

fn weighted_power_sum(vals: impl Iterator<Item = (f64, f64)>) -> f64 {
    vals.map(|(w, v)| w * v).sum()
}

fn l6(f: &Field3D, g: &Grid) -> f64 {
    weighted_power_sum(
        f.node_indices()
            .map(|(i, j, k, n)| (g.weight3(i, j, k), f.at(n).powi(6))),
    )
    .powf(1.0 / 6.0)
}

fn l6_pair(a: &Field3D, b: &Field3D, g: &Grid) -> f64 {
    weighted_power_sum(
        a.node_indices()
            .map(|(i, j, k, n)| (g.weight3(i, j, k), (a.at(n).powi(2) + b.at(n).powi(2)).powi(3))),
    )
    .powf(1.0 / 6.0)
}

fn top_l6(f: &Field3D, g: &Grid) -> f64 {
    let mut s = 0.0;
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            s += g.weight2(i, j) * f.get(i, j, g.nz).powi(6);
        }
    }
    s.powf(1.0 / 6.0)
}

fn dz_field(f: &Field3D, g: &Grid) -> Field3D {
    let mut out = Field3D::zeros(g);
    for (i, j, k, n) in f.node_indices() {
        out.raw_mut()[n] = dz_one_sided(f, i, j, k, g);
    }
    out
}

fn horizontal_sq(f: &Field3D, g: &Grid) -> f64 {
    forward_gradient_sq(f, 0, g) + forward_gradient_sq(f, 1, g)
}

/// `|grad u|^2` of a field on `M` with forward differences.
fn grad_sq_2d(f: &Field2D, g: &Grid) -> f64 {
    let (wx, wy) = (g.wx(), g.wy());
    let mut s = 0.0;
    for j in 0..=g.ny {
        for i in 0..g.nx {
            let d = (f.get(i + 1, j) - f.get(i, j)) / g.hx;
            s += wy[j] * g.hx * d * d;
        }
    }
    for j in 0..g.ny {
        for i in 0..=g.nx {
            let d = (f.get(i, j + 1) - f.get(i, j)) / g.hy;
            s += wx[i] * g.hy * d * d;
        }
    }
    s
}

/// Squared `V` norm of one prognostic field: the diffusion form plus the
/// Robin surface term.
pub fn v_norm_sq(u: &Field3D, kind: FieldKind, p: &PhysParams, g: &Grid) -> f64 {
    let (ch, cv) = kind.diffusivity(p);
    let mut s = ch * horizontal_sq(u, g) + cv * forward_gradient_sq(u, 2, g);
    match kind {
        FieldKind::Temperature => s += p.alpha * top_surface_sq(u, g),
        FieldKind::Moisture => s += p.beta * top_surface_sq(u, g),
        _ => {}
    }
    s
}

pub fn h_norm_sq(s: &State, g: &Grid) -> f64 {
    FieldKind::ALL.iter().map(|&k| inner(s.field(k), s.field(k), g)).sum()
}

pub fn v_total_sq(s: &State, p: &PhysParams, g: &Grid) -> f64 {
    FieldKind::ALL.iter().map(|&k| v_norm_sq(s.field(k), k, p, g)).sum()
}

/// Full report with the forcings of `p`.
pub fn report(s: &State, prev: Option<&State>, p: &PhysParams, g: &Grid) -> EnergyReport {
    report_with(s, prev, p, g, &Sources::from_params(p, g))
}

pub fn report_with(s: &State, prev: Option<&State>, p: &PhysParams, g: &Grid, src: &Sources) -> EnergyReport {
    let mut r = EnergyReport {
        time: s.time,
        ..Default::default()
    };
    let (lv2, lt2, lq2) = (
        inner(&s.v1, &s.v1, g) + inner(&s.v2, &s.v2, g),
        inner(&s.t, &s.t, g),
        inner(&s.q, &s.q, g),
    );
    r.l2_v = lv2.sqrt();
    r.l2_t = lt2.sqrt();
    r.l2_q = lq2.sqrt();
    r.h_norm = (lv2 + lt2 + lq2).sqrt();

    r.v_sq_v = v_norm_sq(&s.v1, FieldKind::V1, p, g) + v_norm_sq(&s.v2, FieldKind::V2, p, g);
    r.v_sq_t = v_norm_sq(&s.t, FieldKind::Temperature, p, g);
    r.v_sq_q = v_norm_sq(&s.q, FieldKind::Moisture, p, g);
    r.v_sq_total = r.v_sq_v + r.v_sq_t + r.v_sq_q;

    let (_, (vt1, vt2)) = split_barotropic(s, g);
    let (vz1, vz2, tz, qz) = (
        dz_field(&s.v1, g),
        dz_field(&s.v2, g),
        dz_field(&s.t, g),
        dz_field(&s.q, g),
    );
    r.l6_q = l6(&s.q, g);
    r.l6_t = l6(&s.t, g);
    r.l6_v_tilde = l6_pair(&vt1, &vt2, g);
    r.l6_vz = l6_pair(&vz1, &vz2, g);
    r.l6_tz = l6(&tz, g);
    r.l6_qz = l6(&qz, g);
    r.l2_vz = (inner(&vz1, &vz1, g) + inner(&vz2, &vz2, g)).sqrt();
    r.l2_tz = l2(&tz, g);
    r.l2_qz = l2(&qz, g);

    r.top_l2_q = top_surface_sq(&s.q, g).sqrt();
    r.top_l2_t = top_surface_sq(&s.t, g).sqrt();
    r.top_l6_q = top_l6(&s.q, g);
    r.top_l6_t = top_l6(&s.t, g);

    r.grad_v = (horizontal_sq(&s.v1, g) + horizontal_sq(&s.v2, g)).sqrt();
    r.grad_t = horizontal_sq(&s.t, g).sqrt();
    r.grad_q = horizontal_sq(&s.q, g).sqrt();
    let ((b1, b2), _) = split_barotropic(s, g);
    r.grad_v_bar = (grad_sq_2d(&b1, g) + grad_sq_2d(&b2, g)).sqrt();

    let lop = |k: FieldKind| {
        let l = diffusion_of(s.field(k), k, p, g);
        inner(&l, &l, g)
    };
    r.h2_v = (lop(FieldKind::V1) + lop(FieldKind::V2)).sqrt();
    r.h2_t = lop(FieldKind::Temperature).sqrt();
    r.h2_q = lop(FieldKind::Moisture).sqrt();

    if let Some(prev) = prev {
        let dt = s.time - prev.time;
        if dt != 0.0 {
            let d = s.diff(prev);
            r.dt_v = Some((inner(&d.v1, &d.v1, g) + inner(&d.v2, &d.v2, g)).sqrt() / dt.abs());
            r.dt_t = Some(l2(&d.t, g) / dt.abs());
            r.dt_q = Some(l2(&d.q, g) / dt.abs());
        }
    }

    r.work_q1 = inner(&src.t, &s.t, g);
    r.work_q2 = inner(&src.q, &s.q, g);
    r.work_v = inner(&src.v1, &s.v1, g) + inner(&src.v2, &s.v2, g);

    r.r_poincare_q = r.v_sq_q - lq2 / p.poincare_q();
    r.r_poincare_vt = r.v_sq_v + r.v_sq_t - lv2 / c_m(p, g) - lt2 / p.poincare_t();
    r
}

/// Poincare slacks rescaled by the `V` norms they bound; a value below
/// `-1e-12` means the inequality is violated beyond round-off.
pub fn poincare_slack_ratio(r: &EnergyReport) -> (f64, f64) {
    let q = if r.v_sq_q > 0.0 { r.r_poincare_q / r.v_sq_q } else { 0.0 };
    let scale = r.v_sq_v + r.v_sq_t;
    let vt = if scale > 0.0 { r.r_poincare_vt / scale } else { 0.0 };
    (q, vt)
}

/// Residual of `1/2 d/dt |q|^2 + |q|^2 = <Q2, q>` at every interior report,
/// with centered differences in time. Fewer than three reports give an
/// empty series.
pub fn check_q_balance(history: &[EnergyReport]) -> Vec<f64> {
    centered(history, |r| 0.5 * r.l2_q * r.l2_q, |r| r.v_sq_q - r.work_q2)
}

/// Residual of the summed `(v, T)` balance, taken as the identity
/// `1/2 d/dt (|v|^2 + |T|^2) + |v|^2 + |T|^2 = <Q1, T> + <S_v, v>` that precedes the
/// inequality; buoyancy work cancels and Coriolis does none.
pub fn check_vt_balance(history: &[EnergyReport]) -> Vec<f64> {
    centered(
        history,
        |r| 0.5 * (r.l2_v * r.l2_v + r.l2_t * r.l2_t),
        |r| r.v_sq_v + r.v_sq_t - r.work_q1 - r.work_v,
    )
}

fn centered(h: &[EnergyReport], e: impl Fn(&EnergyReport) -> f64, rest: impl Fn(&EnergyReport) -> f64) -> Vec<f64> {
    if h.len() < 3 {
        return Vec::new();
    }
    (1..h.len() - 1)
        .map(|n| {
            let de = (e(&h[n + 1]) - e(&h[n - 1])) / (h[n + 1].time - h[n - 1].time);
            (de + rest(&h[n])).abs()
        })
        .collect()
}

/// Stores the balance residuals of [`check_q_balance`] and
/// [`check_vt_balance`] in the interior reports.
pub fn attach_balances(history: &mut [EnergyReport]) {
    let (rq, rvt) = (check_q_balance(history), check_vt_balance(history));
    for (n, (a, b)) in rq.into_iter().zip(rvt).enumerate() {
        history[n + 1].r_q = Some(a);
        history[n + 1].r_vt = Some(b);
    }
}

/// The two sides of the buoyancy-work identity,
/// `<J[(bP/p) grad((1+aq)T)], v>` and `<(bP/p)(1+aq) int_0^z div v, T>`.
pub fn buoyancy_work(s: &State, p: &PhysParams, g: &Grid) -> (f64, f64) {
    let (b1, b2) = buoyancy_gradient(s, p, g);
    let lhs = inner(&b1, &s.v1, g) + inner(&b2, &s.v2, g);
    let w = diagnose_w(s, g);
    let prof = p.buoyancy_profile(g);
    let mut rhs = 0.0;
    for (i, j, k, n) in s.t.node_indices() {
        // int_0^z div v = -w
        rhs -= g.weight3(i, j, k) * prof[k] * (1.0 + p.a * s.q.at(n)) * w.at(n) * s.t.at(n);
    }
    (lhs, rhs)
}

/// `|lhs - rhs| / (1 + |lhs| + |rhs|)` of the buoyancy-work identity.
pub fn check_buoyancy_identity(s: &State, p: &PhysParams, g: &Grid) -> f64 {
    let (a, b) = buoyancy_work(s, p, g);
    (a - b).abs() / (1.0 + a.abs() + b.abs())
}

impl EnergyReport {
    /// Column names and values in the fixed CSV order.
    pub fn columns(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("time", Some(self.time)),
            ("l2_v", Some(self.l2_v)),
            ("l2_t", Some(self.l2_t)),
            ("l2_q", Some(self.l2_q)),
            ("h_norm", Some(self.h_norm)),
            ("v_sq_v", Some(self.v_sq_v)),
            ("v_sq_t", Some(self.v_sq_t)),
            ("v_sq_q", Some(self.v_sq_q)),
            ("v_sq_total", Some(self.v_sq_total)),
            ("l6_q", Some(self.l6_q)),
            ("l6_t", Some(self.l6_t)),
            ("l6_v_tilde", Some(self.l6_v_tilde)),
            ("l6_vz", Some(self.l6_vz)),
            ("l6_tz", Some(self.l6_tz)),
            ("l6_qz", Some(self.l6_qz)),
            ("l2_vz", Some(self.l2_vz)),
            ("l2_tz", Some(self.l2_tz)),
            ("l2_qz", Some(self.l2_qz)),
            ("top_l2_q", Some(self.top_l2_q)),
            ("top_l2_t", Some(self.top_l2_t)),
            ("top_l6_q", Some(self.top_l6_q)),
            ("top_l6_t", Some(self.top_l6_t)),
            ("grad_v", Some(self.grad_v)),
            ("grad_t", Some(self.grad_t)),
            ("grad_q", Some(self.grad_q)),
            ("grad_v_bar", Some(self.grad_v_bar)),
            ("h2_v", Some(self.h2_v)),
            ("h2_t", Some(self.h2_t)),
            ("h2_q", Some(self.h2_q)),
            ("dt_v", self.dt_v),
            ("dt_t", self.dt_t),
            ("dt_q", self.dt_q),
            ("work_q1", Some(self.work_q1)),
            ("work_q2", Some(self.work_q2)),
            ("work_v", Some(self.work_v)),
            ("r_q", self.r_q),
            ("r_vt", self.r_vt),
            ("r_poincare_q", Some(self.r_poincare_q)),
            ("r_poincare_vt", Some(self.r_poincare_vt)),
        ]
    }

    pub fn csv_header() -> String {
        EnergyReport::default()
            .columns()
            .iter()
            .map(|(k, _)| *k)
            .collect::<Vec<_>>()
            .join(",")
    }

    /// One CSV row; absent values are empty fields. Floats use the shortest
    /// round-trip representation.
    pub fn csv_row(&self) -> String {
        self.columns()
            .iter()
            .map(|(_, v)| v.map(|x| format!("{x:?}")).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Every norm is finite and nonnegative.
    pub fn norms_are_sane(&self) -> bool {
        self.columns()
            .iter()
            .filter(|(k, _)| !k.starts_with("r_") && !k.starts_with("work") && *k != "time")
            .all(|(_, v)| v.is_none_or(|x| x.is_finite() && x >= 0.0))
    }
}
