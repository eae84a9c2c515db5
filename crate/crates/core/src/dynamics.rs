//! Right-hand side of the prognostic system.
//!
//! ```text
//! dv/dt = -(v.grad)v - w dv/dz - (f/Ro) v_perp - L1 v + J[(bP/p) grad((1+aq)T)] - grad Phi_s
//! dT/dt = -v.grad T - w dT/dz - L2 T + (bP/p)(1+aq) w + Q1
//! dq/dt = -v.grad q - w dq/dz - L3 q + Q2
//! ```
//!
//! with `w = -int_0^z div v` and `J` the adjoint cumulative integral from
//! [`crate::ops::cumulative_adjoint`]. The `grad Phi_s` term is left to the
//! projection.

use std::borrow::Cow;

use crate::field::Field3D;
use crate::grid::Grid;
use crate::hydrostatics::diagnose_w;
use crate::ops::{cumulative_adjoint, dz_one_sided, sbp_dx, sbp_dy};
use crate::params::PhysParams;
use crate::state::{FieldKind, State};

#[derive(Debug, Clone, PartialEq)]
pub struct Tendency {
    pub dv1: Field3D,
    pub dv2: Field3D,
    pub dt: Field3D,
    pub dq: Field3D,
}

impl Tendency {
    pub fn zeros(g: &Grid) -> Self {
        Self {
            dv1: Field3D::zeros(g),
            dv2: Field3D::zeros(g),
            dt: Field3D::zeros(g),
            dq: Field3D::zeros(g),
        }
    }

    pub fn field(&self, kind: FieldKind) -> &Field3D {
        match kind {
            FieldKind::V1 => &self.dv1,
            FieldKind::V2 => &self.dv2,
            FieldKind::Temperature => &self.dt,
            FieldKind::Moisture => &self.dq,
        }
    }

    pub fn field_mut(&mut self, kind: FieldKind) -> &mut Field3D {
        match kind {
            FieldKind::V1 => &mut self.dv1,
            FieldKind::V2 => &mut self.dv2,
            FieldKind::Temperature => &mut self.dt,
            FieldKind::Moisture => &mut self.dq,
        }
    }

    pub fn is_finite(&self) -> bool {
        FieldKind::ALL.iter().all(|&k| self.field(k).is_finite())
    }
}

/// Source terms added to the four equations. The paper only forces `T` and
/// `q`; the momentum sources exist for manufactured solutions.
#[derive(Debug, Clone, PartialEq)]
pub struct Sources {
    pub v1: Field3D,
    pub v2: Field3D,
    pub t: Field3D,
    pub q: Field3D,
}

impl Sources {
    pub fn zeros(g: &Grid) -> Self {
        Self {
            v1: Field3D::zeros(g),
            v2: Field3D::zeros(g),
            t: Field3D::zeros(g),
            q: Field3D::zeros(g),
        }
    }

    pub fn from_params(p: &PhysParams, g: &Grid) -> Self {
        Self {
            v1: Field3D::zeros(g),
            v2: Field3D::zeros(g),
            t: p.Q1.sample(g),
            q: p.Q2.sample(g),
        }
    }

    pub fn field(&self, kind: FieldKind) -> &Field3D {
        match kind {
            FieldKind::V1 => &self.v1,
            FieldKind::V2 => &self.v2,
            FieldKind::Temperature => &self.t,
            FieldKind::Moisture => &self.q,
        }
    }
}

/// Possibly time-dependent forcing.
pub trait Forcing: Sync {
    fn sources(&self, t: f64, g: &Grid) -> Cow<'_, Sources>;
}

/// Time-independent forcing sampled once.
#[derive(Debug, Clone)]
pub struct SteadyForcing(pub Sources);

impl SteadyForcing {
    pub fn from_params(p: &PhysParams, g: &Grid) -> Self {
        Self(Sources::from_params(p, g))
    }
}

impl Forcing for SteadyForcing {
    fn sources(&self, _t: f64, _g: &Grid) -> Cow<'_, Sources> {
        Cow::Borrowed(&self.0)
    }
}

/// `L u = -ch (d_xx + d_yy) u - cv d_zz u` with three-point stencils reading
/// the ghost layer; ghosts must already encode the boundary conditions.
pub fn diffusion(u: &Field3D, ch: f64, cv: f64, g: &Grid) -> Field3D {
    let mut out = Field3D::zeros(g);
    let (sy, sz) = (u.sy(), u.sz());
    let (ax, ay, az) = (ch / (g.hx * g.hx), ch / (g.hy * g.hy), cv / (g.hz * g.hz));
    let d = u.raw();
    for k in 0..=g.nz {
        for j in 0..=g.ny {
            let row = u.idx(0, j, k);
            for n in row..=row + g.nx {
                let c = 2.0 * d[n];
                out.raw_mut()[n] = -ax * (d[n + 1] - c + d[n - 1])
                    - ay * (d[n + sy] - c + d[n - sy])
                    - az * (d[n + sz] - c + d[n - sz]);
            }
        }
    }
    out
}

pub fn diffusion_of(u: &Field3D, kind: FieldKind, p: &PhysParams, g: &Grid) -> Field3D {
    let (ch, cv) = kind.diffusivity(p);
    diffusion(u, ch, cv, g)
}

/// `(L1 v1, L1 v2)`.
pub fn diffusion_l1(v1: &Field3D, v2: &Field3D, p: &PhysParams, g: &Grid) -> (Field3D, Field3D) {
    (
        diffusion_of(v1, FieldKind::V1, p, g),
        diffusion_of(v2, FieldKind::V2, p, g),
    )
}

pub fn diffusion_l2(t: &Field3D, p: &PhysParams, g: &Grid) -> Field3D {
    diffusion_of(t, FieldKind::Temperature, p, g)
}

pub fn diffusion_l3(q: &Field3D, p: &PhysParams, g: &Grid) -> Field3D {
    diffusion_of(q, FieldKind::Moisture, p, g)
}

/// `v . grad c` with central differences through the ghost layer.
pub fn advect_horizontal(c: &Field3D, v1: &Field3D, v2: &Field3D, g: &Grid) -> Field3D {
    let mut out = Field3D::zeros(g);
    let sy = c.sy();
    let (rx, ry) = (0.5 / g.hx, 0.5 / g.hy);
    let d = c.raw();
    for (_, _, _, n) in c.node_indices() {
        out.raw_mut()[n] = v1.at(n) * rx * (d[n + 1] - d[n - 1]) + v2.at(n) * ry * (d[n + sy] - d[n - sy]);
    }
    out
}

/// `w dc/dz`, central inside and one-sided on the two end levels.
pub fn advect_vertical(c: &Field3D, w: &Field3D, g: &Grid) -> Field3D {
    let mut out = Field3D::zeros(g);
    for (i, j, k, n) in c.node_indices() {
        let wn = w.at(n);
        if wn != 0.0 {
            out.raw_mut()[n] = wn * dz_one_sided(c, i, j, k, g);
        }
    }
    out
}

/// `(f/Ro) v_perp` with `v_perp = (-v2, v1)`.
pub fn coriolis(v1: &Field3D, v2: &Field3D, p: &PhysParams) -> (Field3D, Field3D) {
    let c = p.f / p.Ro;
    (v2.scaled(-c), v1.scaled(c))
}

/// `J[(bP/p) grad((1 + a q) T)]`: the SBP horizontal gradient at each level,
/// then the adjoint cumulative integral in z.
pub fn buoyancy_gradient(s: &State, p: &PhysParams, g: &Grid) -> (Field3D, Field3D) {
    let prof = p.buoyancy_profile(g);
    let mut f = Field3D::zeros(g);
    for (_, _, _, n) in s.t.node_indices() {
        f.raw_mut()[n] = (1.0 + p.a * s.q.at(n)) * s.t.at(n);
    }
    let mut gx = Field3D::zeros(g);
    let mut gy = Field3D::zeros(g);
    for (i, j, k, n) in f.node_indices() {
        gx.raw_mut()[n] = prof[k] * sbp_dx(&f, i, j, k, g);
        gy.raw_mut()[n] = prof[k] * sbp_dy(&f, i, j, k, g);
    }
    (cumulative_adjoint(&gx, g), cumulative_adjoint(&gy, g))
}

/// `(bP/p)(1 + a q) w`, the adiabatic heating term of the temperature equation.
pub fn thermo_source(s: &State, w: &Field3D, p: &PhysParams, g: &Grid) -> Field3D {
    let prof = p.buoyancy_profile(g);
    let mut out = Field3D::zeros(g);
    for (_, _, k, n) in s.t.node_indices() {
        out.raw_mut()[n] = prof[k] * (1.0 + p.a * s.q.at(n)) * w.at(n);
    }
    out
}

/// All terms except diffusion and `grad Phi_s`; these are the ones the
/// time stepper treats explicitly.
pub fn explicit_tendency(s: &State, src: &Sources, p: &PhysParams, g: &Grid) -> Tendency {
    let w = diagnose_w(s, g);
    let (cor1, cor2) = coriolis(&s.v1, &s.v2, p);
    let (b1, b2) = buoyancy_gradient(s, p, g);
    let heat = thermo_source(s, &w, p, g);

    let mut out = Tendency::zeros(g);
    for kind in FieldKind::ALL {
        let c = s.field(kind);
        let ah = advect_horizontal(c, &s.v1, &s.v2, g);
        let av = advect_vertical(c, &w, g);
        // (subtracted, added) coupling terms beyond transport and sources
        let (minus, plus) = match kind {
            FieldKind::V1 => (Some(&cor1), Some(&b1)),
            FieldKind::V2 => (Some(&cor2), Some(&b2)),
            FieldKind::Temperature => (None, Some(&heat)),
            FieldKind::Moisture => (None, None),
        };
        let forcing = src.field(kind);
        let d = out.field_mut(kind);
        for (_, _, _, n) in c.node_indices() {
            let mut v = forcing.at(n) - ah.at(n) - av.at(n);
            if let Some(m) = minus {
                v -= m.at(n);
            }
            if let Some(p) = plus {
                v += p.at(n);
            }
            d.raw_mut()[n] = v;
        }
    }
    out
}

/// Full tendency with the given sources.
pub fn assemble_tendency_with(s: &State, src: &Sources, p: &PhysParams, g: &Grid) -> Tendency {
    let mut out = explicit_tendency(s, src, p, g);
    for kind in FieldKind::ALL {
        let l = diffusion_of(s.field(kind), kind, p, g);
        out.field_mut(kind).axpy(-1.0, &l);
    }
    out
}

/// Full tendency with the forcings `Q1`, `Q2` from `p`.
pub fn assemble_tendency(s: &State, p: &PhysParams, g: &Grid) -> Tendency {
    assemble_tendency_with(s, &Sources::from_params(p, g), p, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{forward_gradient_sq, inner, top_surface_sq};
    use crate::state::{apply_boundary_conditions, fill_ghosts};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(g: &Grid, rng: &mut ChaCha8Rng) -> Field3D {
        let mut f = Field3D::zeros(g);
        for (_, _, _, n) in f.clone().node_indices() {
            f.raw_mut()[n] = rng.gen_range(-1.0..1.0);
        }
        f
    }

    fn filled(mut u: Field3D, kind: FieldKind, p: &PhysParams, g: &Grid) -> Field3D {
        fill_ghosts(&mut u, &kind.boundary(p), g);
        u
    }

    #[test]
    fn diffusion_of_constant_vanishes() {
        let g = Grid::cube(6).unwrap();
        let p = PhysParams::default();
        let u = filled(
            Field3D::constant(&g, 2.5),
            FieldKind::Moisture,
            &PhysParams {
                beta: 1e-300,
                ..p.clone()
            },
            &g,
        );
        assert!(diffusion(&u, 1.0, 1.0, &g).max_abs() < 1e-12);
    }

    #[test]
    fn sine_is_an_eigenfunction_of_l1() {
        let p = PhysParams {
            Re1: 2.0,
            ..Default::default()
        };
        let err = |n: usize| {
            let g = Grid::new(n, n, 4, 1.5, 1.0).unwrap();
            let v1 = filled(
                Field3D::from_fn(&g, |x, _, _| (PI * x / 1.5).sin()),
                FieldKind::V1,
                &p,
                &g,
            );
            let v2 = Field3D::zeros(&g);
            let (l, _) = diffusion_l1(&v1, &v2, &p, &g);
            let lam = (PI / 1.5).powi(2) / p.Re1;
            let mut e: f64 = 0.0;
            for (_, _, _, m) in v1.node_indices() {
                e = e.max((l.at(m) - lam * v1.at(m)).abs());
            }
            e
        };
        let (e8, e16) = (err(8), err(16));
        assert!(e16 < 1e-2, "{e16}");
        assert!(e8 / e16 > 3.5);
    }

    /// Column operator assembled from its stencil rows, Neumann at the
    /// bottom and Robin at the top.
    fn dense_column(n: usize, h: f64, gamma: f64, cv: f64) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; n + 1]; n + 1];
        let s = cv / (h * h);
        m[0][0] = 2.0 * s;
        m[0][1] = -2.0 * s;
        for k in 1..n {
            m[k][k - 1] = -s;
            m[k][k] = 2.0 * s;
            m[k][k + 1] = -s;
        }
        m[n][n - 1] = -2.0 * s;
        m[n][n] = 2.0 * s + 2.0 * cv * gamma / h;
        m
    }

    #[test]
    fn l2_matches_dense_column_matrix() {
        let p = PhysParams {
            Rt2: 1.7,
            alpha: 0.6,
            ..Default::default()
        };
        let g = Grid::new(4, 4, 8, 1.0, 1.0).unwrap();
        let t = filled(
            Field3D::from_fn(&g, |_, _, z| (2.0 * z).cos() + 0.3 * z * z * z),
            FieldKind::Temperature,
            &p,
            &g,
        );
        let l = diffusion_l2(&t, &p, &g);
        let m = dense_column(g.nz, g.hz, p.robin_t(), 1.0 / p.Rt2);
        for k in 0..=g.nz {
            let mut want = 0.0;
            for (kk, row) in m[k].iter().enumerate() {
                want += row * t.get(2, 1, kk);
            }
            assert!((l.get(2, 1, k) - want).abs() < 1e-11, "level {k}");
        }
    }

    #[test]
    fn diffusion_is_symmetric_and_matches_the_energy_form() {
        let p = PhysParams {
            Rt1: 0.7,
            Rt2: 1.3,
            alpha: 0.4,
            ..Default::default()
        };
        let g = Grid::new(6, 5, 7, 1.2, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in FieldKind::ALL {
            let a = filled(random_field(&g, &mut rng), kind, &p, &g);
            let b = filled(random_field(&g, &mut rng), kind, &p, &g);
            let (la, lb) = (diffusion_of(&a, kind, &p, &g), diffusion_of(&b, kind, &p, &g));
            let (x, y) = (inner(&la, &b, &g), inner(&a, &lb, &g));
            assert!((x - y).abs() < 1e-10 * x.abs().max(1.0), "{kind:?}");

            let (ch, cv) = kind.diffusivity(&p);
            let mut form = ch * (forward_gradient_sq(&a, 0, &g) + forward_gradient_sq(&a, 1, &g))
                + cv * forward_gradient_sq(&a, 2, &g);
            if let crate::state::FaceBc::Robin(gm) = kind.boundary(&p).top {
                form += cv * gm * top_surface_sq(&a, &g);
            }
            let energy = inner(&la, &a, &g);
            assert!((energy - form).abs() < 1e-10 * form, "{kind:?}: {energy} vs {form}");
        }
    }

    #[test]
    fn advection_examples() {
        let g = Grid::cube(8).unwrap();
        let one = Field3D::constant(&g, 1.0);
        let zero = Field3D::zeros(&g);
        let p = PhysParams::default();
        let c = filled(Field3D::constant(&g, 3.0), FieldKind::Temperature, &p, &g);
        assert_eq!(advect_horizontal(&c, &one, &one, &g).max_abs(), 0.0);

        let x = Field3D::from_fn(&g, |x, _, _| x);
        let a = advect_horizontal(&x, &one, &zero, &g);
        for (i, _, _, n) in x.node_indices() {
            if i > 0 && i < g.nx {
                assert!((a.at(n) - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rotation_does_not_advect_radial_field() {
        let g = Grid::new(8, 8, 4, 2.0, 2.0).unwrap();
        let r2 = Field3D::from_fn(&g, |x, y, _| (x - 1.0).powi(2) + (y - 1.0).powi(2));
        let v1 = Field3D::from_fn(&g, |_, y, _| y - 1.0);
        let v2 = Field3D::from_fn(&g, |x, _, _| -(x - 1.0));
        let a = advect_horizontal(&r2, &v1, &v2, &g);
        for (i, j, _, n) in r2.node_indices() {
            if i > 0 && i < g.nx && j > 0 && j < g.ny {
                assert!(a.at(n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn vertical_advection_converges() {
        let err = |n: usize| {
            let g = Grid::new(4, 4, n, 1.0, 1.0).unwrap();
            let w = Field3D::from_fn(&g, |x, y, z| z * (1.0 - z) * (x + 2.0 * y));
            let c = Field3D::from_fn(&g, |_, _, z| z * z);
            let a = advect_vertical(&c, &w, &g);
            let mut e: f64 = 0.0;
            for (i, j, k, m) in c.node_indices() {
                let z = g.z(k);
                let exact = 2.0 * z * z * (1.0 - z) * (g.x(i) + 2.0 * g.y(j));
                e = e.max((a.at(m) - exact).abs());
            }
            e
        };
        // quadratics are differentiated exactly by all three stencils
        assert!(err(8) < 1e-12 && err(16) < 1e-12);
        let g = Grid::cube(5).unwrap();
        let c = Field3D::from_fn(&g, |x, _, _| x);
        let w = Field3D::constant(&g, 1.0);
        assert!(advect_vertical(&c, &w, &g).max_abs() < 1e-15);
        assert_eq!(advect_vertical(&w, &Field3D::zeros(&g), &g).max_abs(), 0.0);
    }

    #[test]
    fn coriolis_examples() {
        let g = Grid::cube(4).unwrap();
        let (one, zero) = (Field3D::constant(&g, 1.0), Field3D::zeros(&g));
        let p = PhysParams::default();
        let (a, b) = coriolis(&one, &zero, &p);
        assert_eq!((a.get(1, 1, 1), b.get(1, 1, 1)), (0.0, 1.0));
        let p = PhysParams {
            f: 2.0,
            Ro: 2.0,
            ..Default::default()
        };
        let (a, b) = coriolis(&zero, &one, &p);
        assert_eq!((a.get(2, 3, 0), b.get(2, 3, 0)), (-1.0, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (v1, v2) = (random_field(&g, &mut rng), random_field(&g, &mut rng));
        let (c1, c2) = coriolis(&v1, &v2, &p);
        for (_, _, _, n) in v1.node_indices() {
            assert_eq!(v1.at(n) * c1.at(n) + v2.at(n) * c2.at(n), 0.0);
        }
    }

    #[test]
    fn buoyancy_of_linear_temperature() {
        let p = PhysParams {
            p0: 0.25,
            ..Default::default()
        };
        let g = Grid::new(6, 6, 16, 1.0, 1.0).unwrap();
        let mut s = State::zeros(&g);
        s.t = Field3D::from_fn(&g, |x, _, _| x);
        let (bx, by) = buoyancy_gradient(&s, &p, &g);
        assert!(by.max_abs() < 1e-12);
        let c = p.b * p.P / (p.P - p.p0);
        // interior levels agree with the cumulative integral of bP/p up to
        // the trapezoid error h^2/12 |g'(z) - g'(0)|
        let dg = |z: f64| -p.b * p.P * (p.P - p.p0) / p.pressure(z).powi(2);
        for k in 1..g.nz {
            let z = g.z(k);
            let exact = c * (p.pressure(z) / p.p0).ln();
            let bound = 1.1 * g.hz * g.hz / 12.0 * (dg(z) - dg(0.0)).abs();
            assert!((bx.get(3, 2, k) - exact).abs() < bound, "level {k}");
        }
        // the end levels carry the half-cell adjoint correction
        assert!((bx.get(3, 2, 0) - 0.5 * g.hz * p.b * p.P / p.p0).abs() < 1e-12);
    }

    #[test]
    fn buoyancy_of_sheared_temperature() {
        let p = PhysParams {
            a: 0.0,
            ..Default::default()
        };
        let g = Grid::new(32, 4, 16, 1.0, 1.0).unwrap();
        let mut s = State::zeros(&g);
        s.t = Field3D::from_fn(&g, |x, _, z| x.sin() * z);
        let (bx, _) = buoyancy_gradient(&s, &p, &g);
        // int_0^z bP/p(s) s ds with p = s/2 + 1/2
        let prim = |z: f64| 2.0 * (z - ((1.0 + z).ln()));
        for k in 1..g.nz {
            for i in 1..g.nx {
                let exact = g.x(i).cos() * prim(g.z(k));
                assert!((bx.get(i, 1, k) - exact).abs() < 2e-3);
            }
        }
    }

    #[test]
    fn thermo_source_examples() {
        let g = Grid::cube(4).unwrap();
        let p = PhysParams::default();
        let mut s = State::zeros(&g);
        s.t = Field3D::constant(&g, 5.0);
        assert_eq!(thermo_source(&s, &Field3D::zeros(&g), &p, &g).max_abs(), 0.0);

        let w = Field3D::from_fn(&g, |_, _, z| p.pressure(z) / (p.b * p.P));
        let h = thermo_source(&s, &w, &p, &g);
        for (_, _, _, n) in w.node_indices() {
            assert!((h.at(n) - 1.0).abs() < 1e-15);
        }
        let dry = thermo_source(&s, &w, &p, &g);
        s.q = Field3D::constant(&g, 1.0);
        let moist = thermo_source(&s, &w, &p, &g);
        for (_, _, _, n) in w.node_indices() {
            assert!((moist.at(n) / dry.at(n) - 1.618).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_state_has_zero_tendency() {
        let g = Grid::cube(5).unwrap();
        let p = PhysParams::default();
        let t = assemble_tendency(&State::zeros(&g), &p, &g);
        assert!(t.is_finite());
        for k in FieldKind::ALL {
            assert_eq!(t.field(k).max_abs(), 0.0);
        }
    }

    #[test]
    fn resting_fluid_feels_only_buoyancy() {
        let g = Grid::cube(6).unwrap();
        let p = PhysParams::default();
        let mut s = State::zeros(&g);
        s.t = Field3D::from_fn(&g, |x, y, z| (PI * x).cos() * (PI * y).cos() * (1.0 + z));
        s.q = Field3D::from_fn(&g, |x, _, _| 0.2 + 0.1 * (PI * x).cos());
        let s = apply_boundary_conditions(s, &p, &g);
        let t = assemble_tendency(&s, &p, &g);
        let (b1, b2) = buoyancy_gradient(&s, &p, &g);
        assert_eq!(t.dv1, b1);
        assert_eq!(t.dv2, b2);
    }

    #[test]
    fn tendency_is_affine_in_forcing() {
        let g = Grid::cube(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = PhysParams::default();
        let mut s = State::zeros(&g);
        for k in FieldKind::ALL {
            *s.field_mut(k) = random_field(&g, &mut rng);
        }
        let s = apply_boundary_conditions(s, &p, &g);
        let base = assemble_tendency(&s, &p, &g);
        let forced = PhysParams {
            Q1: crate::params::ForcingSpec::mode(2.0, 1, 0, 1),
            Q2: crate::params::ForcingSpec::mode(-1.0, 0, 1, 0),
            ..p.clone()
        };
        let t = assemble_tendency(&s, &forced, &g);
        let diff_t = t.dt.sub(&base.dt);
        let diff_q = t.dq.sub(&base.dq);
        let (q1, q2) = (forced.Q1.sample(&g), forced.Q2.sample(&g));
        for (_, _, _, n) in diff_t.node_indices() {
            assert!((diff_t.at(n) - q1.at(n)).abs() < 1e-12);
            assert!((diff_q.at(n) - q2.at(n)).abs() < 1e-12);
        }
        assert_eq!(t.dv1, base.dv1);
    }
}
