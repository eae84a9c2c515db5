//! Prognostic state `(v1, v2, T, q)` and its boundary conditions.
//!
//! Boundary conditions are imposed through the ghost layer with central
//! second-order differences:
//!
//! * `dv/dz = 0`, `dT/dz = 0`, `dq/dz = 0` on the bottom, `dv/dz = 0` on top;
//! * `(1/Rt2) dT/dz + alpha T = 0` and `(1/Rt4) dq/dz + beta q = 0` on top;
//! * on the walls `v.n = 0` (Dirichlet, odd ghost) while the tangential
//!   component, `T` and `q` have zero normal derivative (even ghost).

use crate::field::Field3D;
use crate::grid::Grid;
use crate::params::PhysParams;

/// Condition on one face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceBc {
    /// Node value is zero, ghost is the odd reflection.
    Dirichlet,
    /// Ghost mirrors the first interior node.
    Neumann,
    /// `du/dn + gamma u = 0` with outward normal.
    Robin(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySpec {
    pub x: FaceBc,
    pub y: FaceBc,
    pub bottom: FaceBc,
    pub top: FaceBc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    V1,
    V2,
    Temperature,
    Moisture,
}

impl FieldKind {
    pub const ALL: [FieldKind; 4] = [
        FieldKind::V1,
        FieldKind::V2,
        FieldKind::Temperature,
        FieldKind::Moisture,
    ];

    pub fn boundary(self, p: &PhysParams) -> BoundarySpec {
        use FaceBc::*;
        match self {
            FieldKind::V1 => BoundarySpec {
                x: Dirichlet,
                y: Neumann,
                bottom: Neumann,
                top: Neumann,
            },
            FieldKind::V2 => BoundarySpec {
                x: Neumann,
                y: Dirichlet,
                bottom: Neumann,
                top: Neumann,
            },
            FieldKind::Temperature => BoundarySpec {
                x: Neumann,
                y: Neumann,
                bottom: Neumann,
                top: Robin(p.robin_t()),
            },
            FieldKind::Moisture => BoundarySpec {
                x: Neumann,
                y: Neumann,
                bottom: Neumann,
                top: Robin(p.robin_q()),
            },
        }
    }

    /// Horizontal and vertical diffusion coefficients of `L1`, `L2`, `L3`.
    pub fn diffusivity(self, p: &PhysParams) -> (f64, f64) {
        match self {
            FieldKind::V1 | FieldKind::V2 => (1.0 / p.Re1, 1.0 / p.Re2),
            FieldKind::Temperature => (1.0 / p.Rt1, 1.0 / p.Rt2),
            FieldKind::Moisture => (1.0 / p.Rt3, 1.0 / p.Rt4),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::V1 => "v1",
            FieldKind::V2 => "v2",
            FieldKind::Temperature => "T",
            FieldKind::Moisture => "q",
        }
    }
}

/// Fills the ghost layer of `u` (and zeroes its Dirichlet nodes) so that the
/// central-difference boundary residuals vanish. Idempotent.
pub fn fill_ghosts(u: &mut Field3D, bc: &BoundarySpec, g: &Grid) {
    let (nx, ny, nz) = (g.nx as isize, g.ny as isize, g.nz as isize);

    if bc.x == FaceBc::Dirichlet {
        for k in 0..=g.nz {
            for j in 0..=g.ny {
                u.set(0, j, k, 0.0);
                u.set(g.nx, j, k, 0.0);
            }
        }
    }
    if bc.y == FaceBc::Dirichlet {
        for k in 0..=g.nz {
            for i in 0..=g.nx {
                u.set(i, 0, k, 0.0);
                u.set(i, g.ny, k, 0.0);
            }
        }
    }

    let sign = |f: FaceBc| if f == FaceBc::Dirichlet { -1.0 } else { 1.0 };
    let (stride_y, stride_z) = (u.sy(), u.sz());
    let at =
        |i: isize, j: isize, k: isize| (i + 1) as usize + stride_y * (j + 1) as usize + stride_z * (k + 1) as usize;
    let d = u.raw_mut();

    let sx = sign(bc.x);
    for k in 0..=nz {
        for j in 0..=ny {
            d[at(-1, j, k)] = sx * d[at(1, j, k)];
            d[at(nx + 1, j, k)] = sx * d[at(nx - 1, j, k)];
        }
    }
    let syg = sign(bc.y);
    for k in 0..=nz {
        for i in -1..=nx + 1 {
            d[at(i, -1, k)] = syg * d[at(i, 1, k)];
            d[at(i, ny + 1, k)] = syg * d[at(i, ny - 1, k)];
        }
    }
    let two_h = 2.0 * g.hz;
    for j in -1..=ny + 1 {
        for i in -1..=nx + 1 {
            d[at(i, j, -1)] = match bc.bottom {
                FaceBc::Neumann => d[at(i, j, 1)],
                FaceBc::Dirichlet => -d[at(i, j, 1)],
                // outward normal points down: -du/dz + gamma u = 0
                FaceBc::Robin(gm) => d[at(i, j, 1)] - two_h * gm * d[at(i, j, 0)],
            };
            d[at(i, j, nz + 1)] = match bc.top {
                FaceBc::Neumann => d[at(i, j, nz - 1)],
                FaceBc::Dirichlet => -d[at(i, j, nz - 1)],
                FaceBc::Robin(gm) => d[at(i, j, nz - 1)] - two_h * gm * d[at(i, j, nz)],
            };
        }
    }
}

/// Largest absolute central-difference residual of the boundary conditions.
pub fn boundary_residual(u: &Field3D, bc: &BoundarySpec, g: &Grid) -> f64 {
    let (nx, ny, nz) = (g.nx as isize, g.ny as isize, g.nz as isize);
    let v = |i: isize, j: isize, k: isize| u.raw()[u.gidx(i, j, k)];
    let mut worst: f64 = 0.0;
    let face = |f: FaceBc, lo: f64, hi_ghost: f64, node: f64, h: f64| -> f64 {
        match f {
            FaceBc::Dirichlet => node.abs().max((hi_ghost + lo).abs()),
            FaceBc::Neumann => ((hi_ghost - lo) / (2.0 * h)).abs(),
            FaceBc::Robin(gm) => ((hi_ghost - lo) / (2.0 * h) + gm * node).abs(),
        }
    };
    for k in 0..=nz {
        for j in 0..=ny {
            // low wall: outward derivative is (ghost - interior)/2h
            worst = worst.max(face(bc.x, v(1, j, k), v(-1, j, k), v(0, j, k), g.hx));
            worst = worst.max(face(bc.x, v(nx - 1, j, k), v(nx + 1, j, k), v(nx, j, k), g.hx));
        }
        for i in 0..=nx {
            worst = worst.max(face(bc.y, v(i, 1, k), v(i, -1, k), v(i, 0, k), g.hy));
            worst = worst.max(face(bc.y, v(i, ny - 1, k), v(i, ny + 1, k), v(i, ny, k), g.hy));
        }
    }
    for j in 0..=ny {
        for i in 0..=nx {
            worst = worst.max(face(bc.bottom, v(i, j, 1), v(i, j, -1), v(i, j, 0), g.hz));
            worst = worst.max(face(bc.top, v(i, j, nz - 1), v(i, j, nz + 1), v(i, j, nz), g.hz));
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub v1: Field3D,
    pub v2: Field3D,
    pub t: Field3D,
    pub q: Field3D,
    pub time: f64,
}

impl State {
    pub fn zeros(g: &Grid) -> Self {
        Self {
            v1: Field3D::zeros(g),
            v2: Field3D::zeros(g),
            t: Field3D::zeros(g),
            q: Field3D::zeros(g),
            time: 0.0,
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

    pub fn field_mut(&mut self, kind: FieldKind) -> &mut Field3D {
        match kind {
            FieldKind::V1 => &mut self.v1,
            FieldKind::V2 => &mut self.v2,
            FieldKind::Temperature => &mut self.t,
            FieldKind::Moisture => &mut self.q,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite() && FieldKind::ALL.iter().all(|&k| self.field(k).is_finite())
    }

    /// Node-wise difference `self - other` (time taken from `self`).
    pub fn diff(&self, other: &State) -> State {
        State {
            v1: self.v1.sub(&other.v1),
            v2: self.v2.sub(&other.v2),
            t: self.t.sub(&other.t),
            q: self.q.sub(&other.q),
            time: self.time,
        }
    }

    /// `self += a * other` on every field.
    pub fn axpy(&mut self, a: f64, other: &State) {
        for k in FieldKind::ALL {
            self.field_mut(k).axpy(a, other.field(k));
        }
    }

    pub fn scaled(&self, a: f64) -> State {
        let mut out = self.clone();
        for k in FieldKind::ALL {
            out.field_mut(k).scale(a);
        }
        out
    }

    /// All node values concatenated in `(v1, v2, T, q)` order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for k in FieldKind::ALL {
            out.extend(self.field(k).nodes());
        }
        out
    }

    /// Inverse of [`State::flatten`]; ghosts are left for the caller to fill.
    pub fn unflatten(g: &Grid, values: &[f64], time: f64) -> State {
        let n = g.node_count();
        assert_eq!(values.len(), 4 * n, "flattened state has wrong length");
        let mut s = State::zeros(g);
        for (c, k) in FieldKind::ALL.into_iter().enumerate() {
            s.field_mut(k).set_nodes(&values[c * n..(c + 1) * n]);
        }
        s.time = time;
        s
    }
}

/// Imposes every boundary condition on every field. Idempotent bitwise.
pub fn apply_boundary_conditions(mut s: State, p: &PhysParams, g: &Grid) -> State {
    apply_boundary_conditions_in_place(&mut s, p, g);
    s
}

pub fn apply_boundary_conditions_in_place(s: &mut State, p: &PhysParams, g: &Grid) {
    for kind in FieldKind::ALL {
        fill_ghosts(s.field_mut(kind), &kind.boundary(p), g);
    }
}

/// Worst boundary residual over the four prognostic fields.
pub fn state_boundary_residual(s: &State, p: &PhysParams, g: &Grid) -> f64 {
    FieldKind::ALL
        .iter()
        .map(|&k| boundary_residual(s.field(k), &k.boundary(p), g))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn setup() -> (Grid, PhysParams) {
        (Grid::new(8, 6, 8, 1.0, 1.5).unwrap(), PhysParams::default())
    }

    #[test]
    fn zero_state_is_fixed() {
        let (g, p) = setup();
        let s = State::zeros(&g);
        assert_eq!(apply_boundary_conditions(s.clone(), &p, &g), s);
    }

    #[test]
    fn constant_temperature_gets_robin_ghost() {
        let (g, p) = setup();
        let mut s = State::zeros(&g);
        s.t = Field3D::constant(&g, 2.5);
        let before = s.t.nodes();
        assert!(boundary_residual(&s.t, &FieldKind::Temperature.boundary(&p), &g) > 1.0);
        let s = apply_boundary_conditions(s, &p, &g);
        assert_eq!(s.t.nodes(), before);
        assert!(state_boundary_residual(&s, &p, &g) < 1e-12);
        // ghost above the top: T_{N+1} = T_{N-1} - 2 hz alpha Rt2 T_N
        let top = s.t.raw()[s.t.gidx(3, 3, g.nz as isize + 1)];
        assert!((top - (2.5 - 2.0 * g.hz * p.robin_t() * 2.5)).abs() < 1e-14);
    }

    #[test]
    fn compatible_velocity_is_unchanged() {
        let (g, p) = setup();
        let mut s = State::zeros(&g);
        s.v1 = Field3D::from_fn(&g, |x, _, z| (PI * x / g.lx).sin() * (PI * z).cos());
        let before = s.v1.nodes();
        let s = apply_boundary_conditions(s, &p, &g);
        let after = s.v1.nodes();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(state_boundary_residual(&s, &p, &g) < 1e-12);
    }

    #[test]
    fn exponential_moisture_robin_residual_vanishes() {
        let (g, p) = setup();
        let mut s = State::zeros(&g);
        s.q = Field3D::from_fn(&g, |_, _, z| z.exp());
        let bc = FieldKind::Moisture.boundary(&p);
        assert!(boundary_residual(&s.q, &bc, &g) > 0.1);
        let interior = s.q.nodes();
        let s = apply_boundary_conditions(s, &p, &g);
        assert_eq!(s.q.nodes(), interior);
        assert!(boundary_residual(&s.q, &bc, &g) < 1e-12);
    }

    #[test]
    fn idempotent_bitwise() {
        let (g, p) = setup();
        let mut s = State::zeros(&g);
        s.v1 = Field3D::from_fn(&g, |x, y, z| x * y + z * z + 1.0);
        s.v2 = Field3D::from_fn(&g, |x, y, z| (x - y).sin() + z);
        s.t = Field3D::from_fn(&g, |x, y, z| (3.0 * x).cos() * y + z);
        s.q = Field3D::from_fn(&g, |x, y, z| x + y + z);
        let once = apply_boundary_conditions(s, &p, &g);
        let twice = apply_boundary_conditions(once.clone(), &p, &g);
        let bits = |s: &State| -> Vec<u64> {
            FieldKind::ALL
                .iter()
                .flat_map(|&k| s.field(k).raw().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect()
        };
        assert_eq!(bits(&once), bits(&twice));
        // wall-normal velocity components vanish on their walls
        for k in 0..=g.nz {
            for j in 0..=g.ny {
                assert_eq!(once.v1.get(0, j, k), 0.0);
                assert_eq!(once.v1.get(g.nx, j, k), 0.0);
            }
        }
    }

    #[test]
    fn flatten_round_trip() {
        let (g, _) = setup();
        let mut s = State::zeros(&g);
        s.q = Field3D::from_fn(&g, |x, y, z| x - y * z);
        s.v2 = Field3D::from_fn(&g, |x, _, _| x);
        let back = State::unflatten(&g, &s.flatten(), 0.0);
        assert_eq!(back, s);
    }
}
