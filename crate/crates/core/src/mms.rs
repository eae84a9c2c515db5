//! Manufactured solution and its source terms.
//!
//! With `X = cos(kx x)`, `Xs = sin(kx x)` (same for y), `Z = cos(pi z)`,
//! `kx = pi/Lx`, `ky = pi/Ly` and the time factor `a(t) = 1 + eps sin(omega t)`:
//!
//! ```text
//! v1 = A a Xs Y Z          v2 = A a X Ys Z
//! T  = B a (1 + X Y)(1 - cT z^2)         cT = gT / (2 + gT),  gT = alpha Rt2
//! q  = C a (1 + X Y / 2)(1 - cq z^2)     cq = gq / (2 + gq),  gq = beta Rt4
//! ```
//!
//! Every boundary condition holds exactly, the column mean of `v` vanishes
//! (so `Phi_s = 0`) and `w = -A a (kx + ky) X Y sin(pi z) / pi`. Because the
//! moist factor is a polynomial in `z`, the buoyancy integral has a closed
//! form through `I_m(z) = int_0^z s^m / p(s) ds`.

use std::f64::consts::PI;

use crate::dynamics::{Forcing, Sources};
use crate::field::Field3D;
use crate::grid::Grid;
use crate::params::PhysParams;
use crate::state::{apply_boundary_conditions, State};
use std::borrow::Cow;

#[derive(Debug, Clone, PartialEq)]
pub struct Manufactured {
    pub amp_v: f64,
    pub amp_t: f64,
    pub amp_q: f64,
    /// Relative size of the time modulation; zero gives a steady solution.
    pub eps: f64,
    pub omega: f64,
    pub lx: f64,
    pub ly: f64,
    pub params: PhysParams,
}

/// Point values of every exact field and its derivatives.
#[derive(Debug, Clone, Copy, Default)]
struct Point {
    v1: f64,
    v2: f64,
    t: f64,
    q: f64,
}

impl Manufactured {
    pub fn steady(p: &PhysParams, g: &Grid) -> Self {
        Self {
            amp_v: 0.5,
            amp_t: 1.0,
            amp_q: 0.5,
            eps: 0.0,
            omega: 0.0,
            lx: g.lx,
            ly: g.ly,
            params: p.clone(),
        }
    }

    pub fn unsteady(p: &PhysParams, g: &Grid) -> Self {
        Self {
            eps: 0.5,
            omega: 2.0,
            ..Self::steady(p, g)
        }
    }

    fn time_factor(&self, t: f64) -> (f64, f64) {
        (
            1.0 + self.eps * (self.omega * t).sin(),
            self.eps * self.omega * (self.omega * t).cos(),
        )
    }

    fn c_t(&self) -> f64 {
        let gm = self.params.robin_t();
        gm / (2.0 + gm)
    }

    fn c_q(&self) -> f64 {
        let gm = self.params.robin_q();
        gm / (2.0 + gm)
    }

    /// `int_0^z s^m / p(s) ds` for `m = 0..=4`.
    fn log_moments(&self, z: f64) -> [f64; 5] {
        let p = &self.params;
        let s = p.P - p.p0;
        let mut out = [0.0; 5];
        out[0] = (p.pressure(z) / p.p0).ln() / s;
        for m in 1..5 {
            out[m] = (z.powi(m as i32) / m as f64 - p.p0 * out[m - 1]) / s;
        }
        out
    }

    fn fields(&self, x: f64, y: f64, z: f64, a: f64) -> Point {
        let (kx, ky) = (PI / self.lx, PI / self.ly);
        let (cx, sx, cy, sy) = ((kx * x).cos(), (kx * x).sin(), (ky * y).cos(), (ky * y).sin());
        let zc = (PI * z).cos();
        Point {
            v1: self.amp_v * a * sx * cy * zc,
            v2: self.amp_v * a * cx * sy * zc,
            t: self.amp_t * a * (1.0 + cx * cy) * (1.0 - self.c_t() * z * z),
            q: self.amp_q * a * (1.0 + 0.5 * cx * cy) * (1.0 - self.c_q() * z * z),
        }
    }

    pub fn exact_state(&self, g: &Grid, t: f64) -> State {
        let (a, _) = self.time_factor(t);
        let mut s = State::zeros(g);
        s.v1 = Field3D::from_fn(g, |x, y, z| self.fields(x, y, z, a).v1);
        s.v2 = Field3D::from_fn(g, |x, y, z| self.fields(x, y, z, a).v2);
        s.t = Field3D::from_fn(g, |x, y, z| self.fields(x, y, z, a).t);
        s.q = Field3D::from_fn(g, |x, y, z| self.fields(x, y, z, a).q);
        s.time = t;
        apply_boundary_conditions(s, &self.params, g)
    }

    /// Exact vertical velocity.
    pub fn w(&self, x: f64, y: f64, z: f64, t: f64) -> f64 {
        let (a, _) = self.time_factor(t);
        let (kx, ky) = (PI / self.lx, PI / self.ly);
        -self.amp_v * a * (kx + ky) * (kx * x).cos() * (ky * y).cos() * (PI * z).sin() / PI
    }

    /// Exact `int_0^z (bP/p) grad((1 + a q) T) ds`.
    pub fn buoyancy(&self, x: f64, y: f64, z: f64, t: f64) -> (f64, f64) {
        let p = &self.params;
        let (a, _) = self.time_factor(t);
        let (kx, ky) = (PI / self.lx, PI / self.ly);
        let (cx, sx, cy, sy) = ((kx * x).cos(), (kx * x).sin(), (ky * y).cos(), (ky * y).sin());
        let (ct, cq) = (self.c_t(), self.c_q());
        // T = ta (1 - ct z^2), q = qa (1 - cq z^2)
        let ta = self.amp_t * a * (1.0 + cx * cy);
        let qa = self.amp_q * a * (1.0 + 0.5 * cx * cy);
        let ta_x = -self.amp_t * a * kx * sx * cy;
        let ta_y = -self.amp_t * a * ky * cx * sy;
        let qa_x = -0.5 * self.amp_q * a * kx * sx * cy;
        let qa_y = -0.5 * self.amp_q * a * ky * cx * sy;
        let i = self.log_moments(z);
        let lin = i[0] - ct * i[2];
        let quad = i[0] - (cq + ct) * i[2] + cq * ct * i[4];
        let bp = p.b * p.P;
        (
            bp * (ta_x * lin + p.a * (qa * ta_x + ta * qa_x) * quad),
            bp * (ta_y * lin + p.a * (qa * ta_y + ta * qa_y) * quad),
        )
    }

    /// Source terms that make the manufactured fields an exact solution,
    /// `S = du/dt - RHS(u)` with `Phi_s = 0`.
    pub fn source_at(&self, x: f64, y: f64, z: f64, t: f64) -> [f64; 4] {
        let p = &self.params;
        let (a, da) = self.time_factor(t);
        let (kx, ky) = (PI / self.lx, PI / self.ly);
        let (cx, sx, cy, sy) = ((kx * x).cos(), (kx * x).sin(), (ky * y).cos(), (ky * y).sin());
        let (zc, zs) = ((PI * z).cos(), (PI * z).sin());
        let (ct, cq) = (self.c_t(), self.c_q());
        let av = self.amp_v * a;
        let (at, aq) = (self.amp_t * a, self.amp_q * a);
        let u = self.fields(x, y, z, a);
        let w = self.w(x, y, z, t);

        let v1x = av * kx * cx * cy * zc;
        let v1y = -av * ky * sx * sy * zc;
        let v1z = -av * PI * sx * cy * zs;
        let v2x = -av * kx * sx * sy * zc;
        let v2y = av * ky * cx * cy * zc;
        let v2z = -av * PI * cx * sy * zs;
        let kh = kx * kx + ky * ky;
        let l1v1 = (kh / p.Re1 + PI * PI / p.Re2) * u.v1;
        let l1v2 = (kh / p.Re1 + PI * PI / p.Re2) * u.v2;

        let pt = 1.0 - ct * z * z;
        let tx = -at * kx * sx * cy * pt;
        let ty = -at * ky * cx * sy * pt;
        let tz = -2.0 * ct * z * at * (1.0 + cx * cy);
        let l2t = (kh * at * cx * cy * pt) / p.Rt1 + (2.0 * ct * at * (1.0 + cx * cy)) / p.Rt2;

        let pq = 1.0 - cq * z * z;
        let qx = -0.5 * aq * kx * sx * cy * pq;
        let qy = -0.5 * aq * ky * cx * sy * pq;
        let qz = -2.0 * cq * z * aq * (1.0 + 0.5 * cx * cy);
        let l3q = (0.5 * kh * aq * cx * cy * pq) / p.Rt3 + (2.0 * cq * aq * (1.0 + 0.5 * cx * cy)) / p.Rt4;

        let (b1, b2) = self.buoyancy(x, y, z, t);
        let cor = p.f / p.Ro;
        let gz = p.b * p.P / p.pressure(z);

        let rhs_v1 = -(u.v1 * v1x + u.v2 * v1y) - w * v1z + cor * u.v2 - l1v1 + b1;
        let rhs_v2 = -(u.v1 * v2x + u.v2 * v2y) - w * v2z - cor * u.v1 - l1v2 + b2;
        let rhs_t = -(u.v1 * tx + u.v2 * ty) - w * tz - l2t + gz * (1.0 + p.a * u.q) * w;
        let rhs_q = -(u.v1 * qx + u.v2 * qy) - w * qz - l3q;

        let r = if a != 0.0 { da / a } else { 0.0 };
        [r * u.v1 - rhs_v1, r * u.v2 - rhs_v2, r * u.t - rhs_t, r * u.q - rhs_q]
    }

    pub fn sources(&self, g: &Grid, t: f64) -> Sources {
        let comp = |c: usize| Field3D::from_fn(g, |x, y, z| self.source_at(x, y, z, t)[c]);
        Sources {
            v1: comp(0),
            v2: comp(1),
            t: comp(2),
            q: comp(3),
        }
    }
}

impl Forcing for Manufactured {
    fn sources(&self, t: f64, g: &Grid) -> Cow<'_, Sources> {
        Cow::Owned(Manufactured::sources(self, g, t))
    }
}
