//! Diagnostic reconstruction of the eliminated variables.
//!
//! `w(z) = -int_0^z div v` and `Phi(z) = Phi_s - int_0^z (bP/p)(1 + a q) T`,
//! both by cumulative trapezoid so that `w(z = 1)` is exactly minus the
//! column trapezoid of `div v`, i.e. the discrete barotropic constraint.

use crate::field::{Field2D, Field3D};
use crate::grid::Grid;
use crate::ops::{cumulative_trapezoid, divergence, vertical_average};
use crate::params::PhysParams;
use crate::state::State;

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub w: Field3D,
    pub phi: Field3D,
    pub v_bar: (Field2D, Field2D),
    pub v_tilde: (Field3D, Field3D),
}

/// Vertical velocity in pressure coordinates; `w = 0` on the bottom exactly.
pub fn diagnose_w(s: &State, g: &Grid) -> Field3D {
    let div = divergence(&s.v1, &s.v2, g);
    let mut w = cumulative_trapezoid(&div, g);
    w.scale(-1.0);
    w
}

/// The moist thermal factor `(bP/p)(1 + a q) T` at every node.
pub fn moist_buoyancy(s: &State, p: &PhysParams, g: &Grid) -> Field3D {
    let prof = p.buoyancy_profile(g);
    let mut out = Field3D::zeros(g);
    for (_, _, k, n) in s.t.node_indices() {
        out.raw_mut()[n] = prof[k] * (1.0 + p.a * s.q.at(n)) * s.t.at(n);
    }
    out
}

pub fn diagnose_phi(s: &State, phi_s: &Field2D, p: &PhysParams, g: &Grid) -> Field3D {
    let mut phi = cumulative_trapezoid(&moist_buoyancy(s, p, g), g);
    phi.scale(-1.0);
    for k in 0..=g.nz {
        for j in 0..=g.ny {
            for i in 0..=g.nx {
                let n = phi.idx(i, j, k);
                phi.raw_mut()[n] += phi_s.get(i, j);
            }
        }
    }
    phi
}

/// Barotropic mean and baroclinic fluctuation of one velocity component.
pub fn split_component(f: &Field3D, g: &Grid) -> (Field2D, Field3D) {
    let mean = vertical_average(f, g);
    let mut fluct = f.clone();
    for (i, j, _, n) in f.node_indices() {
        fluct.raw_mut()[n] -= mean.get(i, j);
    }
    (mean, fluct)
}

pub fn split_barotropic(s: &State, g: &Grid) -> ((Field2D, Field2D), (Field3D, Field3D)) {
    let (m1, f1) = split_component(&s.v1, g);
    let (m2, f2) = split_component(&s.v2, g);
    ((m1, m2), (f1, f2))
}

pub fn diagnose(s: &State, phi_s: &Field2D, p: &PhysParams, g: &Grid) -> Diagnostics {
    let (v_bar, v_tilde) = split_barotropic(s, g);
    Diagnostics {
        w: diagnose_w(s, g),
        phi: diagnose_phi(s, phi_s, p, g),
        v_bar,
        v_tilde,
    }
}
