//! Surface potential `Phi_s` as the Lagrange multiplier of the barotropic
//! constraint `div(avg v) = 0`.
//!
//! The correction uses the exact discrete adjoint `G` of the SBP divergence
//! `D` (central differences at nodes off the corresponding wall, nothing on
//! it), so `A = -D G` is symmetric semidefinite in the trapezoid product and
//! the CG residual is exactly the remaining divergence of the mean flow.
//! `A` has a four-dimensional null space (constants and checkerboards); the
//! right-hand side is orthogonal to it and CG started from zero never leaves
//! its range.

use crate::field::{Field2D, Field3D};
use crate::grid::Grid;
use crate::ops::{divergence_2d, sbp_dx, sbp_dy, vertical_average};
use crate::solver::{conjugate_gradient, SolverError};

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticSolve {
    /// Relative target for the remaining `|D avg v|`, measured against the
    /// larger of `|D avg v*|` and `|grad v*|`.
    pub tolerance: f64,
    /// Iteration cap; `None` means `10 sqrt(Nx Ny)`.
    pub max_iter: Option<usize>,
    pub last_residual: f64,
    pub last_iters: usize,
}

impl Default for EllipticSolve {
    fn default() -> Self {
        Self::new(1e-8)
    }
}

impl EllipticSolve {
    pub fn new(tolerance: f64) -> Self {
        Self {
            tolerance,
            max_iter: None,
            last_residual: 0.0,
            last_iters: 0,
        }
    }

    pub fn iteration_cap(&self, g: &Grid) -> usize {
        self.max_iter
            .unwrap_or_else(|| (10.0 * ((g.nx * g.ny) as f64).sqrt()).ceil() as usize)
    }
}

/// Adjoint gradient `G phi` on `M`.
pub fn adjoint_gradient(phi: &Field2D, g: &Grid) -> (Field2D, Field2D) {
    let mut gx = Field2D::zeros(g);
    let mut gy = Field2D::zeros(g);
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            if i > 0 && i < g.nx {
                gx.set(i, j, (phi.get(i + 1, j) - phi.get(i - 1, j)) / (2.0 * g.hx));
            }
            if j > 0 && j < g.ny {
                gy.set(i, j, (phi.get(i, j + 1) - phi.get(i, j - 1)) / (2.0 * g.hy));
            }
        }
    }
    (gx, gy)
}

fn weights2(g: &Grid) -> Vec<f64> {
    let mut w = Vec::with_capacity((g.nx + 1) * (g.ny + 1));
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            w.push(g.weight2(i, j));
        }
    }
    w
}

/// Projects `(v1*, v2*)` onto the discrete barotropic constraint. Returns the
/// corrected velocity and `Phi_s` with zero trapezoid mean; the correction
/// `dt G Phi_s` is subtracted identically at every level.
pub fn project(
    v1: &Field3D,
    v2: &Field3D,
    dt: f64,
    g: &Grid,
    es: &mut EllipticSolve,
) -> Result<(Field3D, Field3D, Field2D), SolverError> {
    let (a1, a2) = (vertical_average(v1, g), vertical_average(v2, g));
    let div = divergence_2d(&a1, &a2, g);
    let b: Vec<f64> = div.raw().iter().map(|d| -d / dt).collect();
    let w = weights2(g);
    let floor = es.tolerance * horizontal_gradient_norm(v1, v2, g) / dt;

    let mut phi = Field2D::zeros(g);
    let mut scratch = Field2D::zeros(g);
    let apply = |p: &[f64], out: &mut [f64]| {
        scratch.raw_mut().copy_from_slice(p);
        let (gx, gy) = adjoint_gradient(&scratch, g);
        let d = divergence_2d(&gx, &gy, g);
        for (o, v) in out.iter_mut().zip(d.raw()) {
            *o = -v;
        }
    };
    let stats = conjugate_gradient(
        "surface potential",
        &w,
        &b,
        phi.raw_mut(),
        es.tolerance,
        floor,
        es.iteration_cap(g),
        apply,
    )?;
    es.last_iters = stats.iterations;
    es.last_residual = stats.residual;

    let mean = phi.mean(g);
    phi.add_scalar(-mean);

    let (gx, gy) = adjoint_gradient(&phi, g);
    let mut out1 = v1.clone();
    let mut out2 = v2.clone();
    for k in 0..=g.nz {
        for j in 0..=g.ny {
            for i in 0..=g.nx {
                let n = out1.idx(i, j, k);
                out1.raw_mut()[n] -= dt * gx.get(i, j);
                out2.raw_mut()[n] -= dt * gy.get(i, j);
            }
        }
    }
    Ok((out1, out2, phi))
}

/// `|grad v|` over `Omega` with the SBP stencils, the scale of the
/// divergence tolerance.
pub fn horizontal_gradient_norm(v1: &Field3D, v2: &Field3D, g: &Grid) -> f64 {
    let mut s = 0.0;
    for (i, j, k, _) in v1.node_indices() {
        let w = g.weight3(i, j, k);
        s += w
            * (sbp_dx(v1, i, j, k, g).powi(2)
                + sbp_dy(v1, i, j, k, g).powi(2)
                + sbp_dx(v2, i, j, k, g).powi(2)
                + sbp_dy(v2, i, j, k, g).powi(2));
    }
    s.sqrt()
}

/// `|D avg v|` in `L^2(M)`, the quantity the projection drives to zero.
pub fn mean_divergence(v1: &Field3D, v2: &Field3D, g: &Grid) -> f64 {
    let (a1, a2) = (vertical_average(v1, g), vertical_average(v2, g));
    divergence_2d(&a1, &a2, g).l2(g)
}
