//! Quadrature and difference stencils shared by the dynamics and diagnostics.
//!
//! Horizontal first derivatives use the diagonal-norm summation-by-parts
//! operator: central differences inside, `(u1 - u0)/h` on the walls. Paired with
//! trapezoid weights it satisfies `<Du, v> = -<u, Dv>` exactly whenever `v`
//! vanishes on the walls, which is what makes the discrete buoyancy-work
//! identity hold to round-off.

use crate::field::{Field2D, Field3D};
use crate::grid::Grid;

/// Trapezoid inner product over the nodes of `Omega`.
pub fn inner(a: &Field3D, b: &Field3D, g: &Grid) -> f64 {
    let mut s = 0.0;
    for k in 0..=g.nz {
        let wz = g.wz()[k];
        for j in 0..=g.ny {
            let wyz = wz * g.wy()[j];
            let row = a.idx(0, j, k);
            for i in 0..=g.nx {
                s += wyz * g.wx()[i] * a.at(row + i) * b.at(row + i);
            }
        }
    }
    s
}

pub fn l2(a: &Field3D, g: &Grid) -> f64 {
    inner(a, a, g).sqrt()
}

/// Trapezoid integral of `f` in z from `0` to level `k_upper`.
pub fn vertical_integral(f: &Field3D, k_upper: usize, g: &Grid) -> Field2D {
    assert!(k_upper <= g.nz, "level {k_upper} outside the column");
    let mut out = Field2D::zeros(g);
    let h = g.hz;
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let mut s = 0.0;
            for k in 0..k_upper {
                s += 0.5 * h * (f.get(i, j, k) + f.get(i, j, k + 1));
            }
            out.set(i, j, s);
        }
    }
    out
}

/// Vertical average `int_0^1 f dz`, computed with the trapezoid weights.
pub fn vertical_average(f: &Field3D, g: &Grid) -> Field2D {
    let mut out = Field2D::zeros(g);
    let wz = g.wz();
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let mut s = 0.0;
            for (k, w) in wz.iter().enumerate() {
                s += w * f.get(i, j, k);
            }
            out.set(i, j, s);
        }
    }
    out
}

/// Cumulative trapezoid `int_0^z f` at every level; the top level equals the
/// full-column trapezoid by telescoping.
pub fn cumulative_trapezoid(f: &Field3D, g: &Grid) -> Field3D {
    let mut out = Field3D::zeros(g);
    let h = g.hz;
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let mut s = 0.0;
            out.set(i, j, 0, 0.0);
            for k in 1..=g.nz {
                s += 0.5 * h * (f.get(i, j, k - 1) + f.get(i, j, k));
                out.set(i, j, k, s);
            }
        }
    }
    out
}

/// The discrete adjoint partner of [`cumulative_trapezoid`]:
/// `J = 1 1^T W - W^-1 I^T W` with `W` the trapezoid weights and `I` the
/// cumulative trapezoid. It equals the cumulative trapezoid on interior
/// levels and differs by `h/2 f` on the two end levels. Using it for the
/// buoyancy integral gives `<J a, b> = <a, avg b> - <a, I b>` exactly.
pub fn cumulative_adjoint(f: &Field3D, g: &Grid) -> Field3D {
    let mut out = cumulative_trapezoid(f, g);
    let half = 0.5 * g.hz;
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            out.set(i, j, 0, half * f.get(i, j, 0));
            let top = out.get(i, j, g.nz) - half * f.get(i, j, g.nz);
            out.set(i, j, g.nz, top);
        }
    }
    out
}

/// Summation-by-parts x-derivative at node `(i, j, k)`.
#[inline]
pub fn sbp_dx(f: &Field3D, i: usize, j: usize, k: usize, g: &Grid) -> f64 {
    let n = f.idx(i, j, k);
    if i == 0 {
        (f.at(n + 1) - f.at(n)) / g.hx
    } else if i == g.nx {
        (f.at(n) - f.at(n - 1)) / g.hx
    } else {
        (f.at(n + 1) - f.at(n - 1)) / (2.0 * g.hx)
    }
}

#[inline]
pub fn sbp_dy(f: &Field3D, i: usize, j: usize, k: usize, g: &Grid) -> f64 {
    let n = f.idx(i, j, k);
    let s = f.sy();
    if j == 0 {
        (f.at(n + s) - f.at(n)) / g.hy
    } else if j == g.ny {
        (f.at(n) - f.at(n - s)) / g.hy
    } else {
        (f.at(n + s) - f.at(n - s)) / (2.0 * g.hy)
    }
}

/// Vertical derivative: central inside, second-order one-sided on the
/// bottom and top levels.
#[inline]
pub fn dz_one_sided(f: &Field3D, i: usize, j: usize, k: usize, g: &Grid) -> f64 {
    let n = f.idx(i, j, k);
    let s = f.sz();
    if k == 0 {
        (-3.0 * f.at(n) + 4.0 * f.at(n + s) - f.at(n + 2 * s)) / (2.0 * g.hz)
    } else if k == g.nz {
        (3.0 * f.at(n) - 4.0 * f.at(n - s) + f.at(n - 2 * s)) / (2.0 * g.hz)
    } else {
        (f.at(n + s) - f.at(n - s)) / (2.0 * g.hz)
    }
}

pub fn grad_x(f: &Field3D, g: &Grid) -> Field3D {
    let mut out = Field3D::zeros(g);
    for (i, j, k, n) in f.node_indices() {
        out.raw_mut()[n] = sbp_dx(f, i, j, k, g);
    }
    out
}

pub fn grad_y(f: &Field3D, g: &Grid) -> Field3D {
    let mut out = Field3D::zeros(g);
    for (i, j, k, n) in f.node_indices() {
        out.raw_mut()[n] = sbp_dy(f, i, j, k, g);
    }
    out
}

/// Horizontal divergence `d v1/dx + d v2/dy` with the SBP stencils.
pub fn divergence(v1: &Field3D, v2: &Field3D, g: &Grid) -> Field3D {
    let mut out = Field3D::zeros(g);
    for (i, j, k, n) in v1.node_indices() {
        out.raw_mut()[n] = sbp_dx(v1, i, j, k, g) + sbp_dy(v2, i, j, k, g);
    }
    out
}

/// 2D counterpart of [`divergence`] on `M`.
pub fn divergence_2d(a: &Field2D, b: &Field2D, g: &Grid) -> Field2D {
    let mut out = Field2D::zeros(g);
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let dx = if i == 0 {
                (a.get(1, j) - a.get(0, j)) / g.hx
            } else if i == g.nx {
                (a.get(i, j) - a.get(i - 1, j)) / g.hx
            } else {
                (a.get(i + 1, j) - a.get(i - 1, j)) / (2.0 * g.hx)
            };
            let dy = if j == 0 {
                (b.get(i, 1) - b.get(i, 0)) / g.hy
            } else if j == g.ny {
                (b.get(i, j) - b.get(i, j - 1)) / g.hy
            } else {
                (b.get(i, j + 1) - b.get(i, j - 1)) / (2.0 * g.hy)
            };
            out.set(i, j, dx + dy);
        }
    }
    out
}

/// Sum over cells in one direction of `h (Delta u / h)^2`, trapezoid in the
/// other two. This is the quadratic form produced by the ghost-eliminated
/// three-point Laplacian, so `<-delta^2 u, u> = |D+ u|^2` holds exactly.
pub fn forward_gradient_sq(f: &Field3D, axis: usize, g: &Grid) -> f64 {
    let (wx, wy, wz) = (g.wx(), g.wy(), g.wz());
    let mut s = 0.0;
    match axis {
        0 => {
            for k in 0..=g.nz {
                for j in 0..=g.ny {
                    let w = wy[j] * wz[k];
                    for i in 0..g.nx {
                        let d = (f.get(i + 1, j, k) - f.get(i, j, k)) / g.hx;
                        s += w * g.hx * d * d;
                    }
                }
            }
        }
        1 => {
            for k in 0..=g.nz {
                for j in 0..g.ny {
                    for i in 0..=g.nx {
                        let d = (f.get(i, j + 1, k) - f.get(i, j, k)) / g.hy;
                        s += wx[i] * wz[k] * g.hy * d * d;
                    }
                }
            }
        }
        2 => {
            for k in 0..g.nz {
                for j in 0..=g.ny {
                    for i in 0..=g.nx {
                        let d = (f.get(i, j, k + 1) - f.get(i, j, k)) / g.hz;
                        s += wx[i] * wy[j] * g.hz * d * d;
                    }
                }
            }
        }
        _ => panic!("axis must be 0, 1 or 2"),
    }
    s
}

/// Trapezoid integral over `M` of `f(z = 1)^2`.
pub fn top_surface_sq(f: &Field3D, g: &Grid) -> f64 {
    let mut s = 0.0;
    for j in 0..=g.ny {
        for i in 0..=g.nx {
            let v = f.get(i, j, g.nz);
            s += g.weight2(i, j) * v * v;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn vertical_integral_exact_for_constants_and_linears() {
        let g = Grid::cube(4).unwrap();
        let one = Field3D::constant(&g, 1.0);
        let lin = Field3D::from_fn(&g, |_, _, z| z);
        let a = vertical_integral(&one, g.nz, &g);
        let b = vertical_integral(&lin, g.nz, &g);
        for j in 0..=g.ny {
            for i in 0..=g.nx {
                assert!((a.get(i, j) - 1.0).abs() < 1e-15);
                assert!((b.get(i, j) - 0.5).abs() < 1e-15);
            }
        }
        assert_eq!(vertical_average(&lin, &g), b);
    }

    #[test]
    fn trapezoid_error_bound_for_quadratic() {
        let g = Grid::new(4, 4, 8, 1.0, 1.0).unwrap();
        let sq = Field3D::from_fn(&g, |_, _, z| z * z);
        let v = vertical_integral(&sq, g.nz, &g).get(2, 2);
        // composite trapezoid error for z^2 on [0,1] is h^2/6
        let err = (v - 1.0 / 3.0).abs();
        assert!(err <= 1.0 / (6.0 * 64.0) + 1e-15);
        assert!((err - 1.0 / (6.0 * 64.0)).abs() < 1e-14);
    }

    #[test]
    fn trapezoid_is_second_order() {
        let f = |z: f64| (2.0 * z).exp() * (3.0 * z).cos();
        // int_0^1 e^{2z} cos 3z dz in closed form
        let exact = {
            let e2 = 2f64.exp();
            (e2 * (2.0 * 3f64.cos() + 3.0 * 3f64.sin()) - 2.0) / 13.0
        };
        let mut prev = None;
        for n in [4, 8, 16, 32] {
            let g = Grid::new(4, 4, n, 1.0, 1.0).unwrap();
            let fld = Field3D::from_fn(&g, |_, _, z| f(z));
            let err = (vertical_average(&fld, &g).get(0, 0) - exact).abs();
            if let Some(p) = prev {
                assert!(p / err >= 3.5, "ratio {} at n={n}", p / err);
            }
            prev = Some(err);
        }
    }

    #[test]
    fn cumulative_top_matches_column_average() {
        let g = Grid::new(4, 4, 7, 1.0, 1.0).unwrap();
        let f = Field3D::from_fn(&g, |x, y, z| (x + 2.0 * y).sin() * z.exp());
        let c = cumulative_trapezoid(&f, &g);
        let a = vertical_average(&f, &g);
        for j in 0..=g.ny {
            for i in 0..=g.nx {
                assert_eq!(c.get(i, j, 0), 0.0);
                assert!((c.get(i, j, g.nz) - a.get(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn adjoint_pairing_is_exact() {
        // <J a, b>_z = avg(a) avg(b) - <a, I b>_z column by column
        let g = Grid::new(4, 4, 9, 1.0, 1.0).unwrap();
        let a = Field3D::from_fn(&g, |x, _, z| (1.0 + x) * (5.0 * z).sin() + z * z);
        let b = Field3D::from_fn(&g, |_, y, z| (y - z).cos() + 3.0 * z);
        let ja = cumulative_adjoint(&a, &g);
        let ib = cumulative_trapezoid(&b, &g);
        let wz = g.wz();
        for (i, j) in [(0, 0), (2, 3), (4, 4)] {
            let col =
                |f: &Field3D, h: &Field3D| -> f64 { (0..=g.nz).map(|k| wz[k] * f.get(i, j, k) * h.get(i, j, k)).sum() };
            let avg = |f: &Field3D| -> f64 { (0..=g.nz).map(|k| wz[k] * f.get(i, j, k)).sum() };
            let lhs = col(&ja, &b);
            let rhs = avg(&a) * avg(&b) - col(&a, &ib);
            assert!((lhs - rhs).abs() < 1e-14, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn sbp_identity_holds_with_wall_zero() {
        let g = Grid::new(7, 5, 4, 1.3, 0.9).unwrap();
        let u = Field3D::from_fn(&g, |x, y, z| (2.0 * x + y).cos() + z * x);
        let mut v = Field3D::from_fn(&g, |x, y, z| (x * y).sin() + z + 1.0);
        for k in 0..=g.nz {
            for j in 0..=g.ny {
                v.set(0, j, k, 0.0);
                v.set(g.nx, j, k, 0.0);
            }
        }
        let lhs = inner(&grad_x(&u, &g), &v, &g);
        let rhs = -inner(&u, &grad_x(&v, &g), &g);
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn forward_gradient_of_linear() {
        let g = Grid::new(4, 4, 4, 2.0, 1.0).unwrap();
        let f = Field3D::from_fn(&g, |x, _, _| 3.0 * x);
        // |df/dx|^2 integrated over the box of volume 2
        assert!((forward_gradient_sq(&f, 0, &g) - 18.0).abs() < 1e-12);
        assert!(forward_gradient_sq(&f, 1, &g).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn vertical_integral_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, s in 0.1f64..4.0) {
            let g = Grid::new(4, 4, 6, 1.0, 1.0).unwrap();
            let f = Field3D::from_fn(&g, |x, y, z| (s * x + y).sin() * z);
            let h = Field3D::from_fn(&g, |x, _, z| x * x + (s * z).cos());
            let mut comb = f.scaled(a);
            comb.axpy(b, &h);
            for k in [2, g.nz] {
                let lhs = vertical_integral(&comb, k, &g);
                let (fi, hi) = (vertical_integral(&f, k, &g), vertical_integral(&h, k, &g));
                for j in 0..=g.ny {
                    for i in 0..=g.nx {
                        let rhs = a * fi.get(i, j) + b * hi.get(i, j);
                        prop_assert!((lhs.get(i, j) - rhs).abs() < 1e-13);
                    }
                }
            }
        }
    }
}
