//! Conjugate gradients in a diagonally weighted inner product.
//!
//! Vectors are raw field buffers; `weights` carries the trapezoid weight of
//! every node and zero on ghost entries, so the operator only has to be
//! self-adjoint in `<a, b>_W = sum w a b`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("{what}: residual {residual:.3e} above tolerance {tolerance:.1e} after {iterations} iterations")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CgStats {
    pub iterations: usize,
    /// Final residual `|b - A x|_W` relative to `max(|b|_W, floor / tol)`.
    pub residual: f64,
}

fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..w.len() {
        s += w[i] * a[i] * b[i];
    }
    s
}

/// Solves `A x = b` starting from the contents of `x`. `apply(p, out)`
/// writes `A p` into `out`. Converged once the true residual is below
/// `tol |b|_W` or the absolute `floor`, whichever is larger.
#[allow(clippy::too_many_arguments)]
pub fn conjugate_gradient(
    what: &'static str,
    weights: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    floor: f64,
    max_iter: usize,
    mut apply: impl FnMut(&[f64], &mut [f64]),
) -> Result<CgStats, SolverError> {
    let n = b.len();
    assert!(weights.len() == n && x.len() == n, "vector length mismatch");
    let bnorm = wdot(weights, b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats::default());
    }
    let scale = if tol > 0.0 { bnorm.max(floor / tol) } else { bnorm };

    let mut ap = vec![0.0; n];
    let mut r = vec![0.0; n];
    let true_residual = |x: &[f64], r: &mut [f64], ap: &mut [f64], apply: &mut dyn FnMut(&[f64], &mut [f64])| {
        apply(x, ap);
        for i in 0..n {
            r[i] = b[i] - ap[i];
        }
        wdot(weights, r, r).sqrt() / scale
    };

    let mut rel = true_residual(x, &mut r, &mut ap, &mut apply);
    let mut p = r.clone();
    let mut rr = wdot(weights, &r, &r);
    let mut it = 0;
    while it < max_iter {
        if rel <= tol {
            // guard against drift of the recursive residual
            rel = true_residual(x, &mut r, &mut ap, &mut apply);
            if rel <= tol {
                return Ok(CgStats {
                    iterations: it,
                    residual: rel,
                });
            }
            p.copy_from_slice(&r);
            rr = wdot(weights, &r, &r);
        }
        apply(&p, &mut ap);
        let pap = wdot(weights, &p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = wdot(weights, &r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rel = rr.sqrt() / scale;
        it += 1;
    }
    let rel = true_residual(x, &mut r, &mut ap, &mut apply);
    if rel <= tol {
        return Ok(CgStats {
            iterations: it,
            residual: rel,
        });
    }
    Err(SolverError::NonConvergence {
        what,
        iterations: it,
        residual: rel,
        tolerance: tol,
    })
}
