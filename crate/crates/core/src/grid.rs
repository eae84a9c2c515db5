//! Uniform node-centered grid on the box `(0,Lx) x (0,Ly) x (0,1)`.

use thiserror::Error;

/// Smallest admissible cell count per direction.
pub const MIN_CELLS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("cell count {name} = {value} is below the minimum of {MIN_CELLS}")]
    TooFewCells { name: &'static str, value: usize },
    #[error("extent {name} = {value} must be finite and positive")]
    BadExtent { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
    pub hz: f64,
    wx: Vec<f64>,
    wy: Vec<f64>,
    wz: Vec<f64>,
}

/// Composite trapezoid weights on `n + 1` equispaced nodes with spacing `h`.
pub fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n + 1];
    w[0] = 0.5 * h;
    w[n] = 0.5 * h;
    w
}

impl Grid {
    pub fn new(nx: usize, ny: usize, nz: usize, lx: f64, ly: f64) -> Result<Self, GridError> {
        for (name, value) in [("Nx", nx), ("Ny", ny), ("Nz", nz)] {
            if value < MIN_CELLS {
                return Err(GridError::TooFewCells { name, value });
            }
        }
        for (name, value) in [("Lx", lx), ("Ly", ly)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(GridError::BadExtent { name, value });
            }
        }
        let hx = lx / nx as f64;
        let hy = ly / ny as f64;
        let hz = 1.0 / nz as f64;
        Ok(Self {
            nx,
            ny,
            nz,
            lx,
            ly,
            hx,
            hy,
            hz,
            wx: trapezoid_weights(nx, hx),
            wy: trapezoid_weights(ny, hy),
            wz: trapezoid_weights(nz, hz),
        })
    }

    /// Cubic grid on the unit box, the common case in tests.
    pub fn cube(n: usize) -> Result<Self, GridError> {
        Self::new(n, n, n, 1.0, 1.0)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.hx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.hy
    }

    /// Nodes sit at `k / Nz`, so `z(0) = 0` and `z(Nz) = 1` exactly.
    #[inline]
    pub fn z(&self, k: usize) -> f64 {
        k as f64 / self.nz as f64
    }

    pub fn wx(&self) -> &[f64] {
        &self.wx
    }

    pub fn wy(&self) -> &[f64] {
        &self.wy
    }

    pub fn wz(&self) -> &[f64] {
        &self.wz
    }

    /// Tensor-product trapezoid weight of node `(i, j, k)`.
    #[inline]
    pub fn weight3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.wx[i] * self.wy[j] * self.wz[k]
    }

    #[inline]
    pub fn weight2(&self, i: usize, j: usize) -> f64 {
        self.wx[i] * self.wy[j]
    }

    pub fn volume(&self) -> f64 {
        self.lx * self.ly
    }

    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1) * (self.nz + 1)
    }

    /// Same extents, every cell count doubled.
    pub fn refined(&self) -> Self {
        Self::new(2 * self.nx, 2 * self.ny, 2 * self.nz, self.lx, self.ly).expect("refining a valid grid stays valid")
    }
}
