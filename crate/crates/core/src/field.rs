//! Node-centered scalar fields.
//!
//! `Field3D` stores the `(Nx+1) x (Ny+1) x (Nz+1)` node values plus one ghost
//! layer on every face, laid out x-fastest. Ghost values are owned by the
//! boundary-condition code in [`crate::state`]; everything else reads them but
//! never writes them.

use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct Field3D {
    nx: usize,
    ny: usize,
    nz: usize,
    data: Vec<f64>,
}

impl Field3D {
    pub fn zeros(g: &Grid) -> Self {
        Self::zeros_dims(g.nx, g.ny, g.nz)
    }

    pub fn zeros_dims(nx: usize, ny: usize, nz: usize) -> Self {
        Self {
            nx,
            ny,
            nz,
            data: vec![0.0; (nx + 3) * (ny + 3) * (nz + 3)],
        }
    }

    /// Samples `f(x, y, z)` at every node; ghosts stay zero.
    pub fn from_fn(g: &Grid, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(g);
        for k in 0..=g.nz {
            let z = g.z(k);
            for j in 0..=g.ny {
                let y = g.y(j);
                for i in 0..=g.nx {
                    let n = out.idx(i, j, k);
                    out.data[n] = f(g.x(i), y, z);
                }
            }
        }
        out
    }

    pub fn constant(g: &Grid, c: f64) -> Self {
        Self::from_fn(g, |_, _, _| c)
    }

    /// Reassembles a field from its raw ghost-inclusive buffer.
    pub fn from_raw(nx: usize, ny: usize, nz: usize, data: Vec<f64>) -> Option<Self> {
        (data.len() == (nx + 3) * (ny + 3) * (nz + 3)).then_some(Self { nx, ny, nz, data })
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn same_shape(&self, other: &Field3D) -> bool {
        self.dims() == other.dims()
    }

    /// Stride between neighbours in y.
    #[inline]
    pub fn sy(&self) -> usize {
        self.nx + 3
    }

    /// Stride between neighbours in z.
    #[inline]
    pub fn sz(&self) -> usize {
        (self.nx + 3) * (self.ny + 3)
    }

    /// Linear index of node `(i, j, k)`; ghosts are reached by stepping one
    /// stride past a boundary node.
    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i + 1) + (self.nx + 3) * ((j + 1) + (self.ny + 3) * (k + 1))
    }

    /// Index that also accepts the ghost positions `-1` and `N+1`.
    #[inline]
    pub fn gidx(&self, i: isize, j: isize, k: isize) -> usize {
        debug_assert!(i >= -1 && j >= -1 && k >= -1);
        let (i, j, k) = ((i + 1) as usize, (j + 1) as usize, (k + 1) as usize);
        i + (self.nx + 3) * (j + (self.ny + 3) * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let n = self.idx(i, j, k);
        self.data[n] = v;
    }

    #[inline]
    pub fn at(&self, n: usize) -> f64 {
        self.data[n]
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Iterates node indices (ghosts excluded) in x-fastest order.
    pub fn node_indices(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        (0..=nz).flat_map(move |k| (0..=ny).flat_map(move |j| (0..=nx).map(move |i| (i, j, k, self.idx(i, j, k)))))
    }

    /// Node values only, x-fastest.
    pub fn nodes(&self) -> Vec<f64> {
        self.node_indices().map(|(_, _, _, n)| self.data[n]).collect()
    }

    /// Overwrites node values from an x-fastest slice; ghosts are untouched.
    pub fn set_nodes(&mut self, values: &[f64]) {
        let idx: Vec<usize> = self.node_indices().map(|(_, _, _, n)| n).collect();
        assert_eq!(idx.len(), values.len(), "node count mismatch");
        for (n, v) in idx.into_iter().zip(values) {
            self.data[n] = *v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Applies `f` node-wise; ghosts of the result are zero.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field3D {
        let mut out = Field3D::zeros_dims(self.nx, self.ny, self.nz);
        for (_, _, _, n) in self.node_indices() {
            out.data[n] = f(self.data[n]);
        }
        out
    }

    /// `self += a * x` over the whole buffer, ghosts included.
    pub fn axpy(&mut self, a: f64, x: &Field3D) {
        debug_assert!(self.same_shape(x));
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += a * v;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for v in &mut self.data {
            *v *= a;
        }
    }

    pub fn scaled(&self, a: f64) -> Field3D {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// Node-wise `self - other` with zero ghosts.
    pub fn sub(&self, other: &Field3D) -> Field3D {
        debug_assert!(self.same_shape(other));
        let mut out = Field3D::zeros_dims(self.nx, self.ny, self.nz);
        for (_, _, _, n) in self.node_indices() {
            out.data[n] = self.data[n] - other.data[n];
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.node_indices()
            .map(|(_, _, _, n)| self.data[n].abs())
            .fold(0.0, f64::max)
    }

    /// Zeroes every ghost entry.
    pub fn clear_ghosts(&mut self) {
        let nodes: Vec<usize> = self.node_indices().map(|(_, _, _, n)| n).collect();
        let mut keep = vec![false; self.data.len()];
        for n in nodes {
            keep[n] = true;
        }
        for (v, k) in self.data.iter_mut().zip(keep) {
            if !k {
                *v = 0.0;
            }
        }
    }
}

/// Node-centered field on the horizontal section `M`, no ghosts.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl Field2D {
    pub fn zeros(g: &Grid) -> Self {
        Self::zeros_dims(g.nx, g.ny)
    }

    pub fn zeros_dims(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            data: vec![0.0; (nx + 1) * (ny + 1)],
        }
    }

    pub fn from_fn(g: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(g);
        for j in 0..=g.ny {
            for i in 0..=g.nx {
                out.set(i, j, f(g.x(i), g.y(j)));
            }
        }
        out
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i + (self.nx + 1) * j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let n = self.idx(i, j);
        self.data[n] = v;
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Trapezoid integral over `M`.
    pub fn integral(&self, g: &Grid) -> f64 {
        let mut s = 0.0;
        for j in 0..=self.ny {
            for i in 0..=self.nx {
                s += g.weight2(i, j) * self.get(i, j);
            }
        }
        s
    }

    /// Trapezoid mean over `M`.
    pub fn mean(&self, g: &Grid) -> f64 {
        self.integral(g) / g.volume()
    }

    /// Discrete `L^2(M)` norm.
    pub fn l2(&self, g: &Grid) -> f64 {
        let mut s = 0.0;
        for j in 0..=self.ny {
            for i in 0..=self.nx {
                let v = self.get(i, j);
                s += g.weight2(i, j) * v * v;
            }
        }
        s.sqrt()
    }

    pub fn add_scalar(&mut self, c: f64) {
        for v in &mut self.data {
            *v += c;
        }
    }
}
