//! Physical constants of the moist primitive equations and forcing presets.

use std::f64::consts::PI;

use thiserror::Error;

use crate::field::Field3D;
use crate::grid::Grid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("{key} = {value} is out of range ({reason})")]
    OutOfRange {
        key: String,
        value: f64,
        reason: &'static str,
    },
}

/// Shape of a forcing field `Q1` or `Q2`.
#[derive(Debug, Clone, PartialEq)]
pub enum ForcingPreset {
    Zero,
    /// `A cos(m pi x/Lx) cos(n pi y/Ly) cos(l pi z)`; every factor has zero
    /// normal derivative on the walls.
    Mode {
        m: u32,
        n: u32,
        l: u32,
    },
    /// Gaussian bump centred at `(cx Lx, cy Ly, cz)` with width `width`.
    Bump {
        cx: f64,
        cy: f64,
        cz: f64,
        width: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSpec {
    pub preset: ForcingPreset,
    pub amplitude: f64,
}

impl ForcingSpec {
    pub fn zero() -> Self {
        Self {
            preset: ForcingPreset::Zero,
            amplitude: 0.0,
        }
    }

    pub fn mode(amplitude: f64, m: u32, n: u32, l: u32) -> Self {
        Self {
            preset: ForcingPreset::Mode { m, n, l },
            amplitude,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.preset, ForcingPreset::Zero) || self.amplitude == 0.0
    }

    pub fn sample(&self, g: &Grid) -> Field3D {
        let a = self.amplitude;
        match self.preset {
            ForcingPreset::Zero => Field3D::zeros(g),
            ForcingPreset::Mode { m, n, l } => {
                let (kx, ky, kz) = (m as f64 * PI / g.lx, n as f64 * PI / g.ly, l as f64 * PI);
                Field3D::from_fn(g, |x, y, z| a * (kx * x).cos() * (ky * y).cos() * (kz * z).cos())
            }
            ForcingPreset::Bump { cx, cy, cz, width } => {
                let (x0, y0) = (cx * g.lx, cy * g.ly);
                let s2 = width * width;
                Field3D::from_fn(g, |x, y, z| {
                    let r2 = (x - x0).powi(2) + (y - y0).powi(2) + (z - cz).powi(2);
                    a * (-r2 / s2).exp()
                })
            }
        }
    }
}

/// Physical parameters. Field names follow the usual meteorological symbols.
#[derive(Debug, Clone, PartialEq)]
#[allow(non_snake_case)]
pub struct PhysParams {
    pub Re1: f64,
    pub Re2: f64,
    pub Rt1: f64,
    pub Rt2: f64,
    pub Rt3: f64,
    pub Rt4: f64,
    pub Ro: f64,
    /// Coriolis parameter `2 cos(theta_0)`; any sign allowed.
    pub f: f64,
    pub a: f64,
    pub b: f64,
    /// Surface pressure.
    pub P: f64,
    /// Pressure of the upper atmosphere.
    pub p0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub Q1: ForcingSpec,
    pub Q2: ForcingSpec,
}

impl Default for PhysParams {
    fn default() -> Self {
        Self {
            Re1: 1.0,
            Re2: 1.0,
            Rt1: 1.0,
            Rt2: 1.0,
            Rt3: 1.0,
            Rt4: 1.0,
            Ro: 1.0,
            f: 1.0,
            a: 0.618,
            b: 1.0,
            P: 1.0,
            p0: 0.5,
            alpha: 1.0,
            beta: 1.0,
            Q1: ForcingSpec::zero(),
            Q2: ForcingSpec::zero(),
        }
    }
}

impl PhysParams {
    /// Scalar parameters by config key, in canonical order.
    pub fn scalars(&self) -> [(&'static str, f64); 14] {
        [
            ("Re1", self.Re1),
            ("Re2", self.Re2),
            ("Rt1", self.Rt1),
            ("Rt2", self.Rt2),
            ("Rt3", self.Rt3),
            ("Rt4", self.Rt4),
            ("Ro", self.Ro),
            ("f", self.f),
            ("a", self.a),
            ("b", self.b),
            ("P", self.P),
            ("p0", self.p0),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ]
    }

    pub fn scalar_mut(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "Re1" => &mut self.Re1,
            "Re2" => &mut self.Re2,
            "Rt1" => &mut self.Rt1,
            "Rt2" => &mut self.Rt2,
            "Rt3" => &mut self.Rt3,
            "Rt4" => &mut self.Rt4,
            "Ro" => &mut self.Ro,
            "f" => &mut self.f,
            "a" => &mut self.a,
            "b" => &mut self.b,
            "P" => &mut self.P,
            "p0" => &mut self.p0,
            "alpha" => &mut self.alpha,
            "beta" => &mut self.beta,
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        for (key, value) in self.scalars() {
            if !value.is_finite() {
                return Err(ParamError::OutOfRange {
                    key: format!("params.{key}"),
                    value,
                    reason: "must be finite",
                });
            }
            if key != "f" && value <= 0.0 {
                return Err(ParamError::OutOfRange {
                    key: format!("params.{key}"),
                    value,
                    reason: "must be positive",
                });
            }
        }
        if self.P <= self.p0 {
            return Err(ParamError::OutOfRange {
                key: "params.P".into(),
                value: self.P,
                reason: "surface pressure must exceed p0",
            });
        }
        Ok(())
    }

    /// Pressure at the rescaled vertical coordinate, `p(z) = (P - p0) z + p0`.
    #[inline]
    pub fn pressure(&self, z: f64) -> f64 {
        (self.P - self.p0) * z + self.p0
    }

    /// The hydrostatic factor `bP / p(z)` sampled on the z-levels.
    pub fn buoyancy_profile(&self, g: &Grid) -> Vec<f64> {
        (0..=g.nz).map(|k| self.b * self.P / self.pressure(g.z(k))).collect()
    }

    /// Robin coefficient for temperature at the top: `dT/dz + alpha Rt2 T = 0`.
    pub fn robin_t(&self) -> f64 {
        self.alpha * self.Rt2
    }

    /// Robin coefficient for moisture at the top: `dq/dz + beta Rt4 q = 0`.
    pub fn robin_q(&self) -> f64 {
        self.beta * self.Rt4
    }

    /// Constant of the vertical Poincare inequality for `q`.
    pub fn poincare_q(&self) -> f64 {
        2.0 * self.Rt4 + 2.0 / self.beta
    }

    /// Same for `T`.
    pub fn poincare_t(&self) -> f64 {
        2.0 * self.Rt2 + 2.0 / self.alpha
    }

    /// Gronwall decay rate of `|q|_2^2` in the unforced case.
    pub fn q_decay_rate(&self) -> f64 {
        1.0 / self.poincare_q()
    }
}
