//! Numerical simulator and verification harness for the three-dimensional
//! viscous primitive equations of large-scale moist atmosphere, written in
//! the prognostic `(v, T, q)` form with diagnostic `w` and geopotential.

#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod covering;
pub mod dynamics;
pub mod energy;
pub mod experiments;
pub mod field;
pub mod grid;
pub mod hydrostatics;
pub mod mms;
pub mod ops;
pub mod params;
pub mod projection;
pub mod snapshot;
pub mod solver;
pub mod state;
pub mod stepper;

pub use field::{Field2D, Field3D};
pub use grid::{Grid, GridError};
pub use params::{ForcingPreset, ForcingSpec, PhysParams};
pub use state::{apply_boundary_conditions, FieldKind, State};
