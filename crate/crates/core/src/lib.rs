//! Fan-beam CT reconstruction with unknown view angles and source distances.
//!
//! The image and the per-view source poses are estimated by alternating
//! minimization: a regularized linear solve for the image, then an
//! independent bound-constrained fit of `(θᵢ, Rᵢ)` for every view.
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar type.

pub mod accel;
pub mod bcd;
pub mod cli;
pub mod dense;
pub mod error;
pub mod format;
pub mod geometry;
pub mod linsolve;
pub mod nlsolve;
pub mod phantom;
pub mod projector;
pub mod scalar;
pub mod simulate;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Params = geometry::GeometryParams<f64>;
pub type Image = phantom::ImageGrid<f64>;
pub type Sino = simulate::Sinogram<f64>;
pub type Operator = projector::StackedOperator<f64>;
pub type Block = projector::ViewBlock<f64>;
pub type Options = bcd::BcdOptions<f64>;
pub type Report = bcd::BcdReport<f64>;
pub type Anderson = accel::AndersonState<f64>;

pub type ParamsF32 = geometry::GeometryParams<f32>;
pub type ImageF32 = phantom::ImageGrid<f32>;
pub type SinoF32 = simulate::Sinogram<f32>;
pub type OperatorF32 = projector::StackedOperator<f32>;
pub type OptionsF32 = bcd::BcdOptions<f32>;
pub type ReportF32 = bcd::BcdReport<f32>;
