//! Numerical laboratory for common perpendiculars on arithmetic hyperbolic surfaces.
//!
//! The geometry layers ([`hyp2`], [`convex`]) are generic over the scalar type
//! (`f32`/`f64`); the lattice layer uses exact integer arithmetic; the measure,
//! potential and experiment layers run in `f64`. The aliases below fix the
//! scalar to `f64`, which is what the experiments use.

pub mod real;
pub mod hyp2;
pub mod convex;
pub mod lattice;
pub mod measures;
pub mod gibbs;
pub mod lab;

pub use real::{Real, Tolerances, TOL};

pub type Point = hyp2::Point<f64>;
pub type BoundaryPoint = hyp2::BoundaryPoint<f64>;
pub type UnitTangent = hyp2::UnitTangent<f64>;
pub type HopfCoords = hyp2::HopfCoords<f64>;
pub type Moebius = hyp2::Moebius<f64>;
pub use hyp2::MoebiusInt;
pub type ConvexSet = convex::ConvexSet<f64>;
pub type CommonPerp = convex::CommonPerp<f64>;
pub use lattice::{LatticeGroup, PerpRecord};
pub use measures::{MeasureContext, TestFunction};
pub use gibbs::{GibbsContext, Potential};
pub use lab::{ExperimentConfig, LabError};
