//! Numerical laboratory for canonical metrics on one-dimensional model
//! varieties.
//!
//! The library builds the canonical volume form of a curve (or a twisted
//! adjoint system on it) along two independent routes and compares them:
//!
//! * an iteration of weighted orthogonal-projection kernels, where the
//!   metric produced at level m feeds the inner product at level m+1, and
//! * a damped Newton solve of the twisted Kaehler-Einstein equation on the
//!   same chart atlas.
//!
//! Everything runs on shared overlapping-chart discretizations of the model
//! surfaces (the projective line, the unit disk, genus-2 hyperelliptic
//! curves, and a one-parameter pencil of them), so the two routes share
//! quadrature and differentiation conventions and disagreements are
//! attributable to mathematics, not plumbing.
//!
//! Conventions used throughout, fixed once:
//!
//! * integrals of (1,1)-densities are taken against sqrt(-1) dz ^ dzbar,
//!   which equals twice the Lebesgue area element of the chart coordinate;
//! * a metric h on a line bundle is stored as the weight w with h = e^{-w}
//!   in each chart's declared frame, so |s|^2_h = |f|^2 e^{-w} for a section
//!   with frame coefficient f; an explicit mask flags nodes where the weight
//!   is minus infinity;
//! * curvature of a weight is the density of ddbar w against the same form,
//!   so the total curvature of a degree-d bundle integrates to 2 pi d.

pub mod bergman;
pub mod cache;
pub mod config;
pub mod dynamics;
pub mod family;
pub mod geometry;
pub mod hodge;
pub mod linalg;
pub mod ma;
pub mod metrics;
pub mod report;
pub mod util;

pub use geometry::{ChartAtlas, SectionBasis};
pub use metrics::{CurvatureField, WeightField};

/// Entry point for the command-line binary; returns the process exit code.
pub fn cli_main() -> i32 {
    config::cli_entry()
}
