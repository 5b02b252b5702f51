//! Lagrangian evolution of point clouds sampled from closed surfaces in R³.
//!
//! The cloud is split into disjoint core patches, each extended by a ring of
//! neighbouring points and fitted once with a local tensor-product B-spline.
//! Normals and mean curvature come analytically from the spline; data points
//! and control nets are then advected together, with Gauss–Seidel repair of
//! the control net, knot insertion and point-density management keeping the
//! local fits accurate over time.
//!
//! Module map:
//!
//! - [`splinecore`]: knot vectors, basis functions, surface evaluation, knot insertion
//! - [`diffgeo`]: fundamental forms, normals and mean curvature
//! - [`patching`]: core/overlap decomposition, nearest neighbours, orientation
//! - [`paramfit`]: local charts, conditioning-aware rotation search, patch fits
//! - [`adapt`]: Greville deviation, refinement, control-net repair, density control
//! - [`flows`]: velocity laws and the time-stepping loop
//! - [`scenarios`]: test geometries, analytic references, scalar fields
//! - [`record`]: snapshots, manifests and the CSV/PLY/JSON writers

pub mod adapt;
pub mod diffgeo;
pub mod error;
pub mod flows;
pub mod paramfit;
pub mod patching;
pub mod record;
pub mod scenarios;
pub mod splinecore;

pub use error::{Error, Result};

/// Points and vectors in R³.
pub type Vec3 = nalgebra::Vector3<f64>;

pub use adapt::RefineConfig;
pub use diffgeo::GeometricSample;
pub use flows::{EvolutionConfig, Evolution, StepDiagnostics, Termination, VelocityLaw};
pub use patching::{Patch, PatchSet, PointCloud};
pub use scenarios::{FieldProvider, ShapeSpec};
pub use splinecore::{BSplineSurface, Direction, KnotVector};

/// Length of the diagonal of the axis-aligned bounding box of `points`.
pub fn bbox_diagonal(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in &points[1..] {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}

/// Arithmetic mean of a nonempty point set.
pub fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len() as f64
}
