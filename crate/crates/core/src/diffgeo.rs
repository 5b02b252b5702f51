//! Fundamental forms, unit normals and mean curvature of spline surfaces.
//!
//! `H = (EN − 2FM + GL) / (2(EG − F²))` is the average of the principal
//! curvatures measured against the chart normal `S_u × S_v`. With an outward
//! normal a convex surface therefore has `H < 0` (the unit sphere gives
//! `H = −1`), and the mean-curvature vector `H·n` points inward regardless of
//! which normal was used.

use crate::error::{Error, Result};
use crate::splinecore::{BSplineSurface, SurfacePartials};
use crate::Vec3;

/// Relative floor for `|S_u × S_v|` against `|S_u|·|S_v|`.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Coefficients of the first and second fundamental forms at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalForms {
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub l: f64,
    pub m: f64,
    pub n: f64,
    /// `(S_u × S_v) / |S_u × S_v|`.
    pub normal: Vec3,
}

/// Local geometry of a surface at one parameter pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricSample {
    pub position: Vec3,
    pub normal: Vec3,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    pub l: f64,
    pub m: f64,
    pub n: f64,
    /// Average-convention mean curvature, signed against `normal`.
    pub mean_curvature: f64,
    pub param: (f64, f64),
}

impl GeometricSample {
    /// `H·n`, independent of the orientation sign.
    pub fn mean_curvature_vector(&self) -> Vec3 {
        self.normal * self.mean_curvature
    }
}

pub fn fundamental_forms(d: &SurfacePartials) -> Result<FundamentalForms> {
    let cross = d.su.cross(&d.sv);
    let len = cross.norm();
    let scale = d.su.norm() * d.sv.norm();
    if !(len > DEGENERACY_TOL * scale) || len == 0.0 {
        return Err(Error::DegenerateTangent(len));
    }
    let normal = cross / len;
    Ok(FundamentalForms {
        e: d.su.dot(&d.su),
        f: d.su.dot(&d.sv),
        g: d.sv.dot(&d.sv),
        l: d.suu.dot(&normal),
        m: d.suv.dot(&normal),
        n: d.svv.dot(&normal),
        normal,
    })
}

pub fn mean_curvature(e: f64, f: f64, g: f64, l: f64, m: f64, n: f64) -> Result<f64> {
    let det = e * g - f * f;
    if !(det > DEGENERACY_TOL * DEGENERACY_TOL * e * g) || det <= 0.0 {
        return Err(Error::DegenerateMetric(det));
    }
    Ok((e * n - 2.0 * f * m + g * l) / (2.0 * det))
}

/// Normal, forms and mean curvature at `(u, v)`; `orientation_sign` (±1)
/// flips the normal together with `L, M, N` and `H`.
pub fn sample_geometry(s: &BSplineSurface, u: f64, v: f64, orientation_sign: f64) -> Result<GeometricSample> {
    let d = s.partials(u, v)?;
    sample_from_partials(&d, (u, v), orientation_sign)
}

pub(crate) fn sample_from_partials(
    d: &SurfacePartials,
    param: (f64, f64),
    orientation_sign: f64,
) -> Result<GeometricSample> {
    let ff = fundamental_forms(d)?;
    let sign = if orientation_sign < 0.0 { -1.0 } else { 1.0 };
    let (l, m, n) = (ff.l * sign, ff.m * sign, ff.n * sign);
    let h = mean_curvature(ff.e, ff.f, ff.g, l, m, n)?;
    Ok(GeometricSample {
        position: d.point,
        normal: ff.normal * sign,
        e: ff.e,
        f: ff.f,
        g: ff.g,
        l,
        m,
        n,
        mean_curvature: h,
        param,
    })
}
