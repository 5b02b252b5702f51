//! Test geometries, their analytic normals and curvatures, and scalar
//! fields for the coupled flows.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patching::{PatchSet, PointCloud};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Sphere { radius: f64 },
    Ellipsoid { a: f64, b: f64, c: f64 },
    Torus { major: f64, minor: f64 },
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Sphere { radius } => radius > 0.0,
            Shape::Ellipsoid { a, b, c } => a > 0.0 && b > 0.0 && c > 0.0,
            Shape::Torus { major, minor } => minor > 0.0 && major > minor,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid shape parameters {self:?}")))
        }
    }

    /// Signed implicit residual, normalized so it approximates a length.
    pub fn implicit(&self, x: &Vec3) -> f64 {
        match *self {
            Shape::Sphere { radius } => x.norm() - radius,
            Shape::Ellipsoid { a, b, c } => {
                let s = (x.x / a).powi(2) + (x.y / b).powi(2) + (x.z / c).powi(2);
                (s - 1.0) * a.min(b).min(c) * 0.5
            }
            Shape::Torus { major, minor } => {
                let rho = x.x.hypot(x.y);
                (major - rho).hypot(x.z) - minor
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub shape: Shape,
    pub n_points: usize,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn sphere(n_points: usize, radius: f64) -> Self {
        Self { shape: Shape::Sphere { radius }, n_points, seed: 0 }
    }

    pub fn ellipsoid(n_points: usize, a: f64, b: f64, c: f64, seed: u64) -> Self {
        Self { shape: Shape::Ellipsoid { a, b, c }, n_points, seed }
    }

    pub fn torus(n_points: usize, major: f64, minor: f64, seed: u64) -> Self {
        Self { shape: Shape::Torus { major, minor }, n_points, seed }
    }

    pub fn sample(&self) -> Result<PointCloud> {
        self.shape.validate()?;
        match self.shape {
            Shape::Sphere { radius } => sample_sphere(self.n_points, radius),
            Shape::Ellipsoid { a, b, c } => sample_ellipsoid(self.n_points, a, b, c, self.seed),
            Shape::Torus { major, minor } => sample_torus(self.n_points, major, minor, self.seed),
        }
    }
}

/// Fibonacci lattice on the sphere of radius `r`.
pub fn sample_sphere(n: usize, r: f64) -> Result<PointCloud> {
    if n < 4 {
        return Err(Error::Config("sphere sampling needs at least 4 points".into()));
    }
    let golden = PI * (3.0 - 5f64.sqrt());
    let pts = (0..n)
        .map(|k| {
            let z = 1.0 - (2 * k + 1) as f64 / n as f64;
            let s = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            let d = Vec3::new(s * phi.cos(), s * phi.sin(), z);
            d / d.norm() * r
        })
        .collect();
    Ok(PointCloud::new(pts))
}

/// Dart throwing over area-weighted candidates: a candidate is accepted
/// when no accepted point lies within the current exclusion radius, which
/// shrinks whenever progress stalls. Yields `n` quasi-uniform points.
fn poisson_disk(n: usize, area: f64, seed: u64, mut candidate: impl FnMut(&mut ChaCha8Rng) -> Vec3) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut radius = 0.8 * (area / n as f64).sqrt();
    let mut pts: Vec<Vec3> = Vec::with_capacity(n);
    let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    let key = |p: &Vec3, h: f64| ((p.x / h).floor() as i64, (p.y / h).floor() as i64, (p.z / h).floor() as i64);
    let mut misses = 0;
    while pts.len() < n {
        let c = candidate(&mut rng);
        let (i, j, k) = key(&c, radius);
        let blocked = (-1..=1).any(|a| {
            (-1..=1).any(|b| {
                (-1..=1).any(|d| {
                    cells
                        .get(&(i + a, j + b, k + d))
                        .is_some_and(|list| list.iter().any(|&q| (pts[q] - c).norm() < radius))
                })
            })
        });
        if blocked {
            misses += 1;
            if misses > 200 {
                radius *= 0.97;
                misses = 0;
                cells.clear();
                for (q, p) in pts.iter().enumerate() {
                    cells.entry(key(p, radius)).or_default().push(q);
                }
            }
            continue;
        }
        misses = 0;
        cells.entry((i, j, k)).or_default().push(pts.len());
        pts.push(c);
    }
    pts
}

fn unit_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let d = Vec3::new(rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0);
        let n = d.norm();
        if n > 1e-3 && n <= 1.0 {
            return d / n;
        }
    }
}

fn ellipsoid_area(a: f64, b: f64, c: f64) -> f64 {
    // midpoint rule over the direction sphere, dΩ = dz dφ
    let (nz, nphi) = (400, 400);
    let mut area = 0.0;
    for iz in 0..nz {
        let z = -1.0 + (iz as f64 + 0.5) * 2.0 / nz as f64;
        let s = (1.0 - z * z).sqrt();
        for ip in 0..nphi {
            let phi = (ip as f64 + 0.5) * TAU / nphi as f64;
            let d = Vec3::new(s * phi.cos(), s * phi.sin(), z);
            area += ellipsoid_stretch(a, b, c, &d);
        }
    }
    area * 2.0 / nz as f64 * TAU / nphi as f64
}

/// Area element of `d ↦ (a dₓ, b d_y, c d_z)` relative to the unit sphere.
fn ellipsoid_stretch(a: f64, b: f64, c: f64, d: &Vec3) -> f64 {
    Vec3::new(b * c * d.x, a * c * d.y, a * b * d.z).norm()
}

/// Area-weighted rejection sampling with a Poisson-disk acceptance rule.
pub fn sample_ellipsoid(n: usize, a: f64, b: f64, c: f64, seed: u64) -> Result<PointCloud> {
    Shape::Ellipsoid { a, b, c }.validate()?;
    let gmax = (b * c).max(a * c).max(a * b);
    let area = ellipsoid_area(a, b, c);
    let pts = poisson_disk(n, area, seed, |rng| loop {
        let d = unit_direction(rng);
        if rng.gen::<f64>() * gmax <= ellipsoid_stretch(a, b, c, &d) {
            return Vec3::new(a * d.x, b * d.y, c * d.z);
        }
    });
    Ok(PointCloud::new(pts))
}

pub fn sample_torus(n: usize, major: f64, minor: f64, seed: u64) -> Result<PointCloud> {
    Shape::Torus { major, minor }.validate()?;
    let area = 4.0 * PI * PI * major * minor;
    let pts = poisson_disk(n, area, seed, |rng| loop {
        let theta = rng.gen::<f64>() * TAU;
        let phi = rng.gen::<f64>() * TAU;
        if rng.gen::<f64>() * (major + minor) <= major + minor * theta.cos() {
            let rho = major + minor * theta.cos();
            return Vec3::new(rho * phi.cos(), rho * phi.sin(), minor * theta.sin());
        }
    });
    Ok(PointCloud::new(pts))
}

/// Outward unit normal and mean curvature (average of principal curvatures,
/// positive on convex regions) at a point of the shape.
pub fn analytic_reference(shape: &Shape, x: &Vec3) -> Result<(Vec3, f64)> {
    let scale = match *shape {
        Shape::Sphere { radius } => radius,
        Shape::Ellipsoid { a, b, c } => a.max(b).max(c),
        Shape::Torus { major, .. } => major,
    };
    if shape.implicit(x).abs() > 1e-6 * scale {
        return Err(Error::Domain(format!("point {x:?} is not on the shape")));
    }
    match *shape {
        Shape::Sphere { radius } => Ok((x / x.norm(), 1.0 / radius)),
        Shape::Ellipsoid { a, b, c } => {
            let inv = Vec3::new(1.0 / (a * a), 1.0 / (b * b), 1.0 / (c * c));
            let grad = x.component_mul(&inv) * 2.0;
            let hess_trace = 2.0 * inv.sum();
            let g2 = grad.norm_squared();
            let ghg = 2.0 * grad.component_mul(&grad).dot(&inv);
            let h = (g2 * hess_trace - ghg) / (2.0 * g2 * g2.sqrt());
            Ok((grad / g2.sqrt(), h))
        }
        Shape::Torus { major, minor } => {
            let rho = x.x.hypot(x.y);
            let cos_t = (rho - major) / minor;
            let radial = Vec3::new(x.x / rho, x.y / rho, 0.0);
            let normal = (radial * (rho - major) + Vec3::new(0.0, 0.0, x.z)) / minor;
            let k1 = 1.0 / minor;
            let k2 = cos_t / (major + minor * cos_t);
            Ok((normal / normal.norm(), 0.5 * (k1 + k2)))
        }
    }
}

/// Root-mean-square errors of the fitted geometry at every point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryErrors {
    /// RMS of `‖n_fit − n_ref‖` with outward reference normals.
    pub err_normal: f64,
    /// RMS of `|2H_fit| − |2H_ref|` measured with signs, i.e. of
    /// `2H_ref + 2H_fit` where `H_fit < 0` on convex regions.
    pub err_h: f64,
    /// Points whose geometry could not be sampled.
    pub degenerate: usize,
}

/// Compare the patch geometry at every cloud point with the analytic shape.
pub fn geometry_errors(shape: &Shape, positions: &[Vec3], patches: &PatchSet) -> Result<GeometryErrors> {
    let samples = crate::flows::sample_cloud(patches, positions.len());
    let (mut en, mut eh, mut count, mut degenerate) = (0.0, 0.0, 0usize, 0usize);
    for (x, s) in positions.iter().zip(samples) {
        let Ok(g) = s else {
            degenerate += 1;
            continue;
        };
        let (n, h) = analytic_reference(shape, x)?;
        en += (g.normal - n).norm_squared();
        eh += (2.0 * (g.mean_curvature + h)).powi(2);
        count += 1;
    }
    if count == 0 {
        return Err(Error::DegeneratePatch("no point has valid geometry".into()));
    }
    Ok(GeometryErrors {
        err_normal: (en / count as f64).sqrt(),
        err_h: (eh / count as f64).sqrt(),
        degenerate,
    })
}

/// Mean distance from the points to their centroid.
pub fn estimate_radius(cloud: &PointCloud) -> f64 {
    let c = cloud.centroid();
    cloud.positions.iter().map(|p| (p - c).norm()).sum::<f64>() / cloud.len() as f64
}

/// Ratio of the largest to the smallest principal semi-extent of the cloud.
pub fn anisotropy_ratio(cloud: &PointCloud) -> f64 {
    let c = cloud.centroid();
    let mut cov = nalgebra::Matrix3::zeros();
    for p in &cloud.positions {
        cov += (p - c) * (p - c).transpose();
    }
    let e = nalgebra::SymmetricEigen::new(cov);
    let axes = e.eigenvectors;
    let mut ext = [0.0f64; 3];
    for k in 0..3 {
        let ax = axes.column(k);
        let (lo, hi) = cloud
            .positions
            .iter()
            .map(|p| (p - c).dot(&ax))
            .fold((f64::MAX, f64::MIN), |(lo, hi), t| (lo.min(t), hi.max(t)));
        ext[k] = 0.5 * (hi - lo);
    }
    let max = ext.iter().copied().fold(f64::MIN, f64::max);
    let min = ext.iter().copied().fold(f64::MAX, f64::min);
    max / min
}

/// Gaussian bump on the direction sphere, decaying in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    /// Unit direction of the bump center.
    pub center: [f64; 3],
    pub width: f64,
    /// Decay time `t₀`; `None` keeps the bump constant in time.
    pub decay: Option<f64>,
}

impl Bump {
    pub fn value(&self, x: &Vec3, t: f64) -> f64 {
        let n = x.norm();
        let dir = if n > 0.0 { x / n } else { Vec3::zeros() };
        let c = Vec3::from(self.center);
        let spatial = (-(dir - c).norm_squared() / (self.width * self.width)).exp();
        let temporal = self.decay.map_or(1.0, |t0| (-t / t0).exp());
        self.amplitude * spatial * temporal
    }
}

/// Externally prescribed scalar fields `u` (and `w`) on the surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldProvider {
    Constant { value: f64 },
    Bump(Bump),
    /// `u` is the first bump, `w` the second with opposite sign.
    TumorPair { u: Bump, w: Bump },
}

impl FieldProvider {
    pub fn validate(&self) -> Result<()> {
        let bumps: Vec<Bump> = match self {
            FieldProvider::Constant { value } => {
                return if value.is_finite() { Ok(()) } else { Err(Error::Config("non-finite field value".into())) }
            }
            FieldProvider::Bump(b) => vec![*b],
            FieldProvider::TumorPair { u, w } => vec![*u, *w],
        };
        for b in &bumps {
            let c = Vec3::from(b.center);
            if !(b.width > 0.0) || !b.amplitude.is_finite() || (c.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("invalid bump {b:?}")));
            }
            if b.decay.is_some_and(|t0| !(t0 > 0.0)) {
                return Err(Error::Config("bump decay must be positive".into()));
            }
        }
        Ok(())
    }
}

/// `(u, w)` at position `x` and time `t`.
pub fn field_value(provider: &FieldProvider, x: &Vec3, t: f64) -> (f64, Option<f64>) {
    match provider {
        FieldProvider::Constant { value } => (*value, None),
        FieldProvider::Bump(b) => (b.value(x, t), None),
        FieldProvider::TumorPair { u, w } => (u.value(x, t), Some(-w.value(x, t))),
    }
}
