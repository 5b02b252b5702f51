//! Local chart construction and control-net solves for one patch.
//!
//! A patch is flattened by PCA, projected onto its tangent plane and
//! min–max scaled into `[0,1]²`. The chart is then rotated by the angle that
//! minimizes the 2-norm condition number of the collocation matrix, and the
//! net is obtained from the square system or, when that is numerically
//! singular, from a least-squares system on a smaller grid.
//!
//! Collocation columns are flattened row-major with `j` fastest, matching
//! [`BSplineSurface::ctrl`].

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splinecore::{BSplineSurface, KnotVector, MAX_ORDER};
use crate::Vec3;

/// Relative singular-value floor that triggers the least-squares fallback.
pub const SIGMA_TOL_REL: f64 = 1e-8;

/// Local PCA frame: `mean` and a proper rotation whose columns are the
/// principal axes by decreasing variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub mean: Vec3,
    pub rotation: Matrix3<f64>,
}

impl Frame {
    /// Third principal axis; approximates the surface normal.
    pub fn normal(&self) -> Vec3 {
        self.rotation.column(2).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    ExactSquare,
    LeastSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    pub omega_star: f64,
    pub kappa: f64,
    /// `κ₂` of the unrotated chart in the same spline space.
    pub kappa_at_zero: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub mode: SolveMode,
}

/// Summary of one patch fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchFit {
    pub report: ConditioningReport,
    pub dims: (usize, usize),
    /// `max_r ‖x_r − S(u_r, v_r)‖`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub degree: usize,
    pub omega_candidates: usize,
    /// Least-squares grids satisfy `m·n ≤ ρ·N`.
    pub ls_ratio: f64,
    pub sigma_tol_rel: f64,
    /// Use the exact square solve when the point count is a perfect square.
    pub allow_square: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { degree: 3, omega_candidates: 16, ls_ratio: 0.5, sigma_tol_rel: SIGMA_TOL_REL, allow_square: false }
    }
}

pub fn pca_frame(points: &[Vec3]) -> Result<Frame> {
    if points.len() < 3 {
        return Err(Error::DegeneratePatch(format!("{} points cannot span a plane", points.len())));
    }
    let mean = crate::centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lam = order.map(|k| eig.eigenvalues[k]);
    if !(lam[1] > 1e-14 * lam[0]) {
        return Err(Error::DegeneratePatch("collinear points".into()));
    }
    let mut rotation = Matrix3::from_columns(&order.map(|k| eig.eigenvectors.column(k).into_owned()));
    if rotation.determinant() < 0.0 {
        rotation.set_column(2, &(-rotation.column(2)));
    }
    Ok(Frame { mean, rotation })
}

fn min_max_scale(raw: &[Vector2<f64>]) -> Result<Vec<(f64, f64)>> {
    let mut lo = Vector2::repeat(f64::INFINITY);
    let mut hi = Vector2::repeat(f64::NEG_INFINITY);
    for p in raw {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let w = hi - lo;
    let scale = w.amax().max(f64::MIN_POSITIVE);
    if !(w.x > 1e-12 * scale && w.y > 1e-12 * scale) {
        return Err(Error::DegenerateChart(format!("zero-width axis ({:.3e}, {:.3e})", w.x, w.y)));
    }
    Ok(raw
        .iter()
        .map(|p| (((p.x - lo.x) / w.x).clamp(0.0, 1.0), ((p.y - lo.y) / w.y).clamp(0.0, 1.0)))
        .collect())
}

/// Tangent-plane coordinates `Rᵀ(x − mean)` scaled axis-wise into `[0,1]`.
pub fn project_and_normalize(points: &[Vec3], frame: &Frame) -> Result<Vec<(f64, f64)>> {
    let rt = frame.rotation.transpose();
    let raw: Vec<Vector2<f64>> = points
        .iter()
        .map(|p| {
            let q = rt * (p - frame.mean);
            Vector2::new(q.x, q.y)
        })
        .collect();
    min_max_scale(&raw)
}

/// Cumulative normalized chord lengths raised to `exponent`
/// (1 for chord length, 0.5 for centripetal).
pub fn chord_length_params(seq: &[Vec3], exponent: f64) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(Error::InvalidDimension("need at least two points".into()));
    }
    let mut acc = Vec::with_capacity(seq.len());
    acc.push(0.0);
    let mut total = 0.0;
    for (k, w) in seq.windows(2).enumerate() {
        let d = (w[1] - w[0]).norm();
        if d == 0.0 {
            return Err(Error::ZeroChord(k, k + 1));
        }
        total += d.powf(exponent);
        acc.push(total);
    }
    for a in &mut acc {
        *a /= total;
    }
    *acc.last_mut().unwrap() = 1.0;
    Ok(acc)
}

/// Collocation matrix `M[r, i·n + j] = φ_i(u_r)·φ_j(v_r)`.
pub fn assemble_matrix(params: &[(f64, f64)], kv_u: &KnotVector, kv_v: &KnotVector) -> Result<DMatrix<f64>> {
    let (m, n) = (kv_u.num_ctrl(), kv_v.num_ctrl());
    let (p, q) = (kv_u.degree(), kv_v.degree());
    let mut mat = DMatrix::zeros(params.len(), m * n);
    let mut bu = [0.0; MAX_ORDER];
    let mut bv = [0.0; MAX_ORDER];
    let (du, dv) = (kv_u.domain(), kv_v.domain());
    for (r, &(u, v)) in params.iter().enumerate() {
        if !(u >= du.0 && u <= du.1 && v >= dv.0 && v <= dv.1) {
            return Err(Error::Domain(format!("parameter ({u}, {v}) outside the spline domain")));
        }
        let su = kv_u.find_span(u);
        let sv = kv_v.find_span(v);
        kv_u.local_basis(su, u, &mut bu);
        kv_v.local_basis(sv, v, &mut bv);
        for (a, &nu) in bu[..=p].iter().enumerate() {
            let i = su - p + a;
            for (b, &nv) in bv[..=q].iter().enumerate() {
                mat[(r, i * n + sv - q + b)] = nu * nv;
            }
        }
    }
    Ok(mat)
}

/// Rotate params about the square center by `omega` and rescale into `[0,1]²`.
pub fn rotate_params(params: &[(f64, f64)], omega: f64) -> Result<Vec<(f64, f64)>> {
    let (s, c) = omega.sin_cos();
    let raw: Vec<Vector2<f64>> = params
        .iter()
        .map(|&(u, v)| {
            let (x, y) = (u - 0.5, v - 0.5);
            Vector2::new(c * x - s * y, s * x + c * y)
        })
        .collect();
    min_max_scale(&raw)
}

fn singular_range(mat: DMatrix<f64>) -> (f64, f64) {
    let sv = mat.singular_values();
    let max = sv.max();
    let min = if sv.is_empty() { 0.0 } else { sv.min() };
    (min, max)
}

fn kappa(min: f64, max: f64) -> f64 {
    if min > 0.0 {
        (max / min).max(1.0)
    } else {
        f64::INFINITY
    }
}

/// Sweep `K_ω` uniformly spaced angles in `[0, π)` and keep the rotation
/// with the smallest `κ₂(M(ω))`; ties keep the smaller angle.
pub fn condition_search(
    params: &[(f64, f64)],
    kv_u: &KnotVector,
    kv_v: &KnotVector,
    num_candidates: usize,
    sigma_tol_rel: f64,
) -> Result<(Vec<(f64, f64)>, ConditioningReport)> {
    let k = num_candidates.max(1);
    let mut best: Option<(f64, Vec<(f64, f64)>, f64, f64, f64)> = None;
    let mut kappa_at_zero = f64::INFINITY;
    let mut last_err = None;
    for c in 0..k {
        let omega = std::f64::consts::PI * c as f64 / k as f64;
        let rotated = match rotate_params(params, omega) {
            Ok(r) => r,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let (smin, smax) = singular_range(assemble_matrix(&rotated, kv_u, kv_v)?);
        let kap = kappa(smin, smax);
        if c == 0 {
            kappa_at_zero = kap;
        }
        if best.as_ref().map_or(true, |b| kap < b.2) {
            best = Some((omega, rotated, kap, smin, smax));
        }
    }
    let Some((omega_star, rotated, kap, smin, smax)) = best else {
        return Err(last_err.unwrap_or_else(|| Error::DegenerateChart("no rotation candidate".into())));
    };
    let square = params.len() == kv_u.num_ctrl() * kv_v.num_ctrl();
    let mode = if square && smin >= sigma_tol_rel * smax {
        SolveMode::ExactSquare
    } else {
        SolveMode::LeastSquares
    };
    let report = ConditioningReport { omega_star, kappa: kap, kappa_at_zero, sigma_min: smin, sigma_max: smax, mode };
    Ok((rotated, report))
}

fn points_matrix(points: &[Vec3]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), 3, |r, c| points[r][c])
}

/// Control net for `points` at `params` in the given spline space; the
/// residual is the maximum pointwise interpolation error.
pub fn fit_patch(
    points: &[Vec3],
    params: &[(f64, f64)],
    kv_u: &KnotVector,
    kv_v: &KnotVector,
    mode: SolveMode,
) -> Result<(BSplineSurface, f64)> {
    if points.len() != params.len() {
        return Err(Error::InvalidDimension(format!("{} points, {} params", points.len(), params.len())));
    }
    let cols = kv_u.num_ctrl() * kv_v.num_ctrl();
    let mat = assemble_matrix(params, kv_u, kv_v)?;
    let rhs = points_matrix(points);
    let sol = match mode {
        SolveMode::ExactSquare => {
            if points.len() != cols {
                return Err(Error::InvalidDimension(format!("square solve needs {cols} points")));
            }
            mat.lu()
                .solve(&rhs)
                .ok_or_else(|| Error::PatchFit { patch: usize::MAX, reason: "singular collocation matrix".into() })?
        }
        SolveMode::LeastSquares => {
            if points.len() < cols {
                return Err(Error::InvalidDimension(format!("least squares needs at least {cols} points")));
            }
            let svd = mat.svd(true, true);
            let tol = SIGMA_TOL_REL * svd.singular_values.max();
            svd.solve(&rhs, tol).map_err(|e| Error::PatchFit { patch: usize::MAX, reason: e.into() })?
        }
    };
    let ctrl: Vec<Vec3> = (0..cols).map(|k| Vec3::new(sol[(k, 0)], sol[(k, 1)], sol[(k, 2)])).collect();
    let surface = BSplineSurface::new(kv_u.clone(), kv_v.clone(), ctrl)?;
    let residual = crate::adapt::interp_error(&surface, points, params)?;
    Ok((surface, residual))
}

/// Control-grid size for `n_points` data points: square when `n_points` is a
/// perfect square of at least `degree + 1`, otherwise a least-squares grid.
pub fn grid_size(n_points: usize, degree: usize, ls_ratio: f64) -> (usize, usize) {
    let r = (n_points as f64).sqrt().round() as usize;
    if r * r == n_points && r > degree {
        (r, r)
    } else {
        let side = ((n_points as f64 * ls_ratio).sqrt().floor() as usize).max(degree + 1);
        (side, side)
    }
}

fn shrink_grid(mut dims: (usize, usize), n_points: usize, degree: usize, ls_ratio: f64) -> Option<(usize, usize)> {
    let cap = n_points as f64 * ls_ratio;
    while (dims.0 * dims.1) as f64 > cap {
        if dims.0 >= dims.1 && dims.0 > degree + 1 {
            dims.0 -= 1;
        } else if dims.1 > degree + 1 {
            dims.1 -= 1;
        } else {
            return None;
        }
    }
    Some(dims)
}

/// Complete chart construction and fit of one patch.
#[derive(Debug, Clone)]
pub struct LocalFit {
    pub frame: Frame,
    pub params: Vec<(f64, f64)>,
    pub surface: BSplineSurface,
    pub fit: PatchFit,
}

pub fn fit_local_patch(points: &[Vec3], cfg: &FitConfig) -> Result<LocalFit> {
    let p = cfg.degree;
    if points.len() < (p + 1) * (p + 1) {
        return Err(Error::TooFewCandidates { requested: (p + 1) * (p + 1), available: points.len() });
    }
    let frame = pca_frame(points)?;
    let base = project_and_normalize(points, &frame)?;
    let mut dims = if cfg.allow_square {
        grid_size(points.len(), p, cfg.ls_ratio)
    } else {
        shrink_grid(grid_size(points.len(), p, cfg.ls_ratio), points.len(), p, cfg.ls_ratio)
            .ok_or(Error::TooFewCandidates { requested: (p + 1) * (p + 1), available: points.len() })?
    };
    loop {
        let ku = KnotVector::open_uniform(dims.0, p)?;
        let kv = KnotVector::open_uniform(dims.1, p)?;
        let (params, report) = condition_search(&base, &ku, &kv, cfg.omega_candidates, cfg.sigma_tol_rel)?;
        let square = points.len() == dims.0 * dims.1;
        if square && report.mode == SolveMode::LeastSquares {
            dims = shrink_grid(dims, points.len(), p, cfg.ls_ratio).ok_or_else(|| Error::PatchFit {
                patch: usize::MAX,
                reason: "no admissible least-squares grid".into(),
            })?;
            continue;
        }
        if !square && !(report.sigma_min >= cfg.sigma_tol_rel * report.sigma_max) {
            // rank-deficient even in least squares: drop one more row of control points
            let cap = ((dims.0 * dims.1 - 1) as f64 / points.len() as f64).min(cfg.ls_ratio);
            dims = shrink_grid(dims, points.len(), p, cap).ok_or_else(|| Error::PatchFit {
                patch: usize::MAX,
                reason: format!("rank-deficient least-squares system (kappa {:.3e})", report.kappa),
            })?;
            continue;
        }
        let (surface, residual) = fit_patch(points, &params, &ku, &kv, report.mode)?;
        return Ok(LocalFit { frame, params, surface, fit: PatchFit { report, dims, residual } });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Eigenvalues of a symmetric 3×3 matrix from the trigonometric solution
    /// of its characteristic cubic, sorted decreasing.
    fn closed_form_eigenvalues(a: &Matrix3<f64>) -> [f64; 3] {
        let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        let q = a.trace() / 3.0;
        let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b = (a - Matrix3::identity() * q) / p;
        let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        [e1, 3.0 * q - e1 - e3, e3]
    }

    #[test]
    fn eigen_matches_closed_form() {
        let mut r = rng(1);
        for _ in 0..100 {
            let pts: Vec<Vec3> =
                (0..20).map(|_| Vec3::new(r.gen::<f64>() * 3.0, r.gen::<f64>(), r.gen::<f64>() * 0.3)).collect();
            let mean = crate::centroid(&pts);
            let mut cov = Matrix3::zeros();
            for p in &pts {
                cov += (p - mean) * (p - mean).transpose();
            }
            cov /= pts.len() as f64;
            let f = pca_frame(&pts).unwrap();
            let oracle = closed_form_eigenvalues(&cov);
            for k in 0..3 {
                let e = f.rotation.column(k).into_owned();
                let lam = e.dot(&(cov * e));
                assert!((lam - oracle[k]).abs() < 1e-9, "{lam} vs {}", oracle[k]);
                assert!((cov * e - e * lam).norm() < 1e-9);
            }
            assert!((f.rotation.transpose() * f.rotation - Matrix3::identity()).norm() < 1e-12);
            assert!((f.rotation.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pca_examples() {
        let mut r = rng(2);
        let plane: Vec<Vec3> = (0..30).map(|_| Vec3::new(r.gen(), r.gen::<f64>() * 0.5, 0.0)).collect();
        let f = pca_frame(&plane).unwrap();
        assert!((f.normal().z.abs() - 1.0).abs() < 1e-12);
        let line: Vec<Vec3> = (0..10).map(|k| Vec3::new(k as f64, 2.0 * k as f64, 0.0)).collect();
        assert!(matches!(pca_frame(&line), Err(Error::DegeneratePatch(_))));
    }

    #[test]
    fn projection_examples() {
        let grid: Vec<Vec3> = (0..25).map(|k| Vec3::new((k / 5) as f64 * 2.0, (k % 5) as f64, 0.0)).collect();
        let f = pca_frame(&grid).unwrap();
        let uv = project_and_normalize(&grid, &f).unwrap();
        for (u, v) in uv {
            for t in [u, v] {
                assert!(((t * 4.0).round() - t * 4.0).abs() < 1e-12);
            }
        }
        // spherical cap
        let mut r = rng(3);
        let cap: Vec<Vec3> = (0..50)
            .map(|_| {
                let (a, b) = (r.gen::<f64>() * 0.5, r.gen::<f64>() * std::f64::consts::TAU);
                Vec3::new(a.sin() * b.cos(), a.sin() * b.sin(), a.cos())
            })
            .collect();
        let uv = project_and_normalize(&cap, &pca_frame(&cap).unwrap()).unwrap();
        assert!(uv.iter().all(|&(u, v)| (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v)));
        for axis in 0..2 {
            let vals: Vec<f64> = uv.iter().map(|&(u, v)| if axis == 0 { u } else { v }).collect();
            assert!(vals.contains(&0.0) && vals.contains(&1.0));
        }
        let frame = Frame { mean: Vec3::zeros(), rotation: Matrix3::identity() };
        let two = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 2.0, 0.0)];
        assert_eq!(project_and_normalize(&two, &frame).unwrap(), vec![(0.0, 0.0), (1.0, 1.0)]);
        let col = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)];
        assert!(matches!(project_and_normalize(&col, &frame), Err(Error::DegenerateChart(_))));
    }

    #[test]
    fn chord_length_examples() {
        let pts: Vec<Vec3> = (0..5).map(|k| Vec3::new(k as f64, 0.0, 0.0)).collect();
        let t = chord_length_params(&pts, 1.0).unwrap();
        for (k, x) in t.iter().enumerate() {
            assert!((x - k as f64 / 4.0).abs() < 1e-15);
        }
        let three = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 3.0, 0.0)];
        assert_eq!(chord_length_params(&three, 1.0).unwrap(), vec![0.0, 0.25, 1.0]);
        let three = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 4.0, 0.0)];
        let t = chord_length_params(&three, 0.5).unwrap();
        assert!((t[1] - 1.0 / 3.0).abs() < 1e-15 && t[2] == 1.0);
        let rep = [Vec3::zeros(), Vec3::zeros()];
        assert!(matches!(chord_length_params(&rep, 1.0), Err(Error::ZeroChord(0, 1))));
    }

    fn collocation_1d(kv: &KnotVector, ts: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(ts.len(), kv.num_ctrl(), |r, i| kv.basis_value(i, ts[r]).unwrap())
    }

    #[test]
    fn matrix_matches_kronecker_product() {
        let kv = KnotVector::open_uniform(6, 3).unwrap();
        let ts: Vec<f64> = (0..6).map(|k| k as f64 / 5.0).collect();
        let params: Vec<(f64, f64)> = (0..36).map(|r| (ts[r / 6], ts[r % 6])).collect();
        let m = assemble_matrix(&params, &kv, &kv).unwrap();
        let c = collocation_1d(&kv, &ts);
        let kron = c.kronecker(&c);
        assert!((m - kron).amax() < 1e-15);
    }

    #[test]
    fn matrix_rows_partition_unity_and_are_local() {
        let mut r = rng(4);
        let ku = KnotVector::open_uniform(7, 3).unwrap();
        let kv = KnotVector::open_uniform(5, 2).unwrap();
        let params: Vec<(f64, f64)> = (0..60).map(|_| (r.gen(), r.gen())).collect();
        let m = assemble_matrix(&params, &ku, &kv).unwrap();
        for row in m.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().filter(|x| **x != 0.0).count() <= 12);
        }
    }

    fn isotropic_grid(k: usize) -> Vec<(f64, f64)> {
        (0..k * k).map(|r| ((r / k) as f64 / (k - 1) as f64, (r % k) as f64 / (k - 1) as f64)).collect()
    }

    #[test]
    fn condition_search_examples() {
        let kv = KnotVector::open_uniform(6, 3).unwrap();
        // jittered isotropic grid: square, nonsingular
        let mut r = rng(5);
        let base: Vec<(f64, f64)> = isotropic_grid(6)
            .into_iter()
            .map(|(u, v)| (u + 0.01 * r.gen::<f64>(), v + 0.01 * r.gen::<f64>()))
            .collect();
        let (rot, rep) = condition_search(&base, &kv, &kv, 16, SIGMA_TOL_REL).unwrap();
        assert!(rep.kappa <= rep.kappa_at_zero);
        assert!(rep.kappa >= 1.0 && rep.sigma_min >= 0.0);
        assert_eq!(rot.len(), 36);
        assert!((0.0..std::f64::consts::PI).contains(&rep.omega_star));

        // anisotropic band along the diagonal
        let band: Vec<(f64, f64)> = (0..36)
            .map(|k| {
                let t = (k / 6) as f64 / 5.0;
                let s = (k % 6) as f64 / 5.0 - 0.5;
                (0.5 + (t - 0.5) + 0.1 * s, 0.5 + (t - 0.5) - 0.1 * s)
            })
            .collect();
        let band = rotate_params(&band, 0.0).unwrap();
        let (_, rep) = condition_search(&band, &kv, &kv, 16, SIGMA_TOL_REL).unwrap();
        assert!(rep.kappa < rep.kappa_at_zero, "{} vs {}", rep.kappa, rep.kappa_at_zero);
    }

    #[test]
    fn rotation_sweep_near_invariant_on_isotropic_grid() {
        // grid on a disc-free square keeps κ within a narrow band for small angles
        let kv = KnotVector::open_uniform(6, 3).unwrap();
        let base = isotropic_grid(6);
        let k0 = {
            let (a, b) = singular_range(assemble_matrix(&base, &kv, &kv).unwrap());
            kappa(a, b)
        };
        for om in [0.0, std::f64::consts::FRAC_PI_2] {
            let rot = rotate_params(&base, om).unwrap();
            let (a, b) = singular_range(assemble_matrix(&rot, &kv, &kv).unwrap());
            assert!((kappa(a, b) / k0 - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn search_keeps_spline_space() {
        let kv = KnotVector::open_uniform(6, 3).unwrap();
        let before = kv.clone();
        let _ = condition_search(&isotropic_grid(6), &kv, &kv, 16, SIGMA_TOL_REL).unwrap();
        assert_eq!(kv, before);
    }

    fn random_surface(r: &mut ChaCha8Rng, m: usize) -> BSplineSurface {
        let kv = KnotVector::open_uniform(m, 3).unwrap();
        let g = kv.greville().unwrap();
        let ctrl = (0..m * m).map(|k| Vec3::new(g[k / m], g[k % m], 0.2 * r.gen::<f64>())).collect();
        BSplineSurface::new(kv.clone(), kv, ctrl).unwrap()
    }

    #[test]
    fn square_fit_reproduces_member_of_space() {
        let mut r = rng(6);
        let s = random_surface(&mut r, 6);
        let g = s.knots_u().greville().unwrap();
        let params: Vec<(f64, f64)> = (0..36).map(|k| (g[k / 6], g[k % 6])).collect();
        let pts: Vec<Vec3> = params.iter().map(|&(u, v)| s.eval(u, v).unwrap()).collect();
        let (fit, res) = fit_patch(&pts, &params, s.knots_u(), s.knots_v(), SolveMode::ExactSquare).unwrap();
        let diam = s.ctrl_diameter();
        assert!(res <= 1e-9 * diam);
        for (a, b) in fit.ctrl().iter().zip(s.ctrl()) {
            assert!((a - b).norm() <= 1e-9 * diam);
        }
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let mut r = rng(7);
        let kv = KnotVector::open_uniform(4, 3).unwrap();
        let params: Vec<(f64, f64)> = (0..40).map(|_| (r.gen(), r.gen())).collect();
        let pts: Vec<Vec3> =
            params.iter().map(|&(u, v)| Vec3::new(u, v, 0.01 * (r.gen::<f64>() - 0.5))).collect();
        let (s, res) = fit_patch(&pts, &params, &kv, &kv, SolveMode::LeastSquares).unwrap();
        let m = assemble_matrix(&params, &kv, &kv).unwrap();
        let x = points_matrix(&pts);
        let oracle = (m.transpose() * &m).cholesky().unwrap().solve(&(m.transpose() * x));
        for (k, c) in s.ctrl().iter().enumerate() {
            for d in 0..3 {
                assert!((c[d] - oracle[(k, d)]).abs() < 1e-8);
            }
        }
        let oracle_res = (0..40)
            .map(|k| {
                let (u, v) = params[k];
                let y: f64 = (0..16).map(|c| m[(k, c)] * oracle[(c, 2)]).sum();
                let sx: f64 = (0..16).map(|c| m[(k, c)] * oracle[(c, 0)]).sum();
                let sy: f64 = (0..16).map(|c| m[(k, c)] * oracle[(c, 1)]).sum();
                let _ = (u, v);
                (Vec3::new(sx, sy, y) - pts[k]).norm()
            })
            .fold(0.0, f64::max);
        assert!((res - oracle_res).abs() < 1e-8);
    }

    #[test]
    fn perturbation_bound() {
        let mut r = rng(8);
        let s = random_surface(&mut r, 6);
        let base: Vec<(f64, f64)> = isotropic_grid(6)
            .into_iter()
            .map(|(u, v)| (u + 0.02 * r.gen::<f64>(), v + 0.02 * r.gen::<f64>()))
            .collect();
        let (params, rep) = condition_search(&base, s.knots_u(), s.knots_v(), 16, SIGMA_TOL_REL).unwrap();
        let pts: Vec<Vec3> = params.iter().map(|&(u, v)| s.eval(u, v).unwrap()).collect();
        let (a, _) = fit_patch(&pts, &params, s.knots_u(), s.knots_v(), SolveMode::ExactSquare).unwrap();
        let mut dx: Vec<Vec3> = (0..36).map(|_| Vec3::new(r.gen(), r.gen(), r.gen()) - Vec3::repeat(0.5)).collect();
        let norm = dx.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
        for d in &mut dx {
            *d *= 1e-6 / norm;
        }
        let moved: Vec<Vec3> = pts.iter().zip(&dx).map(|(p, d)| p + d).collect();
        let (b, _) = fit_patch(&moved, &params, s.knots_u(), s.knots_v(), SolveMode::ExactSquare).unwrap();
        // column-wise bound summed over the three coordinates
        let dp = a.ctrl().iter().zip(b.ctrl()).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt();
        assert!(dp <= 1e-6 / rep.sigma_min * (1.0 + 1e-9));
    }

    #[test]
    fn grid_sizing() {
        assert_eq!(grid_size(36, 3, 0.8), (6, 6));
        assert_eq!(grid_size(40, 3, 0.8), (5, 5));
        assert_eq!(grid_size(9, 3, 0.8), (4, 4));
        assert_eq!(shrink_grid((6, 6), 36, 3, 0.8), Some((5, 5)));
        assert_eq!(shrink_grid((4, 4), 16, 3, 0.8), None);
    }

    #[test]
    fn local_fit_on_sphere_cap() {
        let mut r = rng(9);
        let pts: Vec<Vec3> = (0..36)
            .map(|_| {
                let (a, b) = (r.gen::<f64>().sqrt() * 0.4, r.gen::<f64>() * std::f64::consts::TAU);
                Vec3::new(a.sin() * b.cos(), a.sin() * b.sin(), a.cos())
            })
            .collect();
        let lf = fit_local_patch(&pts, &FitConfig::default()).unwrap();
        assert!(lf.fit.residual < 1e-8 || lf.fit.report.mode == SolveMode::LeastSquares);
        assert!(lf.fit.report.kappa <= lf.fit.report.kappa_at_zero);
    }
}
