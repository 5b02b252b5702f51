//! Velocity laws and the explicit time-stepping loop.
//!
//! With `H` signed against the oriented normal `n` (outward normals give
//! `H < 0` on convex regions), mean-curvature flow moves points with
//! `V = 2H·n`, which is independent of the orientation sign and shrinks a
//! sphere of radius `r` with speed `2/r`. The coupled law adds a prescribed
//! scalar field `u` along the outward normal: `V = (ε·2H + δ·u)·n`.

use std::time::Instant;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapt::{self, DensityPoint, RefineConfig};
use crate::diffgeo::{self, GeometricSample};
use crate::error::{Error, Result};
use crate::paramfit::{self, FitConfig};
use crate::patching::{self, KdTree, Patch, PatchSet, PointCloud};
use crate::record::{PatchDiagnostics, Snapshot};
use crate::scenarios::{field_value, FieldProvider};
use crate::splinecore::{BSplineSurface, KnotVector};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VelocityLaw {
    Mcf,
    Coupled { epsilon: f64, delta: f64 },
}

impl VelocityLaw {
    pub fn needs_field(&self) -> bool {
        matches!(self, VelocityLaw::Coupled { .. })
    }
}

pub fn velocity_at(sample: &GeometricSample, field: Option<f64>, law: VelocityLaw) -> Result<Vec3> {
    let two_h = 2.0 * sample.mean_curvature;
    match law {
        VelocityLaw::Mcf => Ok(sample.normal * two_h),
        VelocityLaw::Coupled { epsilon, delta } => {
            let u = field.ok_or(Error::MissingField)?;
            Ok(sample.normal * (epsilon * two_h + delta * u))
        }
    }
}

/// Forward Euler: `x ← x + dt·V`.
pub fn advance_points(points: &mut [Vec3], velocities: &[Vec3], dt: f64) -> Result<()> {
    if points.len() != velocities.len() {
        return Err(Error::InvalidDimension(format!("{} points, {} velocities", points.len(), velocities.len())));
    }
    for (x, v) in points.iter_mut().zip(velocities) {
        *x += v * dt;
    }
    Ok(())
}

/// Moves every control point with the surface velocity at its Greville pair.
/// Degenerate Greville pairs borrow the velocity of the nearest valid pair;
/// the number of such substitutions is returned.
pub fn advance_control_points(
    s: &BSplineSurface,
    law: VelocityLaw,
    field: Option<&FieldProvider>,
    time: f64,
    dt: f64,
    orientation_sign: f64,
) -> Result<(BSplineSurface, usize)> {
    advance_net(s, dt, orientation_sign, |g| {
        let f = field.map(|p| field_value(p, &g.position, time).0);
        velocity_at(g, f, law)
    })
}

fn advance_net(
    s: &BSplineSurface,
    dt: f64,
    orientation_sign: f64,
    velocity: impl Fn(&GeometricSample) -> Result<Vec3>,
) -> Result<(BSplineSurface, usize)> {
    let (gu, gv) = s.greville()?;
    let (m, n) = s.dims();
    let mut vel: Vec<Option<Vec3>> = Vec::with_capacity(m * n);
    for &u in &gu {
        for &v in &gv {
            let d = s.partials(u, v)?;
            vel.push(match diffgeo::sample_from_partials(&d, (u, v), orientation_sign) {
                Ok(g) => Some(velocity(&g)?),
                Err(_) => None,
            });
        }
    }
    let mut substituted = 0;
    let mut out = s.clone();
    for k in 0..m * n {
        let v = match vel[k] {
            Some(v) => v,
            None => {
                substituted += 1;
                let (i, j) = ((k / n) as i64, (k % n) as i64);
                (0..m * n)
                    .filter_map(|q| vel[q].map(|v| (((q / n) as i64 - i).pow(2) + ((q % n) as i64 - j).pow(2), q, v)))
                    .min_by_key(|x| (x.0, x.1))
                    .map(|x| x.2)
                    .ok_or_else(|| Error::DegeneratePatch("no valid Greville pair".into()))?
            }
        };
        out.ctrl_mut()[k] += v * dt;
    }
    if substituted > 0 {
        warn!("{substituted} degenerate Greville pairs reused neighbouring velocities");
    }
    Ok((out, substituted))
}

/// Gaussian average of the scalar normal speed over the cloud.
///
/// Explicit Euler on patch-wise fits amplifies high-frequency modes near
/// patch edges; averaging the speed over a radius of about one point spacing
/// damps them. The radius does not depend on `dt`, so the spatial error is
/// the same for every step size. Neighbours whose normal faces away (the far
/// side of a thin region) are skipped.
pub struct SpeedSmoother<'a> {
    tree: KdTree<'a>,
    positions: &'a [Vec3],
    normals: Vec<Vec3>,
    speed: Vec<f64>,
    sigma: f64,
}

impl<'a> SpeedSmoother<'a> {
    /// `normals[i]` may be zero for points without valid geometry; those
    /// never contribute.
    pub fn new(positions: &'a [Vec3], normals: Vec<Vec3>, velocities: &[Vec3], sigma: f64) -> Self {
        let speed = velocities.iter().zip(&normals).map(|(v, n)| v.dot(n)).collect();
        Self { tree: KdTree::new(positions), positions, normals, speed, sigma }
    }

    /// Smoothed velocity at `x` with unit normal `n`, or `None` when no
    /// neighbour lies within the cutoff.
    pub fn velocity(&self, x: &Vec3, n: &Vec3) -> Option<Vec3> {
        let (mut num, mut den) = (0.0, 0.0);
        let s2 = 2.0 * self.sigma * self.sigma;
        for j in self.tree.within(x, 3.0 * self.sigma) {
            if self.normals[j].dot(n) <= 0.0 {
                continue;
            }
            let w = (-(self.positions[j] - x).norm_squared() / s2).exp();
            num += w * self.speed[j];
            den += w;
        }
        (den > 0.0).then(|| n * (num / den))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RepatchPolicy {
    OnDensityChange,
    /// Also rebuild every `k` steps.
    EveryKSteps { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_final: f64,
    pub law: VelocityLaw,
    pub refine: RefineConfig,
    pub fit: FitConfig,
    pub m_c: usize,
    pub m_b: usize,
    pub snapshot_every: usize,
    pub repatch: RepatchPolicy,
    /// Stop once the cloud diameter is below this multiple of `d_min`.
    pub extinction_factor: f64,
    /// Multiply every orientation sign by −1.
    pub flip_orientation: bool,
    pub adaptive: bool,
    /// Speed smoothing radius as a multiple of the initial median spacing;
    /// zero disables it.
    pub smoothing: f64,
    /// Refit a patch by least squares at fixed parameters when
    /// Gauss–Seidel misses `τ`.
    pub ls_fallback: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_final: 0.2,
            law: VelocityLaw::Mcf,
            // the moving fit has to track the points far more tightly than a
            // static fit, and 5x5 nets on coarse patches sit near 5% deviation
            refine: RefineConfig {
                tau: adapt::Tolerance::Relative(2.5e-4),
                eps_tol: adapt::Tolerance::Relative(0.1),
                ..RefineConfig::default()
            },
            fit: FitConfig::default(),
            m_c: 25,
            m_b: 30,
            snapshot_every: 10,
            repatch: RepatchPolicy::OnDensityChange,
            extinction_factor: 10.0,
            flip_orientation: false,
            adaptive: true,
            smoothing: 1.3,
            ls_fallback: true,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_final >= 0.0) {
            return Err(Error::Config("dt must be positive and t_final nonnegative".into()));
        }
        if self.snapshot_every == 0 {
            return Err(Error::Config("snapshot_every must be positive".into()));
        }
        let p = self.fit.degree;
        if p < 2 || p + 1 > crate::splinecore::MAX_ORDER {
            return Err(Error::Config(format!("degree {p} unsupported")));
        }
        if self.m_c == 0 || self.m_c + self.m_b < (p + 1) * (p + 1) {
            return Err(Error::Config("patches too small for the spline degree".into()));
        }
        if !(self.smoothing >= 0.0) || !self.smoothing.is_finite() {
            return Err(Error::Config("smoothing must be finite and nonnegative".into()));
        }
        if let RepatchPolicy::EveryKSteps { k: 0 } = self.repatch {
            return Err(Error::Config("repatch interval must be positive".into()));
        }
        self.refine.validate()
    }

    /// Number of steps needed to reach `t_final`.
    pub fn num_steps(&self) -> usize {
        (self.t_final / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    Extinction { time: f64, diameter: f64 },
    NumericFailure { time: f64, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub num_points: usize,
    pub num_patches: usize,
    pub gs_runs: usize,
    pub gs_failures: usize,
    pub refinements: usize,
    pub removed: usize,
    pub inserted: usize,
    pub repatched: bool,
    pub degenerate_samples: usize,
    pub max_interp_error: f64,
    pub seconds: f64,
}

/// Fit one patch layout from current positions.
fn fit_layout(layout: patching::PatchLayout, positions: &[Vec3], fit: &FitConfig) -> Result<Patch> {
    let pts: Vec<Vec3> = layout.indices().map(|i| positions[i]).collect();
    let lf = paramfit::fit_local_patch(&pts, fit)?;
    Ok(Patch {
        layout,
        frame: lf.frame,
        params: lf.params,
        surface: lf.surface,
        orientation_sign: 1.0,
        fit: lf.fit,
    })
}

/// Decompose, fit and orient a cloud.
pub fn build_patches(positions: &[Vec3], m_c: usize, m_b: usize, fit: &FitConfig, flip: bool) -> Result<PatchSet> {
    let floor = (fit.degree + 1) * (fit.degree + 1);
    let layouts = patching::decompose(positions, m_c, m_b, floor.min(m_c))?;
    let mut patches: Vec<Patch> = layouts
        .into_par_iter()
        .enumerate()
        .map(|(k, l)| {
            fit_layout(l, positions, fit).map_err(|e| match e {
                Error::PatchFit { reason, .. } => Error::PatchFit { patch: k, reason },
                other => Error::PatchFit { patch: k, reason: other.to_string() },
            })
        })
        .collect::<Result<_>>()?;
    let signs = patching::orient_patches_with_seed(&patches, positions, if flip { -1.0 } else { 1.0 });
    for (p, s) in patches.iter_mut().zip(signs) {
        p.orientation_sign = s;
    }
    PatchSet::new(patches, positions.len())
}

/// Geometry of every point, sampled on its core patch.
pub fn sample_cloud(patches: &PatchSet, num_points: usize) -> Vec<Result<GeometricSample>> {
    let per_patch: Vec<Vec<(usize, Result<GeometricSample>)>> = patches
        .patches
        .par_iter()
        .map(|p| {
            p.layout
                .core
                .iter()
                .zip(p.core_params())
                .map(|(&i, &(u, v))| (i, diffgeo::sample_geometry(&p.surface, u, v, p.orientation_sign)))
                .collect()
        })
        .collect();
    let mut out: Vec<Option<Result<GeometricSample>>> = (0..num_points).map(|_| None).collect();
    for list in per_patch {
        for (i, s) in list {
            out[i] = Some(s);
        }
    }
    out.into_iter().map(|s| s.expect("every point has a core patch")).collect()
}

/// Result of the per-patch repair stage.
struct PatchUpdate {
    surface: BSplineSurface,
    gs_ran: bool,
    gs_failed: bool,
    refined: usize,
    interp_error: f64,
    removed: Vec<usize>,
    inserted: Vec<Vec3>,
}

/// State of a running evolution.
#[derive(Clone)]
pub struct Evolution {
    cfg: EvolutionConfig,
    field: Option<FieldProvider>,
    cloud: PointCloud,
    patches: PatchSet,
    step: usize,
    d_min: f64,
    d_max: f64,
    spacing: f64,
    last_errors: Vec<f64>,
}

/// Snapshots and termination reason of a completed run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub termination: Termination,
}

impl Evolution {
    pub fn new(cloud: PointCloud, cfg: EvolutionConfig, field: Option<FieldProvider>) -> Result<Self> {
        cfg.validate()?;
        if cfg.law.needs_field() && field.is_none() {
            return Err(Error::MissingField);
        }
        if let Some(f) = &field {
            f.validate()?;
        }
        let spacing = cloud.median_spacing();
        let d_min = cfg.refine.d_min.resolve(spacing);
        let d_max = cfg.refine.d_max.resolve(spacing);
        if !(d_min < d_max) {
            return Err(Error::Config(format!("d_min {d_min} must be smaller than d_max {d_max}")));
        }
        let patches = build_patches(&cloud.positions, cfg.m_c, cfg.m_b, &cfg.fit, cfg.flip_orientation)?;
        let last_errors = patches.patches.iter().map(|p| p.fit.residual).collect();
        let mut ev = Self { cfg, field, cloud, patches, step: 0, d_min, d_max, spacing, last_errors };
        ev.refresh_fields();
        Ok(ev)
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.cfg
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn patches(&self) -> &PatchSet {
        &self.patches
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.dt
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// `(d_min, d_max)` in absolute units.
    pub fn spacing_bounds(&self) -> (f64, f64) {
        (self.d_min, self.d_max)
    }

    /// Initial median nearest-neighbour spacing.
    pub fn initial_spacing(&self) -> f64 {
        self.spacing
    }

    fn refresh_fields(&mut self) {
        let t = self.time();
        self.cloud.time = t;
        match &self.field {
            Some(f) => {
                let vals: Vec<(f64, Option<f64>)> = self.cloud.positions.iter().map(|x| field_value(f, x, t)).collect();
                self.cloud.field_u = Some(vals.iter().map(|v| v.0).collect());
                self.cloud.field_w = vals.iter().map(|v| v.1).collect();
            }
            None => {
                self.cloud.field_u = None;
                self.cloud.field_w = None;
            }
        }
    }

    pub fn is_extinct(&self) -> bool {
        self.diameter() < self.cfg.extinction_factor * self.d_min
    }

    pub fn diameter(&self) -> f64 {
        self.cloud.diameter()
    }

    /// Per-patch diagnostics of the current state.
    pub fn patch_diagnostics(&self) -> Vec<PatchDiagnostics> {
        self.patches
            .patches
            .iter()
            .zip(&self.last_errors)
            .map(|(p, &e)| PatchDiagnostics {
                kappa: p.fit.report.kappa,
                interp_error: e,
                greville_deviation: adapt::greville_deviation(&p.surface).0,
                points: p.layout.len(),
            })
            .collect()
    }

    pub fn snapshot(&self) -> Snapshot {
        let samples = sample_cloud(&self.patches, self.cloud.len());
        let normals = samples.iter().map(|s| s.as_ref().map(|g| g.normal).unwrap_or_else(|_| Vec3::zeros())).collect();
        Snapshot {
            step: self.step,
            time: self.time(),
            positions: self.cloud.positions.clone(),
            normals: Some(normals),
            field_u: self.cloud.field_u.clone(),
            field_w: self.cloud.field_w.clone(),
            patches: self.patch_diagnostics(),
        }
    }

    /// Advance one time step.
    pub fn step(&mut self) -> Result<StepDiagnostics> {
        let started = Instant::now();
        let t = self.time();
        let dt = self.cfg.dt;
        let law = self.cfg.law;
        let n = self.cloud.len();
        let mut diag = StepDiagnostics::default();

        // (1)-(2) geometry and velocities at the start of the step
        let samples = sample_cloud(&self.patches, n);
        let field = self.field;
        let mut velocities = vec![Vec3::zeros(); n];
        for (i, s) in samples.iter().enumerate() {
            match s {
                Ok(g) => {
                    let f = field.as_ref().map(|p| field_value(p, &self.cloud.positions[i], t).0);
                    velocities[i] = velocity_at(g, f, law)?;
                }
                Err(e) => {
                    debug!("point {i}: {e}");
                    diag.degenerate_samples += 1;
                }
            }
        }
        let nets: Vec<BSplineSurface> = if self.cfg.smoothing > 0.0 {
            let normals = samples.iter().map(|s| s.as_ref().map_or(Vec3::zeros(), |g| g.normal)).collect();
            let smoother = SpeedSmoother::new(&self.cloud.positions, normals, &velocities, self.cfg.smoothing * self.spacing);
            let nets = self
                .patches
                .patches
                .par_iter()
                .map(|p| {
                    advance_net(&p.surface, dt, p.orientation_sign, |g| {
                        Ok(smoother.velocity(&g.position, &g.normal).unwrap_or_else(Vec3::zeros))
                    })
                    .map(|x| x.0)
                })
                .collect::<Result<_>>()?;
            let smoothed: Vec<Option<Vec3>> = self
                .cloud
                .positions
                .par_iter()
                .zip(&samples)
                .map(|(x, s)| s.as_ref().ok().and_then(|g| smoother.velocity(x, &g.normal)))
                .collect();
            for (v, s) in velocities.iter_mut().zip(smoothed) {
                if let Some(s) = s {
                    *v = s;
                }
            }
            nets
        } else {
            self.patches
                .patches
                .par_iter()
                .map(|p| advance_control_points(&p.surface, law, field.as_ref(), t, dt, p.orientation_sign).map(|x| x.0))
                .collect::<Result<_>>()?
        };

        // (3) move the data points
        advance_points(&mut self.cloud.positions, &velocities, dt)?;

        // (4)-(6) per-patch repair, refinement and density control
        let positions = &self.cloud.positions;
        let refine = self.cfg.refine;
        let adaptive = self.cfg.adaptive;
        let ls_fallback = self.cfg.ls_fallback;
        let (d_min, d_max) = (self.d_min, self.d_max);
        let updates: Vec<PatchUpdate> = self
            .patches
            .patches
            .par_iter()
            .zip(nets)
            .map(|(p, net)| repair_patch(p, net, positions, &refine, adaptive, ls_fallback, d_min, d_max))
            .collect::<Result<_>>()?;

        self.step += 1;
        let mut removed = vec![false; n];
        let mut inserted: Vec<Vec3> = Vec::new();
        self.last_errors = updates.iter().map(|u| u.interp_error).collect();
        for (p, u) in self.patches.patches.iter_mut().zip(updates) {
            p.surface = u.surface;
            diag.gs_runs += usize::from(u.gs_ran);
            diag.gs_failures += usize::from(u.gs_failed);
            diag.refinements += u.refined;
            diag.max_interp_error = diag.max_interp_error.max(u.interp_error);
            for slot in u.removed {
                removed[p.layout.core[slot]] = true;
            }
            inserted.extend(u.inserted);
        }

        let inserted = self.dedupe_insertions(&removed, inserted);
        diag.removed = removed.iter().filter(|&&r| r).count();
        diag.inserted = inserted.len();
        let periodic = matches!(self.cfg.repatch, RepatchPolicy::EveryKSteps { k } if self.step % k == 0);
        if diag.removed > 0 || diag.inserted > 0 || periodic {
            let mut pts: Vec<Vec3> =
                self.cloud.positions.iter().zip(&removed).filter(|(_, &r)| !r).map(|(p, _)| *p).collect();
            pts.extend(inserted);
            self.cloud.positions = pts;
            self.patches = build_patches(&self.cloud.positions, self.cfg.m_c, self.cfg.m_b, &self.cfg.fit, self.cfg.flip_orientation)?;
            self.last_errors = self.patches.patches.iter().map(|p| p.fit.residual).collect();
            diag.repatched = true;
        }
        self.refresh_fields();

        diag.step = self.step;
        diag.time = self.time();
        diag.num_points = self.cloud.len();
        diag.num_patches = self.patches.len();
        diag.seconds = started.elapsed().as_secs_f64();
        Ok(diag)
    }

    /// Keep inserted points that are at least `d_min` away from every
    /// surviving point and from each other.
    fn dedupe_insertions(&self, removed: &[bool], inserted: Vec<Vec3>) -> Vec<Vec3> {
        if inserted.is_empty() {
            return inserted;
        }
        let tree = KdTree::new(&self.cloud.positions);
        let mut kept: Vec<Vec3> = Vec::new();
        for x in inserted {
            let near_existing = tree
                .knn_filtered(&x, 1, |j| !removed[j])
                .first()
                .is_some_and(|&j| (self.cloud.positions[j] - x).norm() < self.d_min);
            let near_new = kept.iter().any(|k| (k - x).norm() < self.d_min);
            if !near_existing && !near_new {
                kept.push(x);
            }
        }
        kept
    }

    /// Run until `t_final` or extinction, recording snapshots every
    /// `snapshot_every` steps and at the end.
    pub fn run(&mut self) -> RunOutcome {
        self.run_with(|_, _| {})
    }

    /// Like [`Evolution::run`], calling `on_step` after every successful step.
    pub fn run_with(&mut self, mut on_step: impl FnMut(&Evolution, &StepDiagnostics)) -> RunOutcome {
        let total = self.cfg.num_steps();
        let mut snapshots = vec![self.snapshot()];
        let mut diagnostics = Vec::new();
        let termination = loop {
            if self.step >= total {
                break Termination::Completed;
            }
            if self.is_extinct() {
                break Termination::Extinction { time: self.time(), diameter: self.diameter() };
            }
            match self.step() {
                Ok(d) => {
                    on_step(self, &d);
                    diagnostics.push(d);
                }
                Err(e) => break Termination::NumericFailure { time: self.time(), message: e.to_string() },
            }
            if self.step % self.cfg.snapshot_every == 0 {
                snapshots.push(self.snapshot());
            }
        };
        if snapshots.last().map(|s| s.step) != Some(self.step) {
            snapshots.push(self.snapshot());
        }
        RunOutcome { snapshots, diagnostics, termination }
    }
}

fn repair_patch(
    p: &Patch,
    net: BSplineSurface,
    positions: &[Vec3],
    refine: &RefineConfig,
    adaptive: bool,
    ls_fallback: bool,
    d_min: f64,
    d_max: f64,
) -> Result<PatchUpdate> {
    let pts = p.gather(positions);
    let diag = crate::bbox_diagonal(&pts);
    let tau = refine.tau.resolve(diag);
    let mut surface = net;
    let mut err = adapt::interp_error(&surface, &pts, &p.params)?;
    let (mut gs_ran, mut gs_failed) = (false, false);
    if err > tau {
        let out = adapt::gauss_seidel_optimize(&surface, &pts, &p.params, tau, refine.alpha, refine.max_gs_sweeps)?;
        gs_ran = true;
        gs_failed = !out.converged;
        surface = out.surface;
        err = out.error;
        if gs_failed && ls_fallback {
            // a refined net can have more unknowns than the patch has
            // points; it is then refit on the knots of the original fit
            let (ku, kv) = if surface.ctrl().len() <= pts.len() {
                (surface.knots_u().clone(), surface.knots_v().clone())
            } else {
                let (pu, pv) = surface.degrees();
                (KnotVector::open_uniform(p.fit.dims.0, pu)?, KnotVector::open_uniform(p.fit.dims.1, pv)?)
            };
            let (s, _) = paramfit::fit_patch(&pts, &p.params, &ku, &kv, p.fit.report.mode)?;
            let e = adapt::interp_error(&s, &pts, &p.params)?;
            if e < err {
                surface = s;
                err = e;
            }
        }
    }
    let mut update = PatchUpdate {
        surface,
        gs_ran,
        gs_failed,
        refined: 0,
        interp_error: err,
        removed: Vec::new(),
        inserted: Vec::new(),
    };
    if !adaptive {
        return Ok(update);
    }
    let eps_tol = refine.eps_tol.resolve(diag);
    let mut new_core: Vec<DensityPoint> = Vec::new();
    if adapt::greville_deviation(&update.surface).0 > eps_tol {
        let out = adapt::refine_until_tolerance(&update.surface, eps_tol, refine.max_refine_iters)?;
        update.refined = out.insertions;
        update.surface = out.surface;
        new_core.extend(out.new_points.into_iter().map(|(x, param)| DensityPoint { position: x, param, id: None }));
    }
    let core = p.layout.core.len();
    let mut entries: Vec<DensityPoint> = p
        .layout
        .core
        .iter()
        .zip(&p.params[..core])
        .map(|(&i, &param)| DensityPoint { position: positions[i], param, id: Some(i) })
        .collect();
    entries.extend(new_core.iter().copied());
    let managed = entries.len();
    entries.extend(
        p.layout
            .boundary
            .iter()
            .zip(&p.params[core..])
            .map(|(&i, &param)| DensityPoint { position: positions[i], param, id: Some(i) }),
    );
    let out = adapt::manage_density(&update.surface, &entries, managed, d_min, d_max, refine.density_cap)?;
    let removed_new: Vec<usize> = out.removed.iter().copied().filter(|&s| s >= core).collect();
    update.removed = out.removed.into_iter().filter(|&s| s < core).collect();
    // points synthesized outside the parameter box of the core points, or far
    // from the patch data, come from extrapolated parts of the surface
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for &(u, v) in &p.params[..core] {
        lo = (lo.0.min(u), lo.1.min(v));
        hi = (hi.0.max(u), hi.1.max(v));
    }
    update.inserted = new_core
        .iter()
        .enumerate()
        .filter(|(k, _)| !removed_new.contains(&(core + k)))
        .map(|(_, d)| (d.position, d.param))
        .chain(out.inserted)
        .filter(|(x, (u, v))| {
            (lo.0..=hi.0).contains(u) && (lo.1..=hi.1).contains(v) && pts.iter().any(|q| (q - x).norm() <= d_max)
        })
        .map(|(x, _)| x)
        .collect();
    Ok(update)
}
