//! Control-net adaptivity: Greville deviation, knot-insertion refinement,
//! Gauss–Seidel re-fitting against moved data, and point-density control.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splinecore::{BSplineSurface, Direction, KnotVector, MAX_ORDER};
use crate::Vec3;

/// A length given directly or as a fraction of a reference scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tolerance {
    Absolute(f64),
    /// Fraction of the patch bounding-box diagonal (for `ε_tol`, `τ`) or of
    /// the initial median nearest-neighbour spacing (for `d_min`, `d_max`).
    Relative(f64),
}

impl Tolerance {
    pub fn resolve(self, scale: f64) -> f64 {
        match self {
            Tolerance::Absolute(x) => x,
            Tolerance::Relative(f) => f * scale,
        }
    }

    fn value(self) -> f64 {
        match self {
            Tolerance::Absolute(x) | Tolerance::Relative(x) => x,
        }
    }
}

/// Gauss–Seidel step rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// `α_ij = 1 / (2 Σ_ℓ B_ij(u_ℓ, v_ℓ)²)`: exact minimization along each
    /// control point.
    Exact,
    /// One step size for every control point.
    Global(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub eps_tol: Tolerance,
    pub tau: Tolerance,
    pub alpha: StepRule,
    pub max_refine_iters: usize,
    pub max_gs_sweeps: usize,
    pub d_min: Tolerance,
    pub d_max: Tolerance,
    pub density_cap: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            eps_tol: Tolerance::Relative(0.02),
            tau: Tolerance::Relative(0.005),
            alpha: StepRule::Exact,
            max_refine_iters: 10,
            max_gs_sweeps: 50,
            d_min: Tolerance::Relative(0.5),
            d_max: Tolerance::Relative(2.0),
            density_cap: 10,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("eps_tol", self.eps_tol), ("tau", self.tau), ("d_min", self.d_min), ("d_max", self.d_max)] {
            if !(t.value() > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let StepRule::Global(a) = self.alpha {
            if !(a > 0.0) {
                return Err(Error::Config("alpha must be positive".into()));
            }
        }
        if std::mem::discriminant(&self.d_min) == std::mem::discriminant(&self.d_max)
            && self.d_min.value() >= self.d_max.value()
        {
            return Err(Error::Config("d_min must be smaller than d_max".into()));
        }
        Ok(())
    }
}

/// `max_ij ‖S(u_i^G, v_j^G) − P_ij‖` with the Greville pair and index of the
/// maximizer; ties keep the lexicographically smallest `(i, j)`.
pub fn greville_deviation(s: &BSplineSurface) -> (f64, (f64, f64), (usize, usize)) {
    let (gu, gv) = s.greville().expect("surface degrees are at least 1");
    let (m, n) = s.dims();
    let mut best = (-1.0, (0.0, 0.0), (0, 0));
    for i in 0..m {
        for j in 0..n {
            let d = (s.eval_unchecked(gu[i], gv[j]) - s.ctrl()[i * n + j]).norm();
            if d > best.0 {
                best = (d, (gu[i], gv[j]), (i, j));
            }
        }
    }
    best
}

/// Knot to insert near `target`: the target itself when admissible, else the
/// midpoint of its containing span.
fn insertion_value(kv: &KnotVector, target: f64) -> Option<f64> {
    let (lo, hi) = kv.domain();
    let ok = |u: f64| u > lo && u < hi && kv.multiplicity(u) < kv.degree();
    if ok(target) {
        return Some(target);
    }
    let span = kv.find_span(target);
    let k = kv.knots();
    let mid = 0.5 * (k[span] + k[span + 1]);
    (k[span] < k[span + 1] && ok(mid)).then_some(mid)
}

fn nearest(values: &[f64], target: f64) -> f64 {
    *values.iter().min_by(|a, b| (*a - target).abs().total_cmp(&(*b - target).abs())).unwrap()
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub surface: BSplineSurface,
    /// Points on the surface at newly created Greville pairs, with params.
    pub new_points: Vec<(Vec3, (f64, f64))>,
    pub insertions: usize,
    pub deviation: f64,
}

/// Insert knots at the maximizing Greville pair until `ε̃ ≤ eps_tol` or
/// `max_iters` iterations have run. Each iteration emits one new data point
/// at the refined Greville pair closest to the inserted knots.
pub fn refine_until_tolerance(s: &BSplineSurface, eps_tol: f64, max_iters: usize) -> Result<RefineOutcome> {
    if !(eps_tol > 0.0) {
        return Err(Error::Config("eps_tol must be positive".into()));
    }
    let mut surface = s.clone();
    let mut new_points = Vec::new();
    let mut insertions = 0;
    let (mut dev, mut at, _) = greville_deviation(&surface);
    for _ in 0..max_iters {
        if dev <= eps_tol {
            break;
        }
        let iu = insertion_value(surface.knots_u(), at.0);
        let iv = insertion_value(surface.knots_v(), at.1);
        if iu.is_none() && iv.is_none() {
            break;
        }
        if let Some(u) = iu {
            surface = surface.insert_knot(Direction::U, u)?;
            insertions += 1;
        }
        if let Some(v) = iv {
            surface = surface.insert_knot(Direction::V, v)?;
            insertions += 1;
        }
        let (gu, gv) = surface.greville()?;
        let param = (nearest(&gu, iu.unwrap_or(at.0)), nearest(&gv, iv.unwrap_or(at.1)));
        new_points.push((surface.eval_unchecked(param.0, param.1), param));
        (dev, at, _) = greville_deviation(&surface);
    }
    Ok(RefineOutcome { surface, new_points, insertions, deviation: dev })
}

/// `max_i ‖x_i − S(u_i, v_i)‖`.
pub fn interp_error(s: &BSplineSurface, points: &[Vec3], params: &[(f64, f64)]) -> Result<f64> {
    if points.len() != params.len() {
        return Err(Error::InvalidDimension(format!("{} points, {} params", points.len(), params.len())));
    }
    let mut err: f64 = 0.0;
    for (x, &(u, v)) in points.iter().zip(params) {
        err = err.max((x - s.eval(u, v)?).norm());
    }
    Ok(err)
}

/// Sparse collocation data: for each sample, the flattened control index of
/// its first active basis product and the `(p+1)(q+1)` weights.
struct Collocation {
    first: Vec<(usize, usize)>,
    weights: Vec<[[f64; MAX_ORDER]; MAX_ORDER]>,
    /// `(sample, a, b)` entries touching each control point.
    by_ctrl: Vec<Vec<(usize, usize, usize)>>,
}

impl Collocation {
    fn new(s: &BSplineSurface, params: &[(f64, f64)]) -> Result<Self> {
        let (p, q) = s.degrees();
        let (m, n) = s.dims();
        let mut first = Vec::with_capacity(params.len());
        let mut weights = Vec::with_capacity(params.len());
        let mut by_ctrl = vec![Vec::new(); m * n];
        for (l, &(u, v)) in params.iter().enumerate() {
            s.eval(u, v)?;
            let su = s.knots_u().find_span(u);
            let sv = s.knots_v().find_span(v);
            let mut bu = [0.0; MAX_ORDER];
            let mut bv = [0.0; MAX_ORDER];
            s.knots_u().local_basis(su, u, &mut bu);
            s.knots_v().local_basis(sv, v, &mut bv);
            let mut w = [[0.0; MAX_ORDER]; MAX_ORDER];
            for a in 0..=p {
                for b in 0..=q {
                    w[a][b] = bu[a] * bv[b];
                    by_ctrl[(su - p + a) * n + sv - q + b].push((l, a, b));
                }
            }
            first.push((su - p, sv - q));
            weights.push(w);
        }
        Ok(Self { first, weights, by_ctrl })
    }

    fn residuals(&self, s: &BSplineSurface, points: &[Vec3]) -> Vec<Vec3> {
        let (p, q) = s.degrees();
        let n = s.dims().1;
        points
            .iter()
            .enumerate()
            .map(|(l, x)| {
                let (i0, j0) = self.first[l];
                let mut y = Vec3::zeros();
                for a in 0..=p {
                    for b in 0..=q {
                        y += s.ctrl()[(i0 + a) * n + j0 + b] * self.weights[l][a][b];
                    }
                }
                x - y
            })
            .collect()
    }
}

fn objective(res: &[Vec3]) -> f64 {
    res.iter().map(|r| r.norm_squared()).sum()
}

fn max_norm(res: &[Vec3]) -> f64 {
    res.iter().map(|r| r.norm()).fold(0.0, f64::max)
}

/// Conservative global step: `1 / (2 max_r Σ_ij B_ij(u_r, v_r)²)`.
pub fn default_global_alpha(s: &BSplineSurface, params: &[(f64, f64)]) -> Result<f64> {
    let c = Collocation::new(s, params)?;
    let (p, q) = s.degrees();
    let max_row = c
        .weights
        .iter()
        .map(|w| (0..=p).flat_map(|a| (0..=q).map(move |b| w[a][b] * w[a][b])).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(if max_row > 0.0 { 0.5 / max_row } else { 0.5 })
}

#[derive(Debug, Clone)]
pub struct GsOutcome {
    pub surface: BSplineSurface,
    /// Final `interp_error`.
    pub error: f64,
    pub sweeps: usize,
    pub converged: bool,
    /// `Σ_ℓ ‖x_ℓ − S(u_ℓ, v_ℓ)‖²` before the first sweep and after each one.
    pub objective: Vec<f64>,
}

/// Sweeps the control net in lexicographic order, moving each control point
/// against the gradient of the summed squared residuals while keeping the
/// residuals current, until `interp_error ≤ tau` or `max_sweeps` is reached.
pub fn gauss_seidel_optimize(
    s: &BSplineSurface,
    points: &[Vec3],
    params: &[(f64, f64)],
    tau: f64,
    rule: StepRule,
    max_sweeps: usize,
) -> Result<GsOutcome> {
    if points.len() != params.len() {
        return Err(Error::InvalidDimension(format!("{} points, {} params", points.len(), params.len())));
    }
    if let StepRule::Global(a) = rule {
        if !(a > 0.0) {
            return Err(Error::Config("alpha must be positive".into()));
        }
    }
    let col = Collocation::new(s, params)?;
    let mut surface = s.clone();
    let mut res = col.residuals(&surface, points);
    let mut history = vec![objective(&res)];
    let mut alpha = match rule {
        StepRule::Global(a) => Some(a),
        StepRule::Exact => None,
    };
    let mut best = (history[0], surface.clone(), res.clone());
    let mut rises = 0;
    let mut sweeps = 0;
    while max_norm(&res) > tau && sweeps < max_sweeps {
        for (c, touches) in col.by_ctrl.iter().enumerate() {
            if touches.is_empty() {
                continue;
            }
            let mut g = Vec3::zeros();
            let mut w2 = 0.0;
            for &(l, a, b) in touches {
                let w = col.weights[l][a][b];
                g += res[l] * w;
                w2 += w * w;
            }
            let step = match alpha {
                Some(a) => 2.0 * a,
                None if w2 > 0.0 => 1.0 / w2,
                None => continue,
            };
            let delta = g * step;
            surface.ctrl_mut()[c] += delta;
            for &(l, a, b) in touches {
                res[l] -= delta * col.weights[l][a][b];
            }
        }
        sweeps += 1;
        let obj = objective(&res);
        let prev = *history.last().unwrap();
        history.push(obj);
        if obj < best.0 {
            best = (obj, surface.clone(), res.clone());
        }
        rises = if obj > prev { rises + 1 } else { 0 };
        if rises >= 2 {
            let Some(a) = alpha.as_mut() else { break };
            *a *= 0.5;
            rises = 0;
            (surface, res) = (best.1.clone(), best.2.clone());
            if *a < 1e-12 {
                warn!("Gauss-Seidel step underflow after {sweeps} sweeps");
                break;
            }
        }
    }
    if max_norm(&res) > max_norm(&best.2) {
        surface = best.1;
    }
    let error = interp_error(&surface, points, params)?;
    Ok(GsOutcome { converged: error <= tau, surface, error, sweeps, objective: history })
}

/// One entry of a density-managed patch point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityPoint {
    pub position: Vec3,
    pub param: (f64, f64),
    /// Global point index, or `None` for a point created here.
    pub id: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct DensityOutcome {
    /// Slots (into the managed prefix) of removed input points.
    pub removed: Vec<usize>,
    /// Newly synthesized points, on the surface.
    pub inserted: Vec<(Vec3, (f64, f64))>,
    pub iterations: usize,
    pub converged: bool,
}

impl DensityOutcome {
    pub fn changed(&self) -> bool {
        !self.removed.is_empty() || !self.inserted.is_empty()
    }
}

/// Enforce `d_min ≤ d_i ≤ d_max` on the first `managed` entries of `pts`,
/// where `d_i` is the distance between surface images of a point and its
/// nearest neighbour among all entries. Remaining entries are context only:
/// they count as neighbours but are never removed.
///
/// Close pairs are resolved nearest first, removing the member with the
/// larger id (new points rank after existing ones). A point whose nearest
/// neighbour is farther than `d_max` gets a new point at the parameter
/// midpoint of the pair.
pub fn manage_density(
    s: &BSplineSurface,
    pts: &[DensityPoint],
    managed: usize,
    d_min: f64,
    d_max: f64,
    cap: usize,
) -> Result<DensityOutcome> {
    if !(d_min < d_max) {
        return Err(Error::Config("d_min must be smaller than d_max".into()));
    }
    #[derive(Clone, Copy)]
    struct Entry {
        image: Vec3,
        param: (f64, f64),
        rank: (usize, usize),
        slot: Option<usize>,
        managed: bool,
        alive: bool,
    }
    let mut entries: Vec<Entry> = Vec::with_capacity(pts.len());
    for (k, p) in pts.iter().enumerate() {
        entries.push(Entry {
            image: s.eval(p.param.0, p.param.1)?,
            param: p.param,
            rank: (p.id.map_or(1, |_| 0), p.id.unwrap_or(k)),
            slot: Some(k),
            managed: k < managed,
            alive: true,
        });
    }
    let nearest = |entries: &[Entry], k: usize| -> Option<(usize, f64)> {
        entries
            .iter()
            .enumerate()
            .filter(|&(j, e)| j != k && e.alive)
            .map(|(j, e)| (j, (e.image - entries[k].image).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
    };
    let mut out = DensityOutcome::default();
    let mut new_seq = pts.len();
    for it in 0..cap {
        out.iterations = it + 1;
        let live: Vec<usize> = (0..entries.len()).filter(|&k| entries[k].alive).collect();
        let nn: Vec<Option<(usize, f64)>> = (0..entries.len())
            .map(|k| if entries[k].alive { nearest(&entries, k) } else { None })
            .collect();
        // removals
        let mut close: Vec<(f64, usize, usize)> = live
            .iter()
            .filter_map(|&k| nn[k].filter(|&(_, d)| d < d_min).map(|(j, d)| (d, k.min(j), k.max(j))))
            .collect();
        close.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        close.dedup_by(|a, b| a.1 == b.1 && a.2 == b.2);
        let mut changed = false;
        for &(_, a, b) in &close {
            if !entries[a].alive || !entries[b].alive {
                continue;
            }
            let victim = if entries[a].rank > entries[b].rank { a } else { b };
            if entries[victim].managed {
                entries[victim].alive = false;
                changed = true;
            }
        }
        // insertions
        let mut gaps: Vec<(usize, usize)> = Vec::new();
        for &k in &live {
            if !entries[k].alive || !entries[k].managed {
                continue;
            }
            if let Some((j, d)) = nearest(&entries, k) {
                if d > d_max && !gaps.contains(&(j, k)) {
                    gaps.push((k, j));
                }
            }
        }
        for (k, j) in gaps {
            let (a, b) = (entries[k].param, entries[j].param);
            let mid = (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1));
            new_seq += 1;
            entries.push(Entry {
                image: s.eval(mid.0, mid.1)?,
                param: mid,
                rank: (1, new_seq),
                slot: None,
                managed: true,
                alive: true,
            });
            changed = true;
        }
        if !changed {
            out.converged = true;
            break;
        }
    }
    if !out.converged {
        // final check after the last permitted iteration
        out.converged = (0..entries.len()).filter(|&k| entries[k].alive && entries[k].managed).all(|k| {
            nearest(&entries, k).map_or(true, |(_, d)| d >= d_min && d <= d_max)
        });
        if !out.converged {
            warn!("density management stopped at the iteration cap");
        }
    }
    for e in &entries {
        match (e.slot, e.alive) {
            (Some(slot), false) => out.removed.push(slot),
            (None, true) => out.inserted.push((e.image, e.param)),
            _ => {}
        }
    }
    Ok(out)
}
