//! Acceptance criteria 1 to 10, each at its pinned tolerance.
//!
//! Runs as a plain binary (`harness = false`) so that every criterion prints
//! exactly one `PASS`/`FAIL` line. Criterion 10 is recorded but does not
//! gate the exit status.

mod common;

use std::time::Instant;

use manifold_flow::adapt::{self, greville_deviation, refine_until_tolerance, DensityPoint, StepRule};
use manifold_flow::flows::{build_patches, Evolution, EvolutionConfig};
use manifold_flow::paramfit::{self, condition_search, rotate_params, FitConfig};
use manifold_flow::scenarios::{
    anisotropy_ratio, estimate_radius, geometry_errors, sample_ellipsoid, sample_sphere, sample_torus, Shape,
};
use manifold_flow::splinecore::Direction;
use manifold_flow::{BSplineSurface, KnotVector, PatchSet, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Radius trace of the sphere benchmark at one step size.
struct SphereRun {
    max_rel_to_02: f64,
    err_at_01: f64,
    extinction: Option<f64>,
    seconds: f64,
}

fn sphere_run(dt: f64, t_final: f64) -> SphereRun {
    let started = Instant::now();
    let cfg = EvolutionConfig { dt, t_final, snapshot_every: usize::MAX, ..EvolutionConfig::default() };
    let mut ev = Evolution::new(sample_sphere(4890, 1.0).unwrap(), cfg, None).unwrap();
    let mut run = SphereRun { max_rel_to_02: 0.0, err_at_01: f64::NAN, extinction: None, seconds: 0.0 };
    for _ in 0..cfg.num_steps() {
        if ev.is_extinct() {
            run.extinction = Some(ev.time());
            break;
        }
        if let Err(e) = ev.step() {
            eprintln!("sphere run dt={dt} stopped at t={}: {e}", ev.time());
            run.max_rel_to_02 = f64::INFINITY;
            break;
        }
        let t = ev.time();
        let exact = (1.0 - 4.0 * t).max(0.0).sqrt();
        let r = estimate_radius(ev.cloud());
        if t <= 0.2 + 1e-9 {
            run.max_rel_to_02 = run.max_rel_to_02.max((r - exact).abs() / exact);
        }
        if (t - 0.1).abs() < 1e-9 {
            run.err_at_01 = r - exact;
        }
    }
    if run.extinction.is_none() && ev.is_extinct() {
        run.extinction = Some(ev.time());
    }
    run.seconds = started.elapsed().as_secs_f64();
    run
}

fn criterion_1(run: &SphereRun) -> Outcome {
    outcome(
        run.max_rel_to_02 <= 1e-2,
        format!("max relative radius error on [0, 0.2] = {:.3e} (tol 1e-2), {:.0} s", run.max_rel_to_02, run.seconds),
    )
}

fn criterion_2(run: &SphereRun) -> Outcome {
    match run.extinction {
        Some(t) => outcome((0.22 - 1e-9..=0.25 + 1e-9).contains(&t), format!("extinction guard fired at t = {t:.3}")),
        None => outcome(false, "extinction guard never fired".into()),
    }
}

fn criterion_3() -> Outcome {
    let started = Instant::now();
    let shape = Shape::Sphere { radius: 1.0 };
    let fit = FitConfig::default();
    let m_b = EvolutionConfig::default().m_b;
    let errors = |n: usize, m_c: usize| {
        let cloud = sample_sphere(n, 1.0).unwrap();
        let ps = build_patches(&cloud.positions, m_c, m_b, &fit, false).unwrap();
        geometry_errors(&shape, &cloud.positions, &ps).unwrap()
    };
    let series: Vec<_> = [948, 1806, 2964, 3816, 4890].iter().map(|&n| errors(n, 25)).collect();
    let decreasing = series.windows(2).all(|w| w[1].err_normal < w[0].err_normal && w[1].err_h < w[0].err_h);
    let coarse = errors(4890, 49);
    let fine = &series[4];
    let degrade = coarse.err_normal >= fine.err_normal && coarse.err_h >= fine.err_h;
    let normals: Vec<String> = series.iter().map(|e| format!("{:.2e}", e.err_normal)).collect();
    let curv: Vec<String> = series.iter().map(|e| format!("{:.2e}", e.err_h)).collect();
    outcome(
        decreasing && degrade && started.elapsed().as_secs_f64() <= 180.0,
        format!(
            "err_normal [{}], err_H [{}]; m_c=49: {:.2e} / {:.2e}",
            normals.join(", "),
            curv.join(", "),
            coarse.err_normal,
            coarse.err_h
        ),
    )
}

fn criterion_4() -> (Outcome, Vec<PatchSet>) {
    let started = Instant::now();
    let cfg = EvolutionConfig { t_final: 0.4, snapshot_every: 200, ..EvolutionConfig::default() };
    let cloud = sample_ellipsoid(2964, 2.0, 1.0, 1.5, 7).unwrap();
    let mut ev = Evolution::new(cloud, cfg, None).unwrap();
    let initial = ev.patches().clone();
    let out = ev.run();
    let ratios: Vec<(f64, f64)> = out
        .snapshots
        .iter()
        .filter(|s| [0.0, 0.2, 0.4].iter().any(|t| (s.time - t).abs() < 1e-9))
        .map(|s| (s.time, anisotropy_ratio(&manifold_flow::PointCloud::new(s.positions.clone()))))
        .collect();
    let pass = ratios.len() == 3 && ratios.windows(2).all(|w| w[1].1 < w[0].1) && started.elapsed().as_secs_f64() <= 600.0;
    let text: Vec<String> = ratios.iter().map(|(t, r)| format!("t={t:.1}: {r:.4}")).collect();
    (
        outcome(pass, format!("anisotropy {} ({:?}), {:.0} s", text.join(", "), out.termination, started.elapsed().as_secs_f64())),
        vec![initial, ev.patches().clone()],
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // partition of unity
    let mut pou: f64 = 0.0;
    for _ in 0..50 {
        let p = rng.gen_range(1..=5);
        let n = p + 1 + rng.gen_range(0..8);
        let kv = common::random_knots(&mut rng, n, p);
        for _ in 0..50 {
            let u: f64 = rng.gen();
            pou = pou.max((kv.basis_row(u).unwrap().iter().sum::<f64>() - 1.0).abs());
        }
    }
    // knot insertion keeps the image
    let mut ins: f64 = 0.0;
    for _ in 0..20 {
        let (m, n) = (rng.gen_range(4..9), rng.gen_range(4..9));
        let s = common::random_surface(&mut rng, m, n, 3, 2);
        let dir = if rng.gen() { Direction::U } else { Direction::V };
        let r = s.insert_knot(dir, rng.gen_range(0.01..0.99)).unwrap();
        for _ in 0..50 {
            let (u, v) = (rng.gen(), rng.gen());
            ins = ins.max((s.eval(u, v).unwrap() - r.eval(u, v).unwrap()).norm() / s.ctrl_diameter());
        }
    }
    // analytic partials against central differences
    let s = common::random_surface(&mut rng, 7, 6, 3, 3);
    let h = 1e-5;
    let mut fd: f64 = 0.0;
    for _ in 0..100 {
        let (u, v) = (rng.gen_range(0.02..0.98), rng.gen_range(0.02..0.98));
        let d = s.partials(u, v).unwrap();
        let e = |a, b| s.eval(a, b).unwrap();
        let pu = |a, b| s.partials(a, b).unwrap().su;
        let pv = |a, b| s.partials(a, b).unwrap().sv;
        let pairs = [
            (d.su, (e(u + h, v) - e(u - h, v)) / (2.0 * h)),
            (d.sv, (e(u, v + h) - e(u, v - h)) / (2.0 * h)),
            (d.suu, (pu(u + h, v) - pu(u - h, v)) / (2.0 * h)),
            (d.suv, (pu(u, v + h) - pu(u, v - h)) / (2.0 * h)),
            (d.svv, (pv(u, v + h) - pv(u, v - h)) / (2.0 * h)),
        ];
        for (a, b) in pairs {
            fd = fd.max((a - b).norm() / a.norm().max(1.0));
        }
    }
    // Greville abscissae as averages of p consecutive interior knots
    let mut greville_ok = true;
    for _ in 0..20 {
        let p = rng.gen_range(1..=5);
        let n = p + 1 + rng.gen_range(0..8);
        let kv = common::random_knots(&mut rng, n, p);
        let g = kv.greville().unwrap();
        let k = kv.knots();
        greville_ok &= g.len() == kv.num_ctrl()
            && g.iter().enumerate().all(|(i, &x)| x == k[i + 1..=i + p].iter().sum::<f64>() / p as f64);
    }
    outcome(
        pou <= 1e-12 && ins <= 1e-10 && fd <= 1e-5 && greville_ok,
        format!("unity {pou:.1e}, insertion {ins:.1e}, partials {fd:.1e}, greville exact {greville_ok}"),
    )
}

fn criterion_6(patch_sets: &[PatchSet]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for ps in patch_sets {
        for p in &ps.patches {
            let r = p.fit.report;
            worst = worst.max(r.kappa / r.kappa_at_zero);
            count += 1;
        }
    }
    let argmin_ok = worst <= 1.0;

    // 10:1 band tilted 20 degrees off the u axis; at 45 degrees M(0) is
    // exactly singular, which would make the comparison vacuous
    let kv = KnotVector::open_uniform(5, 3).unwrap();
    let (c, s) = (20f64.to_radians().cos(), 20f64.to_radians().sin());
    let band: Vec<(f64, f64)> = (0..60)
        .map(|k| {
            let t = (k / 6) as f64 / 9.0 - 0.5;
            let w = ((k % 6) as f64 / 5.0 - 0.5) * 0.1;
            (c * t - s * w, s * t + c * w)
        })
        .collect();
    let band = rotate_params(&band, 0.0).unwrap();
    let (_, rep) = condition_search(&band, &kv, &kv, 16, paramfit::SIGMA_TOL_REL).unwrap();
    let improves = rep.kappa < 0.9 * rep.kappa_at_zero;

    // perturbation bound on a sphere-cap fit
    let cloud = sample_sphere(4890, 1.0).unwrap();
    let ps = build_patches(&cloud.positions, 25, 30, &FitConfig::default(), false).unwrap();
    let p = &ps.patches[0];
    let pts = p.gather(&cloud.positions);
    let (ku, kv) = (p.surface.knots_u().clone(), p.surface.knots_v().clone());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bound_ok = true;
    let mut tightest: f64 = 0.0;
    for _ in 0..100 {
        let dx: Vec<Vec3> = pts.iter().map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 1e-3 - Vec3::repeat(5e-4)).collect();
        let moved: Vec<Vec3> = pts.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let (s1, _) = paramfit::fit_patch(&moved, &p.params, &ku, &kv, p.fit.report.mode).unwrap();
        let dp = s1.ctrl().iter().zip(p.surface.ctrl()).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
        let dxn = dx.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        let bound = dxn / p.fit.report.sigma_min;
        tightest = tightest.max(dp / bound);
        bound_ok &= dp <= bound * (1.0 + 1e-9);
    }
    outcome(
        argmin_ok && improves && bound_ok,
        format!(
            "max kappa*/kappa(0) over {count} patches = {worst:.4}; band {:.3e} vs {:.3e}; max |dP|/bound = {tightest:.3}",
            rep.kappa, rep.kappa_at_zero
        ),
    )
}

fn criterion_7() -> Outcome {
    let cloud = sample_sphere(2964, 1.0).unwrap();
    let ps = build_patches(&cloud.positions, 25, 30, &FitConfig::default(), false).unwrap();
    let tol = adapt::RefineConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut monotone, mut reached) = (true, 0);
    let cases = 50;
    for p in ps.patches.iter().take(cases) {
        let pts = p.gather(&cloud.positions);
        let diag = manifold_flow::bbox_diagonal(&pts);
        let mut s = p.surface.clone();
        for c in s.ctrl_mut() {
            *c += Vec3::new(rng.gen(), rng.gen(), rng.gen()).map(|x: f64| (x - 0.5) * 0.02 * diag);
        }
        let tau = tol.tau.resolve(diag);
        let out = adapt::gauss_seidel_optimize(&s, &pts, &p.params, tau, StepRule::Exact, 50).unwrap();
        monotone &= out.objective.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
        reached += usize::from(out.error <= tau);
    }
    let n = ps.patches.len().min(cases);
    outcome(
        monotone && reached as f64 >= 0.95 * n as f64,
        format!("objective monotone on all {n} patches: {monotone}; error <= tau in {reached}/{n}"),
    )
}

fn lifted_patch() -> BSplineSurface {
    let kv = KnotVector::open_uniform(4, 3).unwrap();
    let g = kv.greville().unwrap();
    let mut ctrl: Vec<Vec3> = (0..16).map(|k| Vec3::new(g[k / 4], g[k % 4], 0.0)).collect();
    ctrl[5].z = 0.5;
    BSplineSurface::new(kv.clone(), kv, ctrl).unwrap()
}

fn criterion_8() -> Outcome {
    let s = lifted_patch();
    let eps_tol = 0.2 * greville_deviation(&s).0;
    let out = refine_until_tolerance(&s, eps_tol, 10).unwrap();
    let refine_ok = out.deviation <= eps_tol && out.insertions <= 10;
    let on_surface = out
        .new_points
        .iter()
        .map(|(x, (u, v))| (x - out.surface.eval(*u, *v).unwrap()).norm())
        .fold(0.0, f64::max);

    // one gap and one cluster on a flat grid
    let kv = KnotVector::open_uniform(2, 1).unwrap();
    let plane = BSplineSurface::new(
        kv.clone(),
        kv,
        vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0)],
    )
    .unwrap();
    let (d_min, d_max) = (0.025, 0.1);
    let mut params: Vec<(f64, f64)> = (0..25).map(|k| (0.05 * (k / 5) as f64, 0.05 * (k % 5) as f64)).collect();
    params.push((0.45, 0.2));
    params.push((params[7].0 + 0.004, params[7].1));
    let pts: Vec<DensityPoint> = params
        .iter()
        .enumerate()
        .map(|(k, &q)| DensityPoint { position: plane.eval(q.0, q.1).unwrap(), param: q, id: Some(k) })
        .collect();
    let dens = adapt::manage_density(&plane, &pts, pts.len(), d_min, d_max, 10).unwrap();
    let mut all: Vec<Vec3> =
        pts.iter().enumerate().filter(|(k, _)| !dens.removed.contains(k)).map(|(_, p)| p.position).collect();
    all.extend(dens.inserted.iter().map(|x| x.0));
    let spacing_ok = all.iter().enumerate().all(|(k, a)| {
        let d = all.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, b)| (a - b).norm()).fold(f64::MAX, f64::min);
        d >= d_min && d <= d_max
    });
    let synth = dens
        .inserted
        .iter()
        .map(|(x, (u, v))| (x - plane.eval(*u, *v).unwrap()).norm())
        .fold(on_surface / s.ctrl_diameter(), f64::max);
    outcome(
        refine_ok && spacing_ok && synth <= 1e-12,
        format!(
            "deviation {:.3e} <= {eps_tol:.3e} after {} insertions; spacings in range: {spacing_ok}; synthesized off-surface {synth:.1e}",
            out.deviation, out.insertions
        ),
    )
}

fn criterion_9(fine: &SphereRun, coarse: &SphereRun) -> Outcome {
    let ratio = coarse.err_at_01 / fine.err_at_01;
    outcome(
        (1.5..=2.5).contains(&ratio),
        format!("radius error at t=0.1: {:.3e} (dt=2e-3), {:.3e} (dt=1e-3), ratio {ratio:.3}", coarse.err_at_01, fine.err_at_01),
    )
}

fn mean_step_seconds(n: usize) -> f64 {
    let cfg = EvolutionConfig { t_final: 0.012, snapshot_every: usize::MAX, ..EvolutionConfig::default() };
    let mut ev = Evolution::new(sample_sphere(n, 1.0).unwrap(), cfg, None).unwrap();
    ev.step().unwrap();
    let times: Vec<f64> = (1..cfg.num_steps()).map(|_| ev.step().unwrap().seconds).collect();
    times.iter().sum::<f64>() / times.len() as f64
}

fn criterion_10() -> Outcome {
    let small = mean_step_seconds(948);
    let large = mean_step_seconds(4890);
    let ratio = large / small;
    outcome(
        (1.2..=8.0).contains(&ratio),
        format!("mean step {:.1} ms (N=948), {:.1} ms (N=4890), ratio {ratio:.2}; recorded only", small * 1e3, large * 1e3),
    )
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |k: usize, o: Outcome| {
        println!("criterion {k:>2} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((k, o));
    };

    let fine = sphere_run(1e-3, 0.26);
    report(1, criterion_1(&fine));
    report(2, criterion_2(&fine));
    report(3, criterion_3());
    let (c4, mut patch_sets) = criterion_4();
    report(4, c4);
    report(5, criterion_5());
    let fit = FitConfig::default();
    for cloud in [sample_sphere(4890, 1.0).unwrap(), sample_torus(4890, 1.0, 0.3, 3).unwrap()] {
        patch_sets.push(build_patches(&cloud.positions, 25, 30, &fit, false).unwrap());
    }
    report(6, criterion_6(&patch_sets));
    report(7, criterion_7());
    report(8, criterion_8());
    let coarse = sphere_run(2e-3, 0.1);
    report(9, criterion_9(&fine, &coarse));
    report(10, criterion_10());

    let failed: Vec<usize> = results.iter().filter(|(k, o)| *k != 10 && !o.pass).map(|(k, _)| *k).collect();
    println!("acceptance finished in {:.0} s", started.elapsed().as_secs_f64());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
