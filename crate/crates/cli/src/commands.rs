//! Subcommand drivers: run the core pipeline and write outputs.

use std::path::Path;

use log::info;
use manifold_flow::flows::{build_patches, Evolution, RunOutcome, Termination};
use manifold_flow::record::{self, RunManifest};
use manifold_flow::scenarios::{estimate_radius, geometry_errors, Shape};

use crate::options::RunSettings;

/// How a command finished; maps onto the process exit code.
pub enum Outcome {
    Completed,
    Extinct,
    NumericFailure,
}

fn manifest_for(command: &str, s: &RunSettings) -> manifold_flow::Result<RunManifest> {
    Ok(RunManifest::new(command, serde_json::to_value(s)?))
}

/// Static fits over every `(N, m_c)` pair, tabulated in `errors.csv`.
pub fn fit_test(s: &RunSettings) -> manifold_flow::Result<Outcome> {
    std::fs::create_dir_all(&s.out_dir)?;
    let mut manifest = manifest_for("fit-test", s)?;
    let mut rows = Vec::new();
    for &n in &s.n_points {
        let cloud = s.spec(n).sample()?;
        for &m_c in &s.m_c {
            let cfg = &s.evolution;
            let patches = build_patches(&cloud.positions, m_c, cfg.m_b, &cfg.fit, false)?;
            let e = geometry_errors(&s.shape, &cloud.positions, &patches)?;
            info!("N={n} m_c={m_c}: err_normal={:.3e} err_H={:.3e}", e.err_normal, e.err_h);
            rows.push(vec![n.to_string(), m_c.to_string(), e.err_normal.to_string(), e.err_h.to_string()]);
        }
    }
    let name = "errors.csv";
    record::write_table_csv(&s.out_dir.join(name), &["N", "m_c", "err_normal", "err_H"], &rows, &manifest.hash)?;
    manifest.outputs.push(name.into());
    manifest.termination = Some(Termination::Completed);
    manifest.write(&s.out_dir.join("manifest.json"))?;
    Ok(Outcome::Completed)
}

/// Time evolution for `evolve` and `coupled`. Outputs are written even when
/// the run stops early.
pub fn evolve(command: &str, s: &RunSettings) -> manifold_flow::Result<Outcome> {
    std::fs::create_dir_all(&s.out_dir)?;
    let mut manifest = manifest_for(command, s)?;
    let cloud = s.spec(s.n_points[0]).sample()?;
    let mut ev = Evolution::new(cloud, s.evolution, s.field)?;
    let analytic = |t: f64| match s.shape {
        Shape::Sphere { radius } => Some((radius * radius - 4.0 * t).max(0.0).sqrt()),
        _ => None,
    };
    let mut radius = vec![(0.0, estimate_radius(ev.cloud()), analytic(0.0))];
    let every = s.evolution.snapshot_every;
    let out: RunOutcome = ev.run_with(|e, d| {
        radius.push((d.time, estimate_radius(e.cloud()), analytic(d.time)));
        if d.step % every == 0 {
            info!("step {} t={:.4} points={} patches={}", d.step, d.time, d.num_points, d.num_patches);
        }
    });
    write_outputs(&s.out_dir, s.ply, &out, &radius, &mut manifest)?;
    manifest.step_seconds = out.diagnostics.iter().map(|d| d.seconds).collect();
    manifest.termination = Some(out.termination.clone());
    manifest.write(&s.out_dir.join("manifest.json"))?;
    Ok(match out.termination {
        Termination::Completed => Outcome::Completed,
        Termination::Extinction { time, diameter } => {
            info!("extinction at t={time:.4} (diameter {diameter:.4})");
            Outcome::Extinct
        }
        Termination::NumericFailure { time, message } => {
            log::error!("numerical failure at t={time:.4}: {message}");
            Outcome::NumericFailure
        }
    })
}

fn write_outputs(
    dir: &Path,
    ply: bool,
    out: &RunOutcome,
    radius: &[(f64, f64, Option<f64>)],
    manifest: &mut RunManifest,
) -> manifold_flow::Result<()> {
    let hash = manifest.hash.clone();
    for snap in &out.snapshots {
        let name = format!("snapshot_{:06}.csv", snap.step);
        record::write_snapshot_csv(&dir.join(&name), snap, &hash)?;
        manifest.outputs.push(name);
        let name = format!("patches_{:06}.csv", snap.step);
        record::write_patch_csv(&dir.join(&name), snap, &hash)?;
        manifest.outputs.push(name);
        if ply {
            let name = format!("snapshot_{:06}.ply", snap.step);
            record::write_ply(&dir.join(&name), &snap.positions, snap.normals.as_deref(), &hash)?;
            manifest.outputs.push(name);
        }
    }
    record::write_radius_csv(&dir.join("radius.csv"), radius, &hash)?;
    manifest.outputs.push("radius.csv".into());

    let columns = [
        "step",
        "t",
        "points",
        "patches",
        "gs_runs",
        "gs_failures",
        "refinements",
        "removed",
        "inserted",
        "repatched",
        "degenerate_samples",
        "max_interp_error",
    ];
    let rows: Vec<Vec<String>> = out
        .diagnostics
        .iter()
        .map(|d| {
            vec![
                d.step.to_string(),
                d.time.to_string(),
                d.num_points.to_string(),
                d.num_patches.to_string(),
                d.gs_runs.to_string(),
                d.gs_failures.to_string(),
                d.refinements.to_string(),
                d.removed.to_string(),
                d.inserted.to_string(),
                d.repatched.to_string(),
                d.degenerate_samples.to_string(),
                d.max_interp_error.to_string(),
            ]
        })
        .collect();
    // wall-clock times live in the manifest so the CSVs stay reproducible
    record::write_table_csv(&dir.join("steps.csv"), &columns, &rows, &hash)?;
    manifest.outputs.push("steps.csv".into());
    Ok(())
}
