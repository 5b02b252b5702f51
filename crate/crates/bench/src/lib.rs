//! Benchmark fixtures shared by the criterion targets.

use manifold_flow::patching::decompose;
use manifold_flow::scenarios::sample_sphere;
use manifold_flow::{BSplineSurface, KnotVector, Vec3};

/// Points of one overlapping patch on the unit sphere, `m_c = 25`, `m_b = 30`.
pub fn sphere_patch_points(n: usize) -> Vec<Vec3> {
    let cloud = sample_sphere(n, 1.0).expect("valid sample");
    let layout = decompose(&cloud.positions, 25, 30, 16).expect("valid decomposition").swap_remove(0);
    layout.indices().map(|i| cloud.positions[i]).collect()
}

/// Bicubic graph surface `z = sin(x)·cos(y)` on a `k × k` control grid.
pub fn wavy_surface(k: usize) -> BSplineSurface {
    let kv = KnotVector::open_uniform(k, 3).expect("k > 3");
    let g = kv.greville().expect("degree ≥ 1");
    let ctrl = (0..k * k).map(|i| {
        let (x, y) = (g[i / k], g[i % k]);
        Vec3::new(x, y, (3.0 * x).sin() * (2.0 * y).cos())
    });
    BSplineSurface::new(kv.clone(), kv, ctrl.collect()).expect("consistent sizes")
}
