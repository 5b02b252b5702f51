#![allow(dead_code)]

use manifold_flow::{BSplineSurface, KnotVector, Vec3};
use rand::Rng;

/// Clamped knot vector with `n` control points and random interior knots.
pub fn random_knots(rng: &mut impl Rng, n: usize, degree: usize) -> KnotVector {
    let mut interior: Vec<f64> = (0..n - degree - 1).map(|_| rng.gen_range(0.05..0.95)).collect();
    interior.sort_by(f64::total_cmp);
    let mut knots = vec![0.0; degree + 1];
    knots.extend(interior);
    knots.extend(std::iter::repeat(1.0).take(degree + 1));
    KnotVector::new(knots, degree).unwrap()
}

/// Graph-like surface over the unit square with random heights.
pub fn random_surface(rng: &mut impl Rng, m: usize, n: usize, p: usize, q: usize) -> BSplineSurface {
    let ku = random_knots(rng, m, p);
    let kv = random_knots(rng, n, q);
    let (gu, gv) = (ku.greville().unwrap(), kv.greville().unwrap());
    let ctrl = (0..m * n).map(|k| Vec3::new(gu[k / n], gv[k % n], rng.gen_range(-0.3..0.3))).collect();
    BSplineSurface::new(ku, kv, ctrl).unwrap()
}
