//! Disjoint core patches, their overlapping extensions, and a consistent
//! normal orientation across neighbouring patches.
//!
//! Cores are grown greedily: a seed claims its `m_c` nearest unassigned
//! points, and the next seed is taken from the front of the assigned region.
//! Each core is then extended by the `m_b` points nearest to its center that
//! lie outside it.

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};

use log::warn;

use crate::error::{Error, Result};
use crate::paramfit::{Frame, PatchFit};
use crate::splinecore::BSplineSurface;
use crate::{centroid, Vec3};

/// A sampled surface `X(t)` with optional scalar fields.
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub field_u: Option<Vec<f64>>,
    pub field_w: Option<Vec<f64>>,
    pub time: f64,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>) -> Self {
        Self { positions, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.positions)
    }

    /// Twice the largest distance from the centroid: an upper bound on the
    /// largest pairwise distance that is exact for a sphere.
    pub fn diameter(&self) -> f64 {
        let c = self.centroid();
        2.0 * self.positions.iter().map(|p| (p - c).norm()).fold(0.0, f64::max)
    }

    /// Nearest-neighbour distance of every point.
    pub fn nn_spacings(&self) -> Vec<f64> {
        let tree = KdTree::new(&self.positions);
        self.positions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let nn = tree.knn_filtered(p, 1, |j| j != i);
                nn.first().map_or(0.0, |&j| (self.positions[j] - p).norm())
            })
            .collect()
    }

    /// Median nearest-neighbour spacing.
    pub fn median_spacing(&self) -> f64 {
        let mut d = self.nn_spacings();
        if d.is_empty() {
            return 0.0;
        }
        d.sort_by(f64::total_cmp);
        d[d.len() / 2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Static 3-d tree over a borrowed point slice. Query results are ordered by
/// distance with ties broken by the smaller index, exactly as a linear scan.
pub struct KdTree<'a> {
    points: &'a [Vec3],
    nodes: Vec<Node>,
    root: Option<usize>,
}

struct Node {
    index: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut tree = Self { points, nodes: Vec::with_capacity(points.len()), root: None };
        tree.root = tree.build(&mut order, 0);
        tree
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        let pts = self.points;
        idx.select_nth_unstable_by(mid, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b)));
        let index = idx[mid];
        let (lo, rest) = idx.split_at_mut(mid);
        let left = self.build(lo, depth + 1);
        let right = self.build(&mut rest[1..], depth + 1);
        self.nodes.push(Node { index, axis, left, right });
        Some(self.nodes.len() - 1)
    }

    /// The `k` nearest accepted points to `query` (fewer if fewer exist).
    pub fn knn_filtered(&self, query: &Vec3, k: usize, accept: impl Fn(usize) -> bool) -> Vec<usize> {
        let mut heap = std::collections::BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.search(self.root, query, k, &accept, &mut heap);
        }
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| c.index).collect()
    }

    /// Indices of all points within `radius` of `query`, in index order.
    pub fn within(&self, query: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let r2 = radius * radius;
        let mut stack: Vec<usize> = self.root.into_iter().collect();
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id];
            let p = self.points[n.index];
            if (p - query).norm_squared() <= r2 {
                out.push(n.index);
            }
            let diff = query[n.axis] - p[n.axis];
            let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
            stack.extend(near);
            if diff * diff <= r2 {
                stack.extend(far);
            }
        }
        out.sort_unstable();
        out
    }

    fn search(
        &self,
        node: Option<usize>,
        q: &Vec3,
        k: usize,
        accept: &impl Fn(usize) -> bool,
        heap: &mut std::collections::BinaryHeap<Candidate>,
    ) {
        let Some(id) = node else { return };
        let n = &self.nodes[id];
        let p = self.points[n.index];
        if accept(n.index) {
            let c = Candidate { dist2: (p - q).norm_squared(), index: n.index };
            if heap.len() < k {
                heap.push(c);
            } else if c < *heap.peek().unwrap() {
                heap.pop();
                heap.push(c);
            }
        }
        let diff = q[n.axis] - p[n.axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search(near, q, k, accept, heap);
        if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
            self.search(far, q, k, accept, heap);
        }
    }
}

/// The `k` nearest points of `positions` to `query`, ties to the smaller index.
pub fn knn(positions: &[Vec3], query: &Vec3, k: usize) -> Result<Vec<usize>> {
    if k > positions.len() {
        return Err(Error::TooFewCandidates { requested: k, available: positions.len() });
    }
    Ok(KdTree::new(positions).knn_filtered(query, k, |_| true))
}

/// Number of nearest neighbours consulted when choosing the next seed.
const SEED_NEIGHBOURS: usize = 12;

/// Greedy disjoint decomposition into cores of `m_c` points. The first seed
/// is point 0; each later seed is the unassigned point with the most
/// assigned points among its nearest neighbours (ties to the smaller index),
/// so cores grow as a front and leftovers stay compact. A final core smaller
/// than `min_core` is merged into the core whose center is nearest.
pub fn build_core_patches(positions: &[Vec3], m_c: usize, min_core: usize) -> Result<Vec<Vec<usize>>> {
    let n = positions.len();
    if m_c == 0 || n < min_core.max(1) {
        return Err(Error::TooFewCandidates { requested: min_core.max(1), available: n });
    }
    let tree = KdTree::new(positions);
    let k_seed = SEED_NEIGHBOURS.min(n - 1);
    let mut reverse: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, p) in positions.iter().enumerate() {
        for j in tree.knn_filtered(p, k_seed + 1, |j| j != i) {
            reverse[j].push(i);
        }
    }
    let mut assigned = vec![false; n];
    let mut enclosed = vec![0usize; n];
    // (enclosure count, Reverse(index)) for unassigned points; stale entries are skipped
    let mut queue = std::collections::BinaryHeap::new();
    let mut cores: Vec<Vec<usize>> = Vec::with_capacity(n / m_c + 1);
    let mut remaining = n;
    let mut seed = 0;
    while remaining > 0 {
        let k = m_c.min(remaining);
        let core = tree.knn_filtered(&positions[seed], k, |j| !assigned[j]);
        for &j in &core {
            assigned[j] = true;
        }
        for &j in &core {
            for &i in &reverse[j] {
                if !assigned[i] {
                    enclosed[i] += 1;
                    queue.push((enclosed[i], std::cmp::Reverse(i)));
                }
            }
        }
        remaining -= core.len();
        cores.push(core);
        if remaining == 0 {
            break;
        }
        seed = loop {
            match queue.pop() {
                Some((c, std::cmp::Reverse(i))) if !assigned[i] && c == enclosed[i] => break i,
                Some(_) => continue,
                // disconnected remainder: fall back to the lowest unassigned index
                None => break (0..n).find(|&i| !assigned[i]).expect("remaining > 0"),
            }
        };
    }
    if cores.len() > 1 && cores.last().unwrap().len() < min_core {
        let small = cores.pop().unwrap();
        let c = centroid(&small.iter().map(|&i| positions[i]).collect::<Vec<_>>());
        let target = cores
            .iter()
            .enumerate()
            .map(|(k, core)| (k, (positions[patch_center(positions, core)] - c).norm_squared()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
            .unwrap();
        cores[target].extend(small);
    }
    Ok(cores)
}

/// Core point nearest to the core centroid, ties to the smaller index.
pub fn patch_center(positions: &[Vec3], core: &[usize]) -> usize {
    let c = centroid(&core.iter().map(|&i| positions[i]).collect::<Vec<_>>());
    *core
        .iter()
        .min_by(|&&a, &&b| {
            (positions[a] - c)
                .norm_squared()
                .total_cmp(&(positions[b] - c).norm_squared())
                .then(a.cmp(&b))
        })
        .expect("core patch must be nonempty")
}

/// Index sets of one overlapping patch before it is fitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchLayout {
    pub core: Vec<usize>,
    pub boundary: Vec<usize>,
    pub center: usize,
}

impl PatchLayout {
    /// Core indices followed by boundary indices; the order used by the
    /// patch parameters.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.core.iter().chain(self.boundary.iter()).copied()
    }

    pub fn len(&self) -> usize {
        self.core.len() + self.boundary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.core.is_empty()
    }
}

/// Extends a core with the `m_b` points nearest its center drawn from the
/// complement of the core. Requests beyond the complement size are clamped.
pub fn extend_patch(positions: &[Vec3], center: usize, core: &[usize], m_b: usize) -> PatchLayout {
    let tree = KdTree::new(positions);
    extend_with_tree(&tree, positions, center, core, m_b)
}

fn extend_with_tree(tree: &KdTree, positions: &[Vec3], center: usize, core: &[usize], m_b: usize) -> PatchLayout {
    let complement = positions.len() - core.len();
    let k = if m_b > complement {
        warn!("boundary request {m_b} clamped to complement size {complement}");
        complement
    } else {
        m_b
    };
    let mut in_core = vec![false; positions.len()];
    for &i in core {
        in_core[i] = true;
    }
    let boundary = tree.knn_filtered(&positions[center], k, |j| !in_core[j]);
    PatchLayout { core: core.to_vec(), boundary, center }
}

/// Full decomposition: cores, centers and overlapping extensions.
pub fn decompose(positions: &[Vec3], m_c: usize, m_b: usize, min_core: usize) -> Result<Vec<PatchLayout>> {
    let cores = build_core_patches(positions, m_c, min_core)?;
    let tree = KdTree::new(positions);
    Ok(cores
        .into_iter()
        .map(|core| {
            let center = patch_center(positions, &core);
            extend_with_tree(&tree, positions, center, &core, m_b)
        })
        .collect())
}

/// A fitted overlapping patch.
#[derive(Debug, Clone)]
pub struct Patch {
    pub layout: PatchLayout,
    pub frame: Frame,
    /// `(u, v)` per patch point, core points first, then boundary points.
    pub params: Vec<(f64, f64)>,
    pub surface: BSplineSurface,
    pub orientation_sign: f64,
    pub fit: PatchFit,
}

impl Patch {
    pub fn core_params(&self) -> &[(f64, f64)] {
        &self.params[..self.layout.core.len()]
    }

    /// Current positions of every patch point, in parameter order.
    pub fn gather(&self, positions: &[Vec3]) -> Vec<Vec3> {
        self.layout.indices().map(|i| positions[i]).collect()
    }
}

/// The patches covering a cloud, with a per-point lookup of the owning core.
#[derive(Debug, Clone)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
    /// `(patch, slot)` of every point's core membership.
    pub owner: Vec<(usize, usize)>,
}

impl PatchSet {
    pub fn new(patches: Vec<Patch>, num_points: usize) -> Result<Self> {
        let mut owner = vec![(usize::MAX, usize::MAX); num_points];
        for (k, p) in patches.iter().enumerate() {
            for (slot, &i) in p.layout.core.iter().enumerate() {
                if owner[i].0 != usize::MAX {
                    return Err(Error::DegeneratePatch(format!("point {i} belongs to two cores")));
                }
                owner[i] = (k, slot);
            }
        }
        if let Some(i) = owner.iter().position(|o| o.0 == usize::MAX) {
            return Err(Error::DegeneratePatch(format!("point {i} has no core patch")));
        }
        Ok(Self { patches, owner })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Index of the core patch of every point.
    pub fn core_of(&self) -> Vec<usize> {
        self.owner.iter().map(|o| o.0).collect()
    }
}

/// Unsigned chart normals `S_u × S_v` of a patch at each of its points.
fn chart_normals(patch: &Patch) -> Vec<Option<Vec3>> {
    patch
        .params
        .iter()
        .map(|&(u, v)| {
            let d = patch.surface.partials(u, v).ok()?;
            let c = d.su.cross(&d.sv);
            let len = c.norm();
            (len > 0.0).then(|| c / len)
        })
        .collect()
}

/// Adjacent patch pair with the number of shared points and how many of
/// them have agreeing unsigned normals.
#[derive(Debug, Clone, Copy)]
struct Adjacency {
    a: usize,
    b: usize,
    shared: usize,
    agree: usize,
}

/// Orientation signs (±1) making normals of overlapping patches agree.
///
/// Patches are linked by shared points; signs propagate over a maximum
/// spanning tree weighted by the shared-point count. In every connected
/// component the patch whose center lies farthest from the cloud centroid is
/// the seed and is oriented so that its normal points away from the centroid.
pub fn orient_patches(patches: &[Patch], positions: &[Vec3]) -> Vec<f64> {
    orient_patches_with_seed(patches, positions, 1.0)
}

/// As [`orient_patches`], with every component seed multiplied by `seed_sign`.
pub fn orient_patches_with_seed(patches: &[Patch], positions: &[Vec3], seed_sign: f64) -> Vec<f64> {
    let normals: Vec<Vec<Option<Vec3>>> = patches.iter().map(chart_normals).collect();
    // point -> (patch, slot) memberships
    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); positions.len()];
    for (k, p) in patches.iter().enumerate() {
        for (slot, i) in p.layout.indices().enumerate() {
            members[i].push((k, slot));
        }
    }
    let mut pairs: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for list in &members {
        for (x, &(ka, sa)) in list.iter().enumerate() {
            for &(kb, sb) in &list[x + 1..] {
                let (Some(na), Some(nb)) = (normals[ka][sa], normals[kb][sb]) else { continue };
                let key = (ka.min(kb), ka.max(kb));
                let e = pairs.entry(key).or_insert((0, 0));
                e.0 += 1;
                if na.dot(&nb) > 0.0 {
                    e.1 += 1;
                }
            }
        }
    }
    let mut edges: Vec<Adjacency> =
        pairs.into_iter().map(|((a, b), (shared, agree))| Adjacency { a, b, shared, agree }).collect();
    edges.sort_by(|x, y| y.shared.cmp(&x.shared).then((x.a, x.b).cmp(&(y.a, y.b))));

    // Kruskal for a maximum spanning forest
    let mut parent: Vec<usize> = (0..patches.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut tree: Vec<Vec<(usize, bool)>> = vec![Vec::new(); patches.len()];
    for e in &edges {
        let (ra, rb) = (find(&mut parent, e.a), find(&mut parent, e.b));
        if ra != rb {
            parent[ra] = rb;
            let same = 2 * e.agree >= e.shared;
            tree[e.a].push((e.b, same));
            tree[e.b].push((e.a, same));
        }
    }

    let c = centroid(positions);
    let mut sign = vec![0.0; patches.len()];
    let mut by_distance: Vec<usize> = (0..patches.len()).collect();
    let dist = |k: usize| (positions[patches[k].layout.center] - c).norm_squared();
    by_distance.sort_by(|&a, &b| dist(b).total_cmp(&dist(a)).then(a.cmp(&b)));
    for seed in by_distance {
        if sign[seed] != 0.0 {
            continue;
        }
        let p = &patches[seed];
        let center_slot = p.layout.core.iter().position(|&i| i == p.layout.center).unwrap_or(0);
        let outward = positions[p.layout.center] - c;
        let n = normals[seed][center_slot].or_else(|| normals[seed].iter().flatten().next().copied());
        sign[seed] = seed_sign
            * match n {
                Some(n) if n.dot(&outward) < 0.0 => -1.0,
                _ => 1.0,
            };
        let mut queue = VecDeque::from([seed]);
        while let Some(a) = queue.pop_front() {
            for &(b, same) in &tree[a] {
                if sign[b] == 0.0 {
                    sign[b] = if same { sign[a] } else { -sign[a] };
                    queue.push_back(b);
                }
            }
        }
    }
    sign
}
