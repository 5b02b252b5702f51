//! Univariate B-spline bases and tensor-product surfaces.
//!
//! Basis functions follow the Cox–de Boor recursion on half-open knot spans
//! `[ψ_i, ψ_{i+1})`, with the last non-empty span closed on the right so that
//! evaluation at the end of the domain is well defined. All indices are
//! zero-based: control point `(i, j)` of an `m × n` net lives at flat index
//! `i * n + j` (`j` fastest), and basis `i` is supported on
//! `[knots[i], knots[i + degree + 1]]`.

use crate::error::{Error, Result};
use crate::Vec3;

/// Zero denominators in the recursion are treated as zero terms; knot spans
/// shorter than this are considered empty.
const SPAN_EPS: f64 = 0.0;

/// A nondecreasing knot vector together with the degree of its basis.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    /// Wraps an explicit knot sequence.
    ///
    /// The sequence must be nondecreasing, have at least `2 * (degree + 1)`
    /// entries, and a non-empty parameter domain.
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::InvalidDimension(format!(
                "knot vector of length {} cannot carry degree {degree}",
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidDimension("knots must be finite and nondecreasing".into()));
        }
        let kv = Self { knots, degree };
        if kv.domain().1 <= kv.domain().0 {
            return Err(Error::InvalidDimension("empty parameter domain".into()));
        }
        Ok(kv)
    }

    /// Open-uniform (clamped) knots on `[0, 1]`: the end knots are repeated
    /// `degree + 1` times and the interior knots are equally spaced.
    pub fn open_uniform(num_ctrl: usize, degree: usize) -> Result<Self> {
        if num_ctrl < degree + 1 {
            return Err(Error::InvalidDimension(format!(
                "{num_ctrl} control points cannot support degree {degree}"
            )));
        }
        let spans = num_ctrl - degree;
        let mut knots = Vec::with_capacity(num_ctrl + degree + 1);
        knots.extend(std::iter::repeat(0.0).take(degree + 1));
        for k in 1..spans {
            knots.push(k as f64 / spans as f64);
        }
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        Ok(Self { knots, degree })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions (control points) this knot vector carries.
    pub fn num_ctrl(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// The parameter domain `[knots[p], knots[m]]`.
    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.num_ctrl()])
    }

    /// True when the first and last `degree + 1` knots coincide.
    pub fn is_clamped(&self) -> bool {
        let p = self.degree;
        let k = &self.knots;
        let n = k.len();
        k[..=p].iter().all(|&x| x == k[0]) && k[n - p - 1..].iter().all(|&x| x == k[n - 1])
    }

    pub fn multiplicity(&self, u: f64) -> usize {
        self.knots.iter().filter(|&&k| k == u).count()
    }

    fn check_domain(&self, u: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if !(u >= lo && u <= hi) {
            return Err(Error::Domain(format!("parameter {u} outside [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Index `k` of the knot span with `knots[k] <= u < knots[k + 1]`; at the
    /// right end of the domain the last non-empty span is returned.
    pub fn find_span(&self, u: f64) -> usize {
        let p = self.degree;
        let m = self.num_ctrl();
        let k = &self.knots;
        if u >= k[m] {
            // last non-empty span, closed on the right
            let mut s = m - 1;
            while s > p && k[s] >= k[s + 1] {
                s -= 1;
            }
            return s;
        }
        if u <= k[p] {
            let mut s = p;
            while s + 1 < m && k[s + 1] <= u {
                s += 1;
            }
            return s;
        }
        let (mut lo, mut hi) = (p, m);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if u < k[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values of the `degree + 1` basis functions that are nonzero on `span`,
    /// i.e. `φ_{span-p}, …, φ_span` at `u`.
    pub fn local_basis(&self, span: usize, u: f64, out: &mut [f64]) {
        let p = self.degree;
        let k = &self.knots;
        let mut left = [0.0; MAX_ORDER];
        let mut right = [0.0; MAX_ORDER];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = u - k[span + 1 - j];
            right[j] = k[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom.abs() > SPAN_EPS { out[r] / denom } else { 0.0 };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Local basis values and derivatives up to `nderiv` on `span`:
    /// `ders[d][r]` is the `d`-th derivative of `φ_{span-p+r}` at `u`.
    /// Derivatives of order above the degree are zero.
    pub fn local_basis_ders(&self, span: usize, u: f64, nderiv: usize) -> LocalDers {
        let p = self.degree;
        let k = &self.knots;
        let mut ders = LocalDers::zeros(nderiv, p);
        let mut ndu = [[0.0; MAX_ORDER]; MAX_ORDER];
        let mut left = [0.0; MAX_ORDER];
        let mut right = [0.0; MAX_ORDER];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = u - k[span + 1 - j];
            right[j] = k[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                // lower triangle holds knot differences
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = if ndu[j][r].abs() > SPAN_EPS { ndu[r][j - 1] / ndu[j][r] } else { 0.0 };
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        for j in 0..=p {
            ders.set(0, j, ndu[j][p]);
        }
        let top = nderiv.min(p);
        let mut a = [[0.0; MAX_ORDER]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for kd in 1..=top {
                let mut d = 0.0;
                let rk = r as isize - kd as isize;
                let pk = p - kd;
                if r >= kd {
                    let den = ndu[pk + 1][rk as usize];
                    a[s2][0] = if den != 0.0 { a[s1][0] / den } else { 0.0 };
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk as isize { kd - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    let den = ndu[pk + 1][idx];
                    a[s2][j] = if den != 0.0 { (a[s1][j] - a[s1][j - 1]) / den } else { 0.0 };
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    let den = ndu[pk + 1][r];
                    a[s2][kd] = if den != 0.0 { -a[s1][kd - 1] / den } else { 0.0 };
                    d += a[s2][kd] * ndu[r][pk];
                }
                ders.set(kd, r, d);
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for kd in 1..=top {
            for j in 0..=p {
                let v = ders.get(kd, j) * fac;
                ders.set(kd, j, v);
            }
            fac *= (p - kd) as f64;
        }
        ders
    }

    /// `φ_i^p(u)` for a single basis function.
    pub fn basis_value(&self, i: usize, u: f64) -> Result<f64> {
        self.basis_derivative(i, u, 0)
    }

    /// The `order`-th derivative of `φ_i^p` at `u`; zero above the degree.
    pub fn basis_derivative(&self, i: usize, u: f64, order: usize) -> Result<f64> {
        if i >= self.num_ctrl() {
            return Err(Error::IndexOutOfRange { index: i, len: self.num_ctrl() });
        }
        self.check_domain(u)?;
        if order > self.degree {
            return Ok(0.0);
        }
        let span = self.find_span(u);
        let p = self.degree;
        if i + p < span || i > span {
            return Ok(0.0);
        }
        let ders = self.local_basis_ders(span, u, order);
        Ok(ders.get(order, i + p - span))
    }

    /// Greville abscissae `g_i = (ψ_{i+1} + … + ψ_{i+p}) / p`, one per basis.
    pub fn greville(&self) -> Result<Vec<f64>> {
        let p = self.degree;
        if p == 0 {
            return Err(Error::InvalidDimension("Greville abscissae undefined for degree 0".into()));
        }
        Ok((0..self.num_ctrl())
            .map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect())
    }

    /// Collocation row: the dense vector of all basis values at `u`.
    pub fn basis_row(&self, u: f64) -> Result<Vec<f64>> {
        self.check_domain(u)?;
        let mut row = vec![0.0; self.num_ctrl()];
        let span = self.find_span(u);
        let mut local = [0.0; MAX_ORDER];
        self.local_basis(span, u, &mut local);
        for (r, &b) in local[..=self.degree].iter().enumerate() {
            row[span - self.degree + r] = b;
        }
        Ok(row)
    }
}

/// Largest supported order (degree + 1) for stack-allocated scratch space.
pub const MAX_ORDER: usize = 8;

/// Local basis derivatives returned by [`KnotVector::local_basis_ders`].
#[derive(Debug, Clone)]
pub struct LocalDers {
    order: usize,
    data: [[f64; MAX_ORDER]; MAX_ORDER],
    nderiv: usize,
}

impl LocalDers {
    fn zeros(nderiv: usize, degree: usize) -> Self {
        Self { order: degree + 1, data: [[0.0; MAX_ORDER]; MAX_ORDER], nderiv: nderiv.min(MAX_ORDER - 1) }
    }

    fn set(&mut self, d: usize, r: usize, v: f64) {
        if d <= self.nderiv {
            self.data[d][r] = v;
        }
    }

    pub fn get(&self, d: usize, r: usize) -> f64 {
        debug_assert!(r < self.order);
        self.data[d][r]
    }

    pub fn row(&self, d: usize) -> &[f64] {
        &self.data[d][..self.order]
    }
}

/// Parametric direction of a tensor-product surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    U,
    V,
}

/// Position and first/second partial derivatives of a surface at one `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePartials {
    pub point: Vec3,
    pub su: Vec3,
    pub sv: Vec3,
    pub suu: Vec3,
    pub suv: Vec3,
    pub svv: Vec3,
}

/// Non-rational tensor-product B-spline surface in R³.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineSurface {
    knots_u: KnotVector,
    knots_v: KnotVector,
    ctrl: Vec<Vec3>,
}

impl BSplineSurface {
    /// Builds a surface from its knots and an `m × n` control net stored
    /// row-major with `j` (the v index) fastest.
    pub fn new(knots_u: KnotVector, knots_v: KnotVector, ctrl: Vec<Vec3>) -> Result<Self> {
        for kv in [&knots_u, &knots_v] {
            if kv.degree() + 1 > MAX_ORDER {
                return Err(Error::InvalidDimension(format!("degree {} unsupported", kv.degree())));
            }
        }
        let (m, n) = (knots_u.num_ctrl(), knots_v.num_ctrl());
        if ctrl.len() != m * n {
            return Err(Error::InvalidDimension(format!(
                "control net has {} points, knots require {m}×{n}",
                ctrl.len()
            )));
        }
        Ok(Self { knots_u, knots_v, ctrl })
    }

    pub fn knots_u(&self) -> &KnotVector {
        &self.knots_u
    }

    pub fn knots_v(&self) -> &KnotVector {
        &self.knots_v
    }

    pub fn degrees(&self) -> (usize, usize) {
        (self.knots_u.degree(), self.knots_v.degree())
    }

    /// Control-net dimensions `(m, n)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.knots_u.num_ctrl(), self.knots_v.num_ctrl())
    }

    pub fn ctrl(&self) -> &[Vec3] {
        &self.ctrl
    }

    pub fn ctrl_mut(&mut self) -> &mut [Vec3] {
        &mut self.ctrl
    }

    pub fn ctrl_at(&self, i: usize, j: usize) -> Vec3 {
        self.ctrl[i * self.dims().1 + j]
    }

    /// Diagonal of the control net's axis-aligned bounding box.
    pub fn ctrl_diameter(&self) -> f64 {
        crate::bbox_diagonal(&self.ctrl)
    }

    fn check(&self, u: f64, v: f64) -> Result<()> {
        self.knots_u.check_domain(u)?;
        self.knots_v.check_domain(v)
    }

    /// `S(u, v)`, accumulated over the `(p+1)(q+1)` active basis products.
    pub fn eval(&self, u: f64, v: f64) -> Result<Vec3> {
        self.check(u, v)?;
        Ok(self.eval_unchecked(u, v))
    }

    pub(crate) fn eval_unchecked(&self, u: f64, v: f64) -> Vec3 {
        let (p, q) = self.degrees();
        let n = self.dims().1;
        let su = self.knots_u.find_span(u);
        let sv = self.knots_v.find_span(v);
        let mut bu = [0.0; MAX_ORDER];
        let mut bv = [0.0; MAX_ORDER];
        self.knots_u.local_basis(su, u, &mut bu);
        self.knots_v.local_basis(sv, v, &mut bv);
        let mut out = Vec3::zeros();
        for (a, &wu) in bu[..=p].iter().enumerate() {
            let row = (su - p + a) * n + sv - q;
            let mut acc = Vec3::zeros();
            for (b, &wv) in bv[..=q].iter().enumerate() {
                acc += self.ctrl[row + b] * wv;
            }
            out += acc * wu;
        }
        out
    }

    /// Position with first and second partials. Both degrees must be at
    /// least 2 for the second-order terms to be meaningful.
    pub fn partials(&self, u: f64, v: f64) -> Result<SurfacePartials> {
        let (p, q) = self.degrees();
        if p < 2 || q < 2 {
            return Err(Error::InvalidDimension(format!(
                "second partials need bi-degree ≥ 2, surface has ({p}, {q})"
            )));
        }
        self.check(u, v)?;
        Ok(self.partials_unchecked(u, v))
    }

    pub(crate) fn partials_unchecked(&self, u: f64, v: f64) -> SurfacePartials {
        let (p, q) = self.degrees();
        let n = self.dims().1;
        let su = self.knots_u.find_span(u);
        let sv = self.knots_v.find_span(v);
        let du = self.knots_u.local_basis_ders(su, u, 2);
        let dv = self.knots_v.local_basis_ders(sv, v, 2);
        // column sums over v for each derivative order in v, per row a
        let mut out = SurfacePartials {
            point: Vec3::zeros(),
            su: Vec3::zeros(),
            sv: Vec3::zeros(),
            suu: Vec3::zeros(),
            suv: Vec3::zeros(),
            svv: Vec3::zeros(),
        };
        for a in 0..=p {
            let row = (su - p + a) * n + sv - q;
            let (mut c0, mut c1, mut c2) = (Vec3::zeros(), Vec3::zeros(), Vec3::zeros());
            for b in 0..=q {
                let pt = self.ctrl[row + b];
                c0 += pt * dv.get(0, b);
                c1 += pt * dv.get(1, b);
                c2 += pt * dv.get(2, b);
            }
            let (w0, w1, w2) = (du.get(0, a), du.get(1, a), du.get(2, a));
            out.point += c0 * w0;
            out.su += c0 * w1;
            out.suu += c0 * w2;
            out.sv += c1 * w0;
            out.suv += c1 * w1;
            out.svv += c2 * w0;
        }
        out
    }

    /// Greville abscissae in both directions.
    pub fn greville(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.knots_u.greville()?, self.knots_v.greville()?))
    }

    /// Inserts `value` once into the knot vector of `direction` (Boehm's
    /// algorithm applied to every row or column of the net). The geometric
    /// image of the surface is unchanged.
    pub fn insert_knot(&self, direction: Direction, value: f64) -> Result<Self> {
        let kv = match direction {
            Direction::U => &self.knots_u,
            Direction::V => &self.knots_v,
        };
        let (lo, hi) = kv.domain();
        if !(value > lo && value < hi) {
            return Err(Error::Domain(format!("knot {value} not strictly inside ({lo}, {hi})")));
        }
        let p = kv.degree();
        let mult = kv.multiplicity(value);
        if mult + 1 > p {
            return Err(Error::KnotMultiplicity { value, multiplicity: mult, degree: p });
        }
        let k = kv.find_span(value);
        let old = kv.knots();
        let alphas: Vec<f64> = (k + 1 - p..=k - mult)
            .map(|i| (value - old[i]) / (old[i + p] - old[i]))
            .collect();
        let insert_row = |src: &[Vec3]| -> Vec<Vec3> {
            let len = src.len();
            let mut dst = Vec::with_capacity(len + 1);
            for i in 0..=len {
                let q = if i + p <= k {
                    src[i]
                } else if i <= k - mult {
                    let a = alphas[i + p - k - 1];
                    src[i] * a + src[i - 1] * (1.0 - a)
                } else {
                    src[i - 1]
                };
                dst.push(q);
            }
            dst
        };
        let mut knots = old.to_vec();
        knots.insert(k + 1, value);
        let new_kv = KnotVector { knots, degree: p };
        let (m, n) = self.dims();
        match direction {
            Direction::U => {
                let mut ctrl = vec![Vec3::zeros(); (m + 1) * n];
                let mut col = Vec::with_capacity(m);
                for j in 0..n {
                    col.clear();
                    col.extend((0..m).map(|i| self.ctrl[i * n + j]));
                    for (i, q) in insert_row(&col).into_iter().enumerate() {
                        ctrl[i * n + j] = q;
                    }
                }
                Self::new(new_kv, self.knots_v.clone(), ctrl)
            }
            Direction::V => {
                let mut ctrl = Vec::with_capacity(m * (n + 1));
                for i in 0..m {
                    ctrl.extend(insert_row(&self.ctrl[i * n..(i + 1) * n]));
                }
                Self::new(self.knots_u.clone(), new_kv, ctrl)
            }
        }
    }

    /// Returns a copy with every control point translated by `offset`.
    pub fn translated(&self, offset: Vec3) -> Self {
        let mut s = self.clone();
        s.ctrl.iter_mut().for_each(|p| *p += offset);
        s
    }
}
