//! Two-phase median filter schemes.
//!
//! * [`sampled_weighted_median`]: sort-based weighted median over a
//!   [`SampledStencil`].
//! * [`bisection_median`]: median over circle kernels, computed by bisection
//!   on `lambda` of the arc-measure estimate [`approx_psi`].
//! * [`step_median`] / [`MedianScheme::step`]: one Jacobi or two-step update
//!   of a whole field.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Point, ScalarField2D};
use crate::kernels::CircleSumKernel;

/// Symmetric set of weighted sample offsets (physical units).
#[derive(Debug, Clone, PartialEq)]
pub struct SampledStencil {
    offsets: Vec<Point>,
    weights: Vec<f64>,
    total_weight: f64,
}

impl SampledStencil {
    pub fn new(offsets: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::Argument("empty stencil".into()));
        }
        if offsets.len() != weights.len() {
            return Err(Error::Argument("offset and weight counts differ".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config("stencil weights must be positive".into()));
        }
        let scale = offsets.iter().map(|p| p.norm()).fold(0.0, f64::max).max(1.0);
        let tol = 1e-12 * scale;
        for (p, w) in offsets.iter().zip(&weights) {
            let mirrored = offsets
                .iter()
                .zip(&weights)
                .any(|(q, v)| (q.x + p.x).abs() <= tol && (q.y + p.y).abs() <= tol && (v - w).abs() <= 1e-12 * w);
            if !mirrored {
                return Err(Error::Config(format!(
                    "stencil is not point-symmetric: offset ({}, {}) has no mirror",
                    p.x, p.y
                )));
            }
        }
        let total_weight = weights.iter().sum();
        Ok(Self { offsets, weights, total_weight })
    }

    /// `m` equally weighted points on the circle of radius `r` (`m` even).
    pub fn circle(r: f64, m: usize) -> Result<Self> {
        if m < 2 || m % 2 == 1 {
            return Err(Error::Config(format!("circle stencil needs an even point count, got {m}")));
        }
        let offsets = (0..m)
            .map(|k| {
                let t = TAU * (k as f64 + 0.5) / m as f64;
                Point::new(r * t.cos(), r * t.sin())
            })
            .collect();
        Self::symmetrized(offsets, vec![1.0; m])
    }

    /// Equal weights on every grid offset with `|y| <= r`.
    pub fn ball(spec: &GridSpec, r: f64) -> Result<Self> {
        let (hx, hy) = (spec.hx(), spec.hy());
        let px = (r / hx).floor() as isize;
        let py = (r / hy).floor() as isize;
        let mut offsets = Vec::new();
        for dj in -py..=py {
            for di in -px..=px {
                let p = Point::new(di as f64 * hx, dj as f64 * hy);
                if p.norm() <= r * (1.0 + 1e-12) {
                    offsets.push(p);
                }
            }
        }
        let n = offsets.len();
        Self::new(offsets, vec![1.0; n])
    }

    /// About `m` equally weighted points spread evenly over the disk of
    /// radius `r` along a sunflower spiral, paired as `y, -y`. Unlike
    /// [`SampledStencil::ball`], the offsets avoid the lattice, so their
    /// projections onto any direction are distinct.
    pub fn disk(r: f64, m: usize) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) || m < 2 {
            return Err(Error::Config(format!("disk stencil needs r > 0 and m >= 2, got r = {r}, m = {m}")));
        }
        let half = m / 2;
        let golden = PI * (3.0 - 5f64.sqrt());
        let mut offsets: Vec<Point> = (0..half)
            .map(|k| {
                let rho = r * ((k as f64 + 0.5) / half as f64).sqrt();
                let t = golden * k as f64;
                Point::new(rho * t.cos(), rho * t.sin())
            })
            .collect();
        offsets.extend_from_within(..);
        Self::symmetrized(offsets, vec![1.0; 2 * half])
    }

    /// Weights `exp(-|y|^2 / (2 s^2))` on the `(2p+1)^2` grid offsets.
    pub fn discrete_gaussian(spec: &GridSpec, s: f64, p: usize) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::Config("gaussian width must be positive".into()));
        }
        let p = p as isize;
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        for dj in -p..=p {
            for di in -p..=p {
                let y = Point::new(di as f64 * spec.hx(), dj as f64 * spec.hy());
                offsets.push(y);
                weights.push((-y.dot(y) / (2.0 * s * s)).exp());
            }
        }
        Self::new(offsets, weights)
    }

    /// Samples each circle of a (scaled) circle kernel with `m` points
    /// carrying its arclength mass.
    pub fn from_circle_kernel(kernel: &CircleSumKernel, m: usize) -> Result<Self> {
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        for (c, a) in kernel.components_f64() {
            let rho = a * kernel.scale();
            let circle = Self::circle(rho, m)?;
            offsets.extend_from_slice(&circle.offsets);
            weights.extend(std::iter::repeat(c * TAU * rho / m as f64).take(m));
        }
        Self::new(offsets, weights)
    }

    fn symmetrized(mut offsets: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        // Force exact point symmetry: the second half mirrors the first.
        let m = offsets.len();
        for k in 0..m / 2 {
            offsets[k + m / 2] = Point::new(-offsets[k].x, -offsets[k].y);
        }
        Self::new(offsets, weights)
    }

    /// Rounds offsets to grid multiples and merges coincident offsets.
    pub fn snap_to_grid(&self, spec: &GridSpec) -> Result<Self> {
        let mut merged: Vec<((i64, i64), f64)> = Vec::new();
        for (p, &w) in self.offsets.iter().zip(&self.weights) {
            let key = ((p.x / spec.hx()).round() as i64, (p.y / spec.hy()).round() as i64);
            match merged.iter_mut().find(|(k, _)| *k == key) {
                Some((_, acc)) => *acc += w,
                None => merged.push((key, w)),
            }
        }
        let offsets = merged
            .iter()
            .map(|((i, j), _)| Point::new(*i as f64 * spec.hx(), *j as f64 * spec.hy()))
            .collect();
        Self::new(offsets, merged.into_iter().map(|(_, w)| w).collect())
    }

    pub fn offsets(&self) -> &[Point] {
        &self.offsets
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }
    pub fn len(&self) -> usize {
        self.offsets.len()
    }
    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn reach(&self) -> f64 {
        self.offsets.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// Integer offsets if every offset lies on the grid lattice.
    pub fn grid_offsets(&self, spec: &GridSpec) -> Option<Vec<(isize, isize)>> {
        self.offsets
            .iter()
            .map(|p| {
                let (fi, fj) = (p.x / spec.hx(), p.y / spec.hy());
                let (i, j) = (fi.round(), fj.round());
                ((fi - i).abs() < 1e-9 && (fj - j).abs() < 1e-9).then_some((i as isize, j as isize))
            })
            .collect()
    }

    /// Minimum over the grid's discrete frequencies of the stencil symbol
    /// `sum_j w_j cos(k . y_j)`: nonnegative iff the periodic convolution
    /// is positive semidefinite.
    pub fn min_symbol(&self, spec: &GridSpec) -> Result<f64> {
        let offs = self
            .grid_offsets(spec)
            .ok_or_else(|| Error::Argument("stencil is not grid aligned".into()))?;
        let (nx, ny) = (spec.nx(), spec.ny());
        let min = (0..nx * ny)
            .into_par_iter()
            .map(|k| {
                let (kx, ky) = ((k % nx) as f64 / nx as f64, (k / nx) as f64 / ny as f64);
                offs.iter()
                    .zip(&self.weights)
                    .map(|(&(i, j), &w)| w * (TAU * (kx * i as f64 + ky * j as f64)).cos())
                    .sum::<f64>()
            })
            .reduce(|| f64::INFINITY, f64::min);
        Ok(min)
    }
}

/// How the field is read at off-node sample points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Eval {
    #[default]
    Bilinear,
    /// Value of the nearest node.
    Nearest,
}

/// Value returned by the sorted-accumulation median.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MedianRule {
    /// Midpoint of the two samples bracketing half the mass when the half
    /// mass is hit exactly; the crossing sample otherwise.
    #[default]
    Midpoint,
    /// `sup { lambda : mass{phi >= lambda} >= W/2 }`, exactly.
    Sup,
}

/// Weighted median of `(value, weight)` pairs; reorders `samples`.
pub fn weighted_median_of(samples: &mut [(f64, f64)], total: f64, rule: MedianRule) -> f64 {
    samples.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let m = samples.len();
    match rule {
        MedianRule::Midpoint => {
            let mut c = 0.0;
            let mut l = 0;
            while 2.0 * c < total && l < m {
                c += samples[l].1;
                l += 1;
            }
            let l = l.max(1);
            if 2.0 * c > total {
                samples[l - 1].0
            } else {
                0.5 * (samples[l - 1].0 + samples[l.min(m - 1)].0)
            }
        }
        MedianRule::Sup => {
            // Accumulate from the top, one group of equal values at a time.
            let mut above = 0.0;
            let mut k = m;
            while k > 0 {
                let v = samples[k - 1].0;
                while k > 0 && samples[k - 1].0 == v {
                    above += samples[k - 1].1;
                    k -= 1;
                }
                if 2.0 * above >= total {
                    return v;
                }
            }
            samples[0].0
        }
    }
}

#[inline]
pub(crate) fn read(field: &ScalarField2D, fi: f64, fj: f64, eval: Eval) -> f64 {
    match eval {
        Eval::Bilinear => field.sample_index(fi, fj),
        Eval::Nearest => field.node_value(fi.round() as isize, fj.round() as isize),
    }
}

/// Weighted median of `field` over `x + stencil` (bilinear reads, midpoint
/// rule).
pub fn sampled_weighted_median(field: &ScalarField2D, x: Point, stencil: &SampledStencil) -> Result<f64> {
    sampled_weighted_median_with(field, x, stencil, Eval::Bilinear, MedianRule::Midpoint)
}

pub fn sampled_weighted_median_with(
    field: &ScalarField2D,
    x: Point,
    stencil: &SampledStencil,
    eval: Eval,
    rule: MedianRule,
) -> Result<f64> {
    if stencil.is_empty() {
        return Err(Error::Argument("empty stencil".into()));
    }
    let spec = field.spec();
    let (fi, fj) = spec.to_index(x);
    let mut samples: Vec<(f64, f64)> = stencil
        .offsets
        .iter()
        .zip(&stencil.weights)
        .map(|(y, &w)| (read(field, fi + y.x / spec.hx(), fj + y.y / spec.hy(), eval), w))
        .collect();
    Ok(weighted_median_of(&mut samples, stencil.total_weight, rule))
}

/// Tolerances of the arc-bisection median.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionParams {
    eps_arc: f64,
    eps_lambda: f64,
}

impl BisectionParams {
    pub fn new(eps_arc: f64, eps_lambda: f64) -> Result<Self> {
        if !(eps_arc > 0.0 && eps_arc <= PI / 8.0) {
            return Err(Error::Config(format!("eps_arc must lie in (0, pi/8], got {eps_arc}")));
        }
        if !(eps_lambda > 0.0 && eps_lambda.is_finite()) {
            return Err(Error::Config(format!("eps_lambda must be positive, got {eps_lambda}")));
        }
        Ok(Self { eps_arc, eps_lambda })
    }

    /// `eps_arc = 2 pi / 1000`, `eps_lambda = hx / 100`.
    pub fn default_for(spec: &GridSpec) -> Self {
        Self { eps_arc: 1e-3 * TAU, eps_lambda: spec.hx() / 100.0 }
    }

    pub fn eps_arc(&self) -> f64 {
        self.eps_arc
    }
    pub fn eps_lambda(&self) -> f64 {
        self.eps_lambda
    }
}

/// Arc measure estimate on the circle of radius `r` about `x` over
/// `[theta1, theta2]`: the full length when both endpoint values are at
/// least `lambda`, recursion on the halves when they straddle it, and 0
/// otherwise or once the arc is shorter than `eps`.
pub fn arc_integral(
    field: &ScalarField2D,
    x: Point,
    r: f64,
    lambda: f64,
    theta1: f64,
    theta2: f64,
    eps: f64,
) -> f64 {
    let spec = field.spec();
    let (fi, fj) = spec.to_index(x);
    let (rx, ry) = (r / spec.hx(), r / spec.hy());
    let at = |t: f64| {
        let (s, c) = t.sin_cos();
        field.sample_index(fi + rx * c, fj + ry * s)
    };
    fn rec(at: &dyn Fn(f64) -> f64, t1: f64, v1: f64, t2: f64, v2: f64, lambda: f64, eps: f64) -> f64 {
        let len = t2 - t1;
        if len < eps {
            return 0.0;
        }
        let (m, big) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
        if m >= lambda {
            len
        } else if lambda < big {
            let tm = 0.5 * (t1 + t2);
            let vm = at(tm);
            rec(at, t1, v1, tm, vm, lambda, eps) + rec(at, tm, vm, t2, v2, lambda, eps)
        } else {
            0.0
        }
    }
    rec(&at, theta1, at(theta1), theta2, at(theta2), lambda, eps)
}

/// Per-node cache for the arc bisection over a circle kernel.
///
/// Each circle is presampled at 64 equally spaced angles (16 per quadrant),
/// which are exactly the dyadic nodes of the first four recursion levels.
struct ArcEvaluator<'a> {
    field: &'a ScalarField2D,
    fi: f64,
    fj: f64,
    circles: &'a [CircleGeom],
    pre: Vec<f64>,
    eps: f64,
}

#[derive(Debug, Clone, Copy)]
struct CircleGeom {
    rx: f64,
    ry: f64,
    /// `c_j * rho_j`, the weight of an angular measure on this circle.
    weight: f64,
}

const PRE_PER_QUADRANT: usize = 16;
const PRE_PER_CIRCLE: usize = 4 * PRE_PER_QUADRANT;

fn pre_angles() -> &'static [(f64, f64); PRE_PER_CIRCLE + 1] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<[(f64, f64); PRE_PER_CIRCLE + 1]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [(0.0, 0.0); PRE_PER_CIRCLE + 1];
        for (k, e) in t.iter_mut().enumerate() {
            let th = FRAC_PI_2 * k as f64 / PRE_PER_QUADRANT as f64;
            *e = (th.cos(), th.sin());
        }
        t
    })
}

impl<'a> ArcEvaluator<'a> {
    fn new(field: &'a ScalarField2D, fi: f64, fj: f64, circles: &'a [CircleGeom], eps: f64) -> Self {
        let table = pre_angles();
        let mut pre = Vec::with_capacity(circles.len() * (PRE_PER_CIRCLE + 1));
        for c in circles {
            for &(cos, sin) in table.iter() {
                pre.push(field.sample_index(fi + c.rx * cos, fj + c.ry * sin));
            }
        }
        Self { field, fi, fj, circles, pre, eps }
    }

    fn bracket(&self) -> (f64, f64) {
        self.pre.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    #[inline]
    fn eval(&self, c: usize, theta: f64) -> f64 {
        let g = self.circles[c];
        let (s, co) = theta.sin_cos();
        self.field.sample_index(self.fi + g.rx * co, self.fj + g.ry * s)
    }

    /// Weighted angular measure `sum_j c_j rho_j sum_q I`.
    fn weighted_measure(&self, lambda: f64) -> f64 {
        let mut total = 0.0;
        let base_len = FRAC_PI_2 / PRE_PER_QUADRANT as f64;
        for (c, g) in self.circles.iter().enumerate() {
            let row = &self.pre[c * (PRE_PER_CIRCLE + 1)..(c + 1) * (PRE_PER_CIRCLE + 1)];
            let mut s = 0.0;
            for q in 0..4 {
                let lo = q * PRE_PER_QUADRANT;
                let hi = lo + PRE_PER_QUADRANT;
                s += self.rec_pre(c, row, lo, hi, base_len, lambda);
            }
            total += g.weight * s;
        }
        total
    }

    /// Recursion while both ends are presampled angles.
    fn rec_pre(&self, c: usize, row: &[f64], lo: usize, hi: usize, base_len: f64, lambda: f64) -> f64 {
        let len = (hi - lo) as f64 * base_len;
        if len < self.eps {
            return 0.0;
        }
        let (v1, v2) = (row[lo], row[hi]);
        let (m, big) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
        if m >= lambda {
            len
        } else if lambda < big {
            if hi - lo >= 2 {
                let mid = (lo + hi) / 2;
                self.rec_pre(c, row, lo, mid, base_len, lambda) + self.rec_pre(c, row, mid, hi, base_len, lambda)
            } else {
                let t1 = lo as f64 * base_len;
                let t2 = hi as f64 * base_len;
                let tm = 0.5 * (t1 + t2);
                let vm = self.eval(c, tm);
                self.rec(c, t1, v1, tm, vm, lambda) + self.rec(c, tm, vm, t2, v2, lambda)
            }
        } else {
            0.0
        }
    }

    fn rec(&self, c: usize, t1: f64, v1: f64, t2: f64, v2: f64, lambda: f64) -> f64 {
        let len = t2 - t1;
        if len < self.eps {
            return 0.0;
        }
        let (m, big) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
        if m >= lambda {
            len
        } else if lambda < big {
            let tm = 0.5 * (t1 + t2);
            let vm = self.eval(c, tm);
            self.rec(c, t1, v1, tm, vm, lambda) + self.rec(c, tm, vm, t2, v2, lambda)
        } else {
            0.0
        }
    }
}

fn circle_geometry(spec: &GridSpec, kernel: &CircleSumKernel) -> (Vec<CircleGeom>, f64) {
    let mut circles = Vec::new();
    let mut total = 0.0;
    for (c, a) in kernel.components_f64() {
        let rho = a * kernel.scale();
        circles.push(CircleGeom { rx: rho / spec.hx(), ry: rho / spec.hy(), weight: c * rho });
        total += c * rho * TAU;
    }
    (circles, total)
}

/// Estimate of the kernel-weighted fraction of the circles where
/// `field >= lambda`.
pub fn approx_psi(
    field: &ScalarField2D,
    x: Point,
    kernel: &CircleSumKernel,
    lambda: f64,
    params: &BisectionParams,
) -> f64 {
    let spec = field.spec();
    let (circles, total) = circle_geometry(spec, kernel);
    let (fi, fj) = spec.to_index(x);
    let ev = ArcEvaluator::new(field, fi, fj, &circles, params.eps_arc);
    ev.weighted_measure(lambda) / total
}

fn bisect_node(ev: &ArcEvaluator<'_>, total: f64, eps_lambda: f64) -> f64 {
    let (mut lo, hi0) = ev.bracket();
    // psi(lo) = 1 since every quadrant endpoint is >= lo; psi(hi) = 0.
    let mut hi = hi0 + eps_lambda;
    while hi - lo > eps_lambda {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if 2.0 * ev.weighted_measure(mid) >= total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `sup { lambda : approx_psi(lambda) >= 1/2 }` to within `eps_lambda`.
pub fn bisection_median(
    field: &ScalarField2D,
    x: Point,
    kernel: &CircleSumKernel,
    params: &BisectionParams,
) -> f64 {
    let spec = field.spec();
    let (circles, total) = circle_geometry(spec, kernel);
    let (fi, fj) = spec.to_index(x);
    let ev = ArcEvaluator::new(field, fi, fj, &circles, params.eps_arc);
    bisect_node(&ev, total, params.eps_lambda)
}

/// Jacobi update or the two half-step (grow then shrink) update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Jacobi,
    TwoStep,
}

/// How the median at each node is computed.
#[derive(Debug, Clone)]
pub enum MedianMethod {
    /// Arc-bisection median over a scaled circle kernel.
    Bisection { kernel: CircleSumKernel, params: BisectionParams },
    /// Sort-based median over a sampled stencil.
    Sampled { stencil: SampledStencil, eval: Eval, rule: MedianRule },
}

impl MedianMethod {
    pub fn reach(&self) -> f64 {
        match self {
            MedianMethod::Bisection { kernel, .. } => kernel.max_radius(),
            MedianMethod::Sampled { stencil, .. } => stencil.reach(),
        }
    }
}

/// A complete two-phase update rule.
#[derive(Debug, Clone)]
pub struct MedianScheme {
    pub method: MedianMethod,
    pub variant: Variant,
    /// Clamp the field to `[-band, band]` and skip nodes whose whole
    /// stencil is clamped to one value.
    pub band: Option<f64>,
}

impl MedianScheme {
    pub fn new(method: MedianMethod, variant: Variant) -> Self {
        Self { method, variant, band: None }
    }

    pub fn with_band(mut self, band: f64) -> Self {
        self.band = Some(band);
        self
    }

    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        let reach = self.method.reach();
        if reach > 0.5 * spec.lx().min(spec.ly()) {
            return Err(Error::Config(format!(
                "kernel radius {reach} exceeds half the domain size"
            )));
        }
        if let Some(b) = self.band {
            if !(b > 0.0) {
                return Err(Error::Config("band width must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn step(&self, field: &ScalarField2D) -> Result<ScalarField2D> {
        self.validate(field.spec())?;
        let field = match self.band {
            Some(b) => field.map(|v| v.clamp(-b, b)),
            None => field.clone(),
        };
        match self.variant {
            Variant::Jacobi => Ok(self.apply(&field)),
            Variant::TwoStep => {
                let m = self.apply(&field);
                let half = field.zip_map(&m, f64::max)?;
                let m2 = self.apply(&half);
                half.zip_map(&m2, f64::min)
            }
        }
    }

    pub fn run(&self, field: &ScalarField2D, steps: usize) -> Result<ScalarField2D> {
        let mut f = field.clone();
        for _ in 0..steps {
            f = self.step(&f)?;
        }
        Ok(f)
    }

    /// Median of every node of `field` (one Jacobi sweep).
    fn apply(&self, field: &ScalarField2D) -> ScalarField2D {
        let spec = *field.spec();
        let skip = self
            .band
            .map(|b| clamped_plateau(field, b, self.method.reach()));
        let nx = spec.nx();
        let mut out = vec![0.0; spec.len()];
        match &self.method {
            MedianMethod::Bisection { kernel, params } => {
                let (circles, total) = circle_geometry(&spec, kernel);
                out.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
                    for (i, o) in row.iter_mut().enumerate() {
                        let k = j * nx + i;
                        if let Some(s) = &skip {
                            if s[k] {
                                *o = field.values()[k];
                                continue;
                            }
                        }
                        let ev = ArcEvaluator::new(field, i as f64, j as f64, &circles, params.eps_arc);
                        if let Some(b) = self.band {
                            // Values are clamped to [-b, b], so psi vanishes above b.
                            if 2.0 * ev.weighted_measure(b) >= total {
                                *o = b;
                                continue;
                            }
                            if 2.0 * ev.weighted_measure(-b + params.eps_lambda) < total {
                                *o = -b;
                                continue;
                            }
                        }
                        *o = bisect_node(&ev, total, params.eps_lambda);
                    }
                });
            }
            MedianMethod::Sampled { stencil, eval, rule } => {
                let offs: Vec<(f64, f64)> = stencil
                    .offsets()
                    .iter()
                    .map(|y| (y.x / spec.hx(), y.y / spec.hy()))
                    .collect();
                out.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
                    let mut buf = Vec::with_capacity(offs.len());
                    for (i, o) in row.iter_mut().enumerate() {
                        let k = j * nx + i;
                        if let Some(s) = &skip {
                            if s[k] {
                                *o = field.values()[k];
                                continue;
                            }
                        }
                        buf.clear();
                        for (&(di, dj), &w) in offs.iter().zip(stencil.weights()) {
                            buf.push((read(field, i as f64 + di, j as f64 + dj, *eval), w));
                        }
                        *o = weighted_median_of(&mut buf, stencil.total_weight(), *rule);
                    }
                });
            }
        }
        ScalarField2D::new(spec, out).expect("median of finite samples is finite")
    }
}

/// Marks nodes whose `reach` neighborhood (plus one cell) holds only values
/// clamped to the same bound `+b` or `-b`.
pub(crate) fn clamped_plateau(field: &ScalarField2D, b: f64, reach: f64) -> Vec<bool> {
    let spec = field.spec();
    let rx = (reach / spec.hx()).ceil() as isize + 1;
    let ry = (reach / spec.hy()).ceil() as isize + 1;
    let not_top: Vec<u32> = field.values().iter().map(|&v| (v < b) as u32).collect();
    let not_bottom: Vec<u32> = field.values().iter().map(|&v| (v > -b) as u32).collect();
    let a = box_sum(spec, &not_top, rx, ry);
    let c = box_sum(spec, &not_bottom, rx, ry);
    a.iter().zip(&c).map(|(&x, &y)| x == 0 || y == 0).collect()
}

/// Sum over the `(2rx+1) x (2ry+1)` box, indices resolved by the boundary rule.
pub(crate) fn box_sum(spec: &GridSpec, v: &[u32], rx: isize, ry: isize) -> Vec<u32> {
    let (nx, ny) = (spec.nx(), spec.ny());
    let bnd = spec.boundary();
    let mut rows = vec![0u32; nx * ny];
    rows.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
        let src = &v[j * nx..(j + 1) * nx];
        let mut acc: u32 = (-rx..=rx).map(|d| src[bnd.map_index(d, nx)]).sum();
        for (i, o) in row.iter_mut().enumerate() {
            *o = acc;
            let ii = i as isize;
            acc += src[bnd.map_index(ii + rx + 1, nx)];
            acc -= src[bnd.map_index(ii - rx, nx)];
        }
    });
    let mut out = vec![0u32; nx * ny];
    out.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
        let jj = j as isize;
        for d in -ry..=ry {
            let src = &rows[bnd.map_index(jj + d, ny) * nx..][..nx];
            for (o, s) in row.iter_mut().zip(src) {
                *o += s;
            }
        }
    });
    out
}

/// One step of the circle-kernel median scheme with the kernel scaled so
/// that the interface moves by curvature over time `dt`
/// (`r = sqrt(2 dt)` for kernels with `Gamma(2) / (2 Gamma(0)) = 1/2`).
pub fn step_median(
    field: &ScalarField2D,
    kernel: &CircleSumKernel,
    dt: f64,
    params: &BisectionParams,
    variant: Variant,
) -> Result<ScalarField2D> {
    let kernel = scaled_kernel(kernel, dt)?;
    MedianScheme::new(MedianMethod::Bisection { kernel, params: *params }, variant).step(field)
}

/// Scales `kernel` for time step `dt`: `r = sqrt(dt / coefficient)`.
pub fn scaled_kernel(kernel: &CircleSumKernel, dt: f64) -> Result<CircleSumKernel> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let coef = crate::kernels::rational_f64(&kernel.time_coefficient());
    kernel.clone().with_scale((dt / coef).sqrt())
}
