//! Uniform 2D grids, scalar fields sampled on them, and the geometric
//! plumbing around them: bilinear evaluation, shape initialization,
//! marching-squares contours, Hausdorff distances and Lipschitz quotients.
//!
//! Nodes are cell centered: node `(i, j)` sits at
//! `((i + 1/2) hx, (j + 1/2) hy)` inside the domain `[0, lx) x [0, ly)`.
//! Values are stored row-major, `values[j * nx + i]`.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn dist(self, other: Point) -> f64 {
        (self - other).norm()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Treatment of samples requested outside `[0, lx) x [0, ly)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// The domain is a torus.
    #[default]
    Periodic,
    /// Edge values are replicated outward.
    Clamped,
    /// Even reflection about the domain edges (zero normal derivative).
    Reflect,
}

impl Boundary {
    /// Maps an integer node index onto `0..n`.
    #[inline]
    pub fn map_index(self, i: isize, n: usize) -> usize {
        let n_i = n as isize;
        match self {
            Boundary::Periodic => i.rem_euclid(n_i) as usize,
            Boundary::Clamped => i.clamp(0, n_i - 1) as usize,
            Boundary::Reflect => {
                let m = i.rem_euclid(2 * n_i);
                if m < n_i {
                    m as usize
                } else {
                    (2 * n_i - 1 - m) as usize
                }
            }
        }
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Periodic => "periodic",
            Boundary::Clamped => "clamped",
            Boundary::Reflect => "reflect",
        })
    }
}

impl FromStr for Boundary {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "periodic" => Ok(Boundary::Periodic),
            "clamped" => Ok(Boundary::Clamped),
            "reflect" => Ok(Boundary::Reflect),
            _ => Err(Error::Parse(format!("unknown boundary `{s}`"))),
        }
    }
}

/// Shape of a uniform grid. Cell sizes are always derived from the counts
/// and side lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    boundary: Boundary,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64, boundary: Boundary) -> Result<Self> {
        if nx < 4 || ny < 4 {
            return Err(Error::Config(format!("grid needs at least 4x4 cells, got {nx}x{ny}")));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::Config(format!("side lengths must be positive, got {lx}x{ly}")));
        }
        Ok(Self { nx, ny, lx, ly, boundary })
    }

    /// `n x n` periodic grid on the unit torus.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0, Boundary::Periodic)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn boundary(&self) -> Boundary {
        self.boundary
    }
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn node(&self, i: usize, j: usize) -> Point {
        Point::new((i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy())
    }

    /// Physical point to fractional index coordinates.
    #[inline]
    pub fn to_index(&self, p: Point) -> (f64, f64) {
        (p.x / self.hx() - 0.5, p.y / self.hy() - 0.5)
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.lx).contains(&p.x) && (0.0..=self.ly).contains(&p.y)
    }
}

/// A real-valued field sampled at the nodes of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarField2D {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::Argument(format!(
                "expected {} samples, got {}",
                spec.len(),
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite sample at flat index {k}")));
        }
        Ok(Self { spec, values })
    }

    pub fn constant(spec: GridSpec, c: f64) -> Self {
        Self { spec, values: vec![c; spec.len()] }
    }

    /// Samples `f` at every node position.
    pub fn from_fn(spec: GridSpec, f: impl Fn(Point) -> f64) -> Self {
        let mut values = Vec::with_capacity(spec.len());
        for j in 0..spec.ny() {
            for i in 0..spec.nx() {
                values.push(f(spec.node(i, j)));
            }
        }
        Self { spec, values }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.spec.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.spec.index(i, j);
        self.values[k] = v;
    }

    /// Node value at a possibly out-of-range integer index, resolved through
    /// the boundary rule.
    #[inline]
    pub fn node_value(&self, i: isize, j: isize) -> f64 {
        let nx = self.spec.nx;
        let ny = self.spec.ny;
        if i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny {
            return self.values[j as usize * nx + i as usize];
        }
        let b = self.spec.boundary;
        self.values[b.map_index(j, ny) * nx + b.map_index(i, nx)]
    }

    /// Bilinear interpolation at fractional index coordinates. Never fails:
    /// the boundary rule resolves every index.
    #[inline]
    pub fn sample_index(&self, fi: f64, fj: f64) -> f64 {
        let i0f = fi.floor();
        let j0f = fj.floor();
        let tx = fi - i0f;
        let ty = fj - j0f;
        let i0 = i0f as isize;
        let j0 = j0f as isize;
        let nx = self.spec.nx;
        let (v00, v10, v01, v11) = if i0 >= 0
            && j0 >= 0
            && ((i0 + 1) as usize) < nx
            && ((j0 + 1) as usize) < self.spec.ny
        {
            let k = j0 as usize * nx + i0 as usize;
            (self.values[k], self.values[k + 1], self.values[k + nx], self.values[k + nx + 1])
        } else {
            (
                self.node_value(i0, j0),
                self.node_value(i0 + 1, j0),
                self.node_value(i0, j0 + 1),
                self.node_value(i0 + 1, j0 + 1),
            )
        };
        let a = v00 + tx * (v10 - v00);
        let b = v01 + tx * (v11 - v01);
        a + ty * (b - a)
    }

    /// Bilinear interpolant at a physical point. Periodic grids wrap any
    /// point; clamped and reflecting grids reject points outside the domain.
    pub fn eval_bilinear(&self, p: Point) -> Result<f64> {
        if self.spec.boundary != Boundary::Periodic && !self.spec.contains(p) {
            return Err(Error::Domain(format!(
                "point ({}, {}) outside [0, {}] x [0, {}]",
                p.x, p.y, self.spec.lx, self.spec.ly
            )));
        }
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::Domain("non-finite evaluation point".into()));
        }
        let (fi, fj) = self.spec.to_index(p);
        Ok(self.sample_index(fi, fj))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { spec: self.spec, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.spec != other.spec {
            return Err(Error::Argument("fields live on different grids".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { spec: self.spec, values })
    }

    /// Largest nodewise absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// An ordered list of vertices, optionally closed.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontPolyline {
    points: Vec<Point>,
    closed: bool,
}

impl FrontPolyline {
    pub fn new(points: Vec<Point>, closed: bool) -> Result<Self> {
        if closed && points.len() < 3 {
            return Err(Error::Argument("closed polyline needs at least 3 vertices".into()));
        }
        if points.len() < 2 {
            return Err(Error::Argument("polyline needs at least 2 vertices".into()));
        }
        if points.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("consecutive polyline vertices coincide".into()));
        }
        Ok(Self { points, closed })
    }

    /// Regular polygon inscribed in a circle.
    pub fn circle(center: Point, radius: f64, n: usize) -> Self {
        let points = (0..n)
            .map(|k| {
                let t = TAU * k as f64 / n as f64;
                center + Point::new(t.cos(), t.sin()) * radius
            })
            .collect();
        Self { points, closed: true }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }
    pub fn is_closed(&self) -> bool {
        self.closed
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Segments, including the closing one for closed curves.
    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.points.len();
        let count = if self.closed { n } else { n - 1 };
        (0..count).map(move |k| (self.points[k], self.points[(k + 1) % n]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| a.dist(b)).sum()
    }

    pub fn translate(&self, d: Point) -> Self {
        Self { points: self.points.iter().map(|&p| p + d).collect(), closed: self.closed }
    }

    /// Inserts vertices so that no segment is longer than `spacing`.
    /// Original vertices are kept.
    pub fn densify(&self, spacing: f64) -> Vec<Point> {
        let mut out = Vec::with_capacity(self.points.len());
        for (a, b) in self.segments() {
            let pieces = ((a.dist(b) / spacing).ceil() as usize).max(1);
            for k in 0..pieces {
                let t = k as f64 / pieces as f64;
                out.push(a + (b - a) * t);
            }
        }
        if !self.closed {
            out.push(*self.points.last().expect("non-empty"));
        }
        out
    }
}

#[inline]
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a + ab * t)
}

/// Bucket grid over a set of segments answering exact nearest-segment
/// distance queries.
#[derive(Debug, Clone)]
pub struct SegmentLocator {
    segments: Vec<(Point, Point)>,
    origin: Point,
    cell: f64,
    nbx: usize,
    nby: usize,
    buckets: Vec<Vec<u32>>,
}

impl SegmentLocator {
    pub fn new(segments: Vec<(Point, Point)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Argument("no segments to locate".into()));
        }
        let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        let mut total = 0.0;
        for &(a, b) in &segments {
            for p in [a, b] {
                lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
                hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
            }
            total += a.dist(b);
        }
        let extent = (hi.x - lo.x).max(hi.y - lo.y).max(1e-12);
        let mean = total / segments.len() as f64;
        // About sqrt(n) buckets per side keeps both near and far queries cheap.
        let per_side = (segments.len() as f64).sqrt().clamp(1.0, 512.0);
        let cell = (2.0 * mean).max(extent / per_side).max(1e-12);
        let nbx = (((hi.x - lo.x) / cell).floor() as usize + 1).max(1);
        let nby = (((hi.y - lo.y) / cell).floor() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nbx * nby];
        for (k, &(a, b)) in segments.iter().enumerate() {
            let bx0 = ((a.x.min(b.x) - lo.x) / cell).floor() as usize;
            let bx1 = (((a.x.max(b.x) - lo.x) / cell).floor() as usize).min(nbx - 1);
            let by0 = ((a.y.min(b.y) - lo.y) / cell).floor() as usize;
            let by1 = (((a.y.max(b.y) - lo.y) / cell).floor() as usize).min(nby - 1);
            for by in by0.min(nby - 1)..=by1 {
                for bx in bx0.min(nbx - 1)..=bx1 {
                    buckets[by * nbx + bx].push(k as u32);
                }
            }
        }
        Ok(Self { segments, origin: lo, cell, nbx, nby, buckets })
    }

    pub fn from_polylines(lines: &[FrontPolyline]) -> Result<Self> {
        Self::new(lines.iter().flat_map(|l| l.segments()).collect())
    }

    /// Exact distance from `p` to the nearest segment.
    pub fn distance(&self, p: Point) -> f64 {
        let cx = ((p.x - self.origin.x) / self.cell).floor() as isize;
        let cy = ((p.y - self.origin.y) / self.cell).floor() as isize;
        let nbx = self.nbx as isize;
        let nby = self.nby as isize;
        // Chebyshev distance from the query bucket to the bucket grid.
        let gap_x = if cx < 0 { -cx } else if cx >= nbx { cx - nbx + 1 } else { 0 };
        let gap_y = if cy < 0 { -cy } else if cy >= nby { cy - nby + 1 } else { 0 };
        let start = gap_x.max(gap_y);
        let max_ring = start + nbx.max(nby) + 1;
        let mut best = f64::INFINITY;
        let mut ring = start;
        while ring <= max_ring {
            let mut visit = |bx: isize, by: isize| {
                if bx < 0 || by < 0 || bx >= nbx || by >= nby {
                    return;
                }
                for &k in &self.buckets[(by * nbx + bx) as usize] {
                    let (a, b) = self.segments[k as usize];
                    let d = point_segment_distance(p, a, b);
                    if d < best {
                        best = d;
                    }
                }
            };
            if ring == 0 {
                visit(cx, cy);
            } else {
                for bx in (cx - ring)..=(cx + ring) {
                    visit(bx, cy - ring);
                    visit(bx, cy + ring);
                }
                for by in (cy - ring + 1)..=(cy + ring - 1) {
                    visit(cx - ring, by);
                    visit(cx + ring, by);
                }
            }
            if best <= ring as f64 * self.cell {
                break;
            }
            ring += 1;
        }
        best
    }
}

/// Initial interface shapes.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Circle { center: Point, radius: f64 },
    /// Axis-aligned ellipse with semi-axes `a` (x) and `b` (y).
    Ellipse { center: Point, a: f64, b: f64 },
    /// Star-shaped curve `r(theta) = r0 + amp cos(petals theta)`.
    Flower { center: Point, r0: f64, amp: f64, petals: u32 },
    /// `{ p : normal . p <= offset }`, normal normalized internally.
    HalfPlane { normal: Point, offset: f64 },
}

impl Shape {
    fn bounding_radius(&self) -> Option<(Point, f64, f64)> {
        match *self {
            Shape::Circle { center, radius } => Some((center, radius, radius)),
            Shape::Ellipse { center, a, b } => Some((center, a, b)),
            Shape::Flower { center, r0, amp, .. } => Some((center, r0 + amp.abs(), r0 + amp.abs())),
            Shape::HalfPlane { .. } => None,
        }
    }

    /// Dense closed polygon tracing the shape boundary (counter-clockwise).
    /// Half-planes have no closed boundary and return `None`.
    pub fn boundary_polyline(&self, n: usize) -> Option<FrontPolyline> {
        let pts: Vec<Point> = match *self {
            Shape::Circle { center, radius } => return Some(FrontPolyline::circle(center, radius, n)),
            Shape::Ellipse { center, a, b } => (0..n)
                .map(|k| {
                    let t = TAU * k as f64 / n as f64;
                    center + Point::new(a * t.cos(), b * t.sin())
                })
                .collect(),
            Shape::Flower { center, r0, amp, petals } => (0..n)
                .map(|k| {
                    let t = TAU * k as f64 / n as f64;
                    let r = r0 + amp * (petals as f64 * t).cos();
                    center + Point::new(t.cos(), t.sin()) * r
                })
                .collect(),
            Shape::HalfPlane { .. } => return None,
        };
        Some(FrontPolyline { points: pts, closed: true })
    }
}

/// Approximate signed distance function of `shape`: positive inside,
/// negative outside.
pub fn init_shape(spec: &GridSpec, shape: &Shape) -> Result<ScalarField2D> {
    if let Some((c, rx, ry)) = shape.bounding_radius() {
        if !(rx > 0.0 && ry > 0.0) {
            return Err(Error::Config(format!("degenerate shape {shape:?}")));
        }
        if c.x - rx <= 0.0 || c.x + rx >= spec.lx() || c.y - ry <= 0.0 || c.y + ry >= spec.ly() {
            return Err(Error::Config(format!("shape {shape:?} touches the domain boundary")));
        }
    }
    match *shape {
        Shape::Circle { center, radius } => {
            Ok(ScalarField2D::from_fn(*spec, |p| radius - p.dist(center)))
        }
        Shape::Ellipse { center, a, b } => Ok(ScalarField2D::from_fn(*spec, |p| {
            let q = p - center;
            let d = ellipse_distance(a, b, q.x.abs(), q.y.abs());
            if (q.x / a).powi(2) + (q.y / b).powi(2) < 1.0 {
                d
            } else {
                -d
            }
        })),
        Shape::Flower { center, r0, amp, petals } => {
            if amp == 0.0 {
                return init_shape(spec, &Shape::Circle { center, radius: r0 });
            }
            if amp.abs() >= r0 {
                return Err(Error::Config("flower amplitude must be below r0".into()));
            }
            let h = spec.hx().min(spec.hy());
            let perimeter = TAU * (r0 + amp.abs()) * (1.0 + petals as f64 * amp.abs() / r0);
            let n = ((8.0 * perimeter / h).ceil() as usize).max(8192);
            let poly = shape.boundary_polyline(n).expect("closed shape");
            let petals = petals as f64;
            signed_distance(spec, &[poly], |p| {
                let q = p - center;
                q.norm() < r0 + amp * (petals * q.y.atan2(q.x)).cos()
            })
        }
        Shape::HalfPlane { normal, offset } => {
            let len = normal.norm();
            if len == 0.0 {
                return Err(Error::Config("half-plane normal is zero".into()));
            }
            let n = normal * (1.0 / len);
            let off = offset / len;
            Ok(ScalarField2D::from_fn(*spec, |p| off - n.dot(p)))
        }
    }
}

/// Signed distance to the union of `boundary` polylines, positive where
/// `inside` holds.
pub fn signed_distance(
    spec: &GridSpec,
    boundary: &[FrontPolyline],
    inside: impl Fn(Point) -> bool + Sync,
) -> Result<ScalarField2D> {
    use rayon::prelude::*;
    let locator = SegmentLocator::from_polylines(boundary)?;
    let nx = spec.nx();
    let values: Vec<f64> = (0..spec.len())
        .into_par_iter()
        .map(|k| {
            let p = spec.node(k % nx, k / nx);
            let d = locator.distance(p);
            if inside(p) {
                d
            } else {
                -d
            }
        })
        .collect();
    ScalarField2D::new(*spec, values)
}

/// Distance from `(y0, y1)` (first quadrant) to the ellipse with semi-axes
/// `a`, `b`, by bisection on the Lagrange multiplier.
fn ellipse_distance(a: f64, b: f64, y0: f64, y1: f64) -> f64 {
    if a < b {
        return ellipse_distance(b, a, y1, y0);
    }
    let (e0, e1) = (a, b);
    if y1 > 0.0 {
        if y0 > 0.0 {
            let z0 = y0 / e0;
            let z1 = y1 / e1;
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g == 0.0 {
                return 0.0;
            }
            let r0 = (e0 / e1) * (e0 / e1);
            let s = ellipse_root(r0, z0, z1, g);
            let x0 = r0 * y0 / (s + r0);
            let x1 = y1 / (s + 1.0);
            (x0 - y0).hypot(x1 - y1)
        } else {
            (y1 - e1).abs()
        }
    } else {
        let numer = e0 * y0;
        let denom = e0 * e0 - e1 * e1;
        if numer < denom {
            let xde = numer / denom;
            let x0 = e0 * xde;
            let x1 = e1 * (1.0 - xde * xde).sqrt();
            (x0 - y0).hypot(x1)
        } else {
            (y0 - e0).abs()
        }
    }
}

fn ellipse_root(r0: f64, z0: f64, z1: f64, g: f64) -> f64 {
    let n0 = r0 * z0;
    let mut s0 = z1 - 1.0;
    let mut s1 = if g < 0.0 { 0.0 } else { n0.hypot(z1) - 1.0 };
    let mut s = 0.0;
    for _ in 0..1100 {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let ratio0 = n0 / (s + r0);
        let ratio1 = z1 / (s + 1.0);
        let gs = ratio0 * ratio0 + ratio1 * ratio1 - 1.0;
        if gs > 0.0 {
            s0 = s;
        } else if gs < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

/// Marching-squares polylines of `{ field = level }`.
///
/// Corners with `value >= level` count as inside. Saddle cells are resolved
/// by the sign of the cell-center (bilinear) value. Only cells between
/// in-range nodes are traced; periodic seams are not crossed.
pub fn extract_contour(field: &ScalarField2D, level: f64) -> Vec<FrontPolyline> {
    let spec = field.spec();
    let (nx, ny) = (spec.nx(), spec.ny());
    let (hx, hy) = (spec.hx(), spec.hy());

    // Edge keys: 0 = horizontal edge from node (i,j) to (i+1,j),
    // 1 = vertical edge from (i,j) to (i,j+1).
    type EdgeKey = (u8, usize, usize);
    let crossing = |key: EdgeKey| -> Point {
        let (kind, i, j) = key;
        let (i1, j1) = if kind == 0 { (i + 1, j) } else { (i, j + 1) };
        let a = field.get(i, j);
        let b = field.get(i1, j1);
        let t = ((level - a) / (b - a)).clamp(0.0, 1.0);
        let pa = spec.node(i, j);
        let pb = spec.node(i1, j1);
        let _ = (hx, hy);
        pa + (pb - pa) * t
    };

    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let v = [field.get(i, j), field.get(i + 1, j), field.get(i + 1, j + 1), field.get(i, j + 1)];
            let inside = v.map(|x| x >= level);
            let code = inside.iter().enumerate().fold(0u8, |acc, (k, &b)| acc | ((b as u8) << k));
            if code == 0 || code == 15 {
                continue;
            }
            // Cell edges: bottom, right, top, left.
            let bottom = (0u8, i, j);
            let right = (1u8, i + 1, j);
            let top = (0u8, i, j + 1);
            let left = (1u8, i, j);
            let center_inside = 0.25 * (v[0] + v[1] + v[2] + v[3]) >= level;
            match code {
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((right, top)),
                6 | 9 => segments.push((bottom, top)),
                7 | 8 => segments.push((left, top)),
                5 => {
                    // corners 0 and 2 inside
                    if center_inside {
                        segments.push((left, top));
                        segments.push((bottom, right));
                    } else {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    }
                }
                10 => {
                    // corners 1 and 3 inside
                    if center_inside {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    } else {
                        segments.push((bottom, right));
                        segments.push((left, top));
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    let mut incident: HashMap<EdgeKey, Vec<usize>> = HashMap::with_capacity(segments.len() * 2);
    for (s, &(a, b)) in segments.iter().enumerate() {
        incident.entry(a).or_default().push(s);
        incident.entry(b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();

    let walk = |start_seg: usize, from: EdgeKey, used: &mut Vec<bool>| -> (Vec<EdgeKey>, bool) {
        let mut chain = vec![from];
        let mut seg = start_seg;
        let mut cur = from;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == cur { b } else { a };
            chain.push(next);
            if next == from {
                return (chain, true);
            }
            let nxt = incident[&next].iter().copied().find(|&s| !used[s]);
            match nxt {
                Some(s) => {
                    seg = s;
                    cur = next;
                }
                None => return (chain, false),
            }
        }
    };

    // Open chains first, starting from edges with a single incident segment.
    let mut starts: Vec<EdgeKey> =
        incident.iter().filter(|(_, v)| v.len() == 1).map(|(k, _)| *k).collect();
    starts.sort_unstable();
    for key in starts {
        let s = incident[&key][0];
        if used[s] {
            continue;
        }
        let (chain, _) = walk(s, key, &mut used);
        if let Some(poly) = chain_to_polyline(chain.iter().map(|&k| crossing(k)).collect(), false) {
            out.push(poly);
        }
    }
    for s in 0..segments.len() {
        if used[s] {
            continue;
        }
        let from = segments[s].0;
        let (mut chain, closed) = walk(s, from, &mut used);
        if closed {
            chain.pop();
        }
        if let Some(poly) = chain_to_polyline(chain.iter().map(|&k| crossing(k)).collect(), closed) {
            out.push(poly);
        }
    }
    out
}

fn chain_to_polyline(mut pts: Vec<Point>, closed: bool) -> Option<FrontPolyline> {
    pts.dedup();
    if closed && pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    let needed = if closed { 3 } else { 2 };
    if pts.len() < needed {
        return None;
    }
    Some(FrontPolyline { points: pts, closed })
}

/// Symmetric Hausdorff distance between two sets of polylines.
///
/// The vertices of each side are densified (spacing a quarter of the
/// smaller mean segment length) and measured against the exact segments of
/// the other side.
pub fn hausdorff_distance(a: &[FrontPolyline], b: &[FrontPolyline]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("hausdorff distance of an empty polyline set".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    let mean = |set: &[FrontPolyline]| {
        let (len, n) = set
            .iter()
            .fold((0.0, 0usize), |(l, n), p| (l + p.length(), n + p.segments().count()));
        len / n.max(1) as f64
    };
    let spacing = 0.25 * mean(a).min(mean(b));
    let spacing = if spacing > 0.0 { spacing } else { f64::INFINITY };
    Ok(directed_hausdorff(a, b, spacing)?.max(directed_hausdorff(b, a, spacing)?))
}

fn directed_hausdorff(from: &[FrontPolyline], to: &[FrontPolyline], spacing: f64) -> Result<f64> {
    use rayon::prelude::*;
    let locator = SegmentLocator::from_polylines(to)?;
    let pts: Vec<Point> = from.iter().flat_map(|p| p.densify(spacing)).collect();
    Ok(pts.par_iter().map(|&p| locator.distance(p)).reduce(|| 0.0, f64::max))
}

/// Largest difference quotient over axis-adjacent and diagonal node pairs
/// (pairs are not wrapped across periodic seams).
pub fn lipschitz_quotient(field: &ScalarField2D) -> f64 {
    let spec = field.spec();
    let (hx, hy) = (spec.hx(), spec.hy());
    let hd = hx.hypot(hy);
    let mut best: f64 = 0.0;
    for j in 0..spec.ny() {
        for i in 0..spec.nx() {
            let v = field.get(i, j);
            if i + 1 < spec.nx() {
                best = best.max((field.get(i + 1, j) - v).abs() / hx);
            }
            if j + 1 < spec.ny() {
                best = best.max((field.get(i, j + 1) - v).abs() / hy);
                if i + 1 < spec.nx() {
                    best = best.max((field.get(i + 1, j + 1) - v).abs() / hd);
                    best = best.max((field.get(i, j + 1) - field.get(i + 1, j)).abs() / hd);
                }
            }
        }
    }
    best
}
