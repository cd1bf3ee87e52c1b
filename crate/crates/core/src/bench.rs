//! Reference solutions and convergence ladders.
//!
//! Closed curves are compared against a finely resolved front-tracking
//! solution, the shrinking circle against its closed form, and the
//! triple-junction grim reaper against its translating profile.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{field_energy, monitor, EnergyReport};
use crate::error::{Error, Result};
use crate::grid::{
    extract_contour, hausdorff_distance, init_shape, lipschitz_quotient, signed_distance, Boundary, FrontPolyline,
    GridSpec, Point, ScalarField2D, Shape,
};
use crate::kernels::{ball_time_coefficient, CircleSumKernel};
use crate::median2p::{
    scaled_kernel, BisectionParams, Eval, MedianMethod, MedianRule, MedianScheme, SampledStencil, Variant,
};
use crate::multiphase::{PhaseSystem, RingBall, RingMultiphaseScheme, SurfaceTensionMatrix};
use crate::tdyn::{spanning_levels, stacked_td};

/// Radius at time `t` of a circle of radius `r0` moving by curvature.
pub fn exact_circle_radius(r0: f64, t: f64) -> Result<f64> {
    if !(r0 > 0.0) || t < 0.0 {
        return Err(Error::Domain(format!("need r0 > 0 and t >= 0, got r0 = {r0}, t = {t}")));
    }
    let s = r0 * r0 - 2.0 * t;
    if s < 0.0 {
        return Err(Error::Domain(format!("circle of radius {r0} vanishes at t = {}", 0.5 * r0 * r0)));
    }
    Ok(s.sqrt())
}

/// Symmetric triple junction whose curved interface translates downward
/// with constant speed `pi / alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrimReaperSpec {
    alpha: f64,
}

impl GrimReaperSpec {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("grim reaper needs alpha > 1, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn speed(&self) -> f64 {
        PI / self.alpha
    }

    /// Angles (radians) at the junction: below-below, then the two angles
    /// adjacent to the upper phase.
    pub fn junction_angles(&self) -> [f64; 3] {
        let a = self.alpha;
        let side = PI * (a + 1.0) / (2.0 * a);
        [PI * (a - 1.0) / a, side, side]
    }

    /// Surface tensions in equilibrium with the junction angles: phases 0
    /// and 1 lie below the curve (left and right), phase 2 above it.
    pub fn surface_tensions(&self) -> SurfaceTensionMatrix {
        let [below, side, _] = self.junction_angles();
        let s = side.sin() / below.sin();
        SurfaceTensionMatrix::new(vec![vec![0.0, 1.0, s], vec![1.0, 0.0, s], vec![s, s, 0.0]])
            .expect("young's law tensions are admissible for alpha > 1")
    }
}

/// `(alpha / pi) log cos(pi x / alpha) - (pi / alpha) t`.
pub fn grim_reaper_profile(spec: &GrimReaperSpec, x: f64, t: f64) -> Result<f64> {
    let a = spec.alpha;
    if !(x.abs() < 0.5 * a) {
        return Err(Error::Domain(format!("profile is singular at |x| >= {}, got x = {x}", 0.5 * a)));
    }
    Ok(a / PI * (PI * x / a).cos().ln() - PI / a * t)
}

/// Grim reaper on the strip `[0, 1] x [y0, y0 + 1]` with reflecting walls.
/// Grid coordinates are shifted so that the domain starts at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrimReaperSetup {
    pub reaper: GrimReaperSpec,
    pub y0: f64,
}

impl GrimReaperSetup {
    pub fn new(alpha: f64) -> Result<Self> {
        Ok(Self { reaper: GrimReaperSpec::new(alpha)?, y0: -0.7 })
    }

    pub fn grid(&self, n: usize) -> Result<GridSpec> {
        if n % 2 != 0 {
            return Err(Error::Config(format!("grim reaper grid size must be even, got {n}")));
        }
        GridSpec::new(n, n, 1.0, 1.0, Boundary::Reflect)
    }

    /// Initial interface height at `x`, extended evenly about 0 and 1.
    fn curve(&self, x: f64, t: f64) -> f64 {
        let d = (x - x.round()).abs();
        grim_reaper_profile(&self.reaper, d, t).expect("|x| <= 1/2 < alpha/2")
    }

    /// Signed distance functions of the three phases at `t = 0`.
    pub fn initial_system(&self, spec: &GridSpec) -> Result<PhaseSystem> {
        let shift = -self.y0;
        let n = 4 * spec.nx().max(256);
        let dense = |lo: f64, hi: f64| -> Vec<Point> {
            (0..=n)
                .map(|k| {
                    let x = lo + (hi - lo) * k as f64 / n as f64;
                    Point::new(x, self.curve(x, 0.0) + shift)
                })
                .collect()
        };
        let foot = Point::new(0.5, -1.0);
        let top = Point::new(0.5, self.curve(0.5, 0.0) + shift);
        let wall = FrontPolyline::new(vec![top, foot], false)?;
        let whole = FrontPolyline::new(dense(-0.3, 1.3), false)?;
        let left = FrontPolyline::new(dense(-0.3, 0.5), false)?;
        let right = FrontPolyline::new(dense(0.5, 1.3), false)?;
        let below = |p: Point| p.y - shift < self.curve(p.x, 0.0);
        let phases = vec![
            signed_distance(spec, &[left, wall.clone()], |p| below(p) && p.x < 0.5)?,
            signed_distance(spec, &[right, wall], |p| below(p) && p.x >= 0.5)?,
            signed_distance(spec, &[whole], |p| !below(p))?,
        ];
        PhaseSystem::new(phases)
    }

    /// L2 distance over `x in [0, 1/2]` between the computed interface
    /// (zero crossing of the upper phase, highest one in each column) and
    /// the exact profile at time `t`.
    pub fn profile_error(&self, sys: &PhaseSystem, t: f64) -> Result<f64> {
        let spec = sys.spec();
        if sys.n() != 3 {
            return Err(Error::Argument(format!("grim reaper needs 3 phases, got {}", sys.n())));
        }
        let up = sys.phase(2);
        let hy = spec.hy();
        let mut sum = 0.0;
        for i in 0..spec.nx() / 2 {
            let x = spec.node(i, 0).x;
            let y = (1..spec.ny())
                .rev()
                .find(|&j| up.get(i, j) >= 0.0 && up.get(i, j - 1) < 0.0)
                .map(|j| {
                    let (a, b) = (up.get(i, j - 1), up.get(i, j));
                    spec.node(i, j - 1).y + hy * a / (a - b)
                })
                .ok_or_else(|| Error::Oracle(format!("no interface found in column {i}")))?;
            let e = y + self.y0 - grim_reaper_profile(&self.reaper, x, t)?;
            sum += spec.hx() * e * e;
        }
        Ok(sum.sqrt())
    }
}

/// Explicit curvature flow of a closed polygon.
///
/// Each vertex moves by `dt * kappa n` with the three-point second
/// difference over arclength; the curve is resampled to `n_points` equally
/// spaced points every 10 steps. `dt` defaults to a quarter of the squared
/// shortest segment.
pub fn front_track(curve: &FrontPolyline, t_final: f64, n_points: usize, dt: Option<f64>) -> Result<FrontPolyline> {
    if !curve.is_closed() {
        return Err(Error::Argument("front tracking needs a closed curve".into()));
    }
    if n_points < 8 {
        return Err(Error::Config(format!("front tracking needs at least 8 points, got {n_points}")));
    }
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(Error::Config(format!("final time must be nonnegative, got {t_final}")));
    }
    let mut pts = resample(curve.points(), n_points);
    check_simple(&pts)?;
    let mut t = 0.0;
    let mut step = 0usize;
    let mut next = pts.clone();
    while t < t_final {
        let min_seg = (0..pts.len())
            .map(|k| pts[k].dist(pts[(k + 1) % pts.len()]))
            .fold(f64::INFINITY, f64::min);
        if !(min_seg > 0.0) {
            return Err(Error::Oracle(format!("front collapsed at t = {t}")));
        }
        let bound = 0.5 * min_seg * min_seg;
        let tau = match dt {
            Some(d) if d > bound => {
                return Err(Error::Config(format!("front tracking step {d} exceeds the stability bound {bound:e}")));
            }
            Some(d) if d > 0.0 => d,
            Some(d) => return Err(Error::Config(format!("front tracking step must be positive, got {d}"))),
            None => 0.25 * min_seg * min_seg,
        };
        let tau = tau.min(t_final - t);
        let n = pts.len();
        for k in 0..n {
            let (a, p, b) = (pts[(k + n - 1) % n], pts[k], pts[(k + 1) % n]);
            let (la, lb) = (p.dist(a), b.dist(p));
            let xss = ((b - p) * (1.0 / lb) - (p - a) * (1.0 / la)) * (2.0 / (la + lb));
            next[k] = p + xss * tau;
        }
        std::mem::swap(&mut pts, &mut next);
        t += tau;
        step += 1;
        if step % 10 == 0 {
            pts = resample(&pts, n_points);
            next.resize(pts.len(), Point::default());
            check_simple(&pts)?;
        }
    }
    pts = resample(&pts, n_points);
    check_simple(&pts)?;
    FrontPolyline::new(pts, true)
}

/// Equal-arclength resampling of a closed polygon along the uniform
/// Catmull-Rom spline through its vertices.
fn resample(pts: &[Point], n_out: usize) -> Vec<Point> {
    let n = pts.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for k in 0..n {
        cum.push(cum[k] + pts[k].dist(pts[(k + 1) % n]));
    }
    let total = cum[n];
    let mut out = Vec::with_capacity(n_out);
    let mut seg = 0;
    for m in 0..n_out {
        let s = total * m as f64 / n_out as f64;
        while seg + 1 < n && cum[seg + 1] <= s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let u = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
        let p0 = pts[(seg + n - 1) % n];
        let p1 = pts[seg];
        let p2 = pts[(seg + 1) % n];
        let p3 = pts[(seg + 2) % n];
        let (u2, u3) = (u * u, u * u * u);
        out.push(
            p0 * (0.5 * (-u3 + 2.0 * u2 - u))
                + p1 * (0.5 * (3.0 * u3 - 5.0 * u2 + 2.0))
                + p2 * (0.5 * (-3.0 * u3 + 4.0 * u2 + u))
                + p3 * (0.5 * (u3 - u2)),
        );
    }
    out
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = (b - a).cross(c - a);
    let o2 = (b - a).cross(d - a);
    let o3 = (d - c).cross(a - c);
    let o4 = (d - c).cross(b - c);
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

/// Flags any crossing of non-adjacent edges of a closed polygon.
fn check_simple(pts: &[Point]) -> Result<()> {
    let n = pts.len();
    let (mut lo, mut hi) = (pts[0], pts[0]);
    for p in pts {
        lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let cells = (n as f64).sqrt().ceil() as usize;
    let size = ((hi.x - lo.x).max(hi.y - lo.y) / cells as f64).max(f64::MIN_POSITIVE);
    let cell = |v: f64, o: f64| (((v - o) / size) as usize).min(cells - 1);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cells * cells];
    for k in 0..n {
        let (a, b) = (pts[k], pts[(k + 1) % n]);
        for cy in cell(a.y.min(b.y), lo.y)..=cell(a.y.max(b.y), lo.y) {
            for cx in cell(a.x.min(b.x), lo.x)..=cell(a.x.max(b.x), lo.x) {
                buckets[cy * cells + cx].push(k);
            }
        }
    }
    for bucket in &buckets {
        for (x, &k) in bucket.iter().enumerate() {
            for &l in &bucket[x + 1..] {
                let gap = (k + n - l) % n;
                if gap <= 1 || gap == n - 1 {
                    continue;
                }
                if segments_cross(pts[k], pts[(k + 1) % n], pts[l], pts[(l + 1) % n]) {
                    return Err(Error::Oracle(format!("front self-intersects between edges {k} and {l}")));
                }
            }
        }
    }
    Ok(())
}

/// One row of a convergence table; `order` compares with the previous row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyRow {
    pub h: f64,
    pub nt: usize,
    pub error: f64,
    pub order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyTable {
    pub case: String,
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    fn from_errors(case: String, t_final: f64, runs: &[(f64, usize, f64)]) -> Self {
        let mut rows: Vec<StudyRow> = Vec::with_capacity(runs.len());
        for &(h, nt, error) in runs {
            let order = rows.last().map(|p| {
                let (dt0, dt1) = (t_final / p.nt as f64, t_final / nt as f64);
                (p.error / error).ln() / (dt0 / dt1).ln()
            });
            rows.push(StudyRow { h, nt, error, order });
        }
        Self { case, rows }
    }

    /// `h,nt,error,order`, with an empty order in the first row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,nt,error,order\n");
        for r in &self.rows {
            let order = r.order.map(|o| format!("{o:.4}")).unwrap_or_default();
            let _ = writeln!(s, "{:e},{},{:e},{}", r.h, r.nt, r.error, order);
        }
        s
    }

    /// Least-squares slope of `log error` against `log (1 / nt)`.
    pub fn fitted_order(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self.rows.iter().map(|r| (-(r.nt as f64).ln(), r.error.ln())).collect();
        least_squares_slope(&pts)
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// One refinement ladder.
#[derive(Debug, Clone, PartialEq)]
pub enum StudyCase {
    /// Single-circle median on a fixed `n x n` grid, refining only the
    /// number of time steps.
    Ellipse { n: usize, a: f64, b: f64, t_final: f64, nts: Vec<usize> },
    /// Second-order kernel with grid and time step refined together;
    /// `levels` holds `(n, nt)` pairs.
    Flower { petals: u32, r0: f64, amp: f64, t_final: f64, levels: Vec<(usize, usize)> },
    /// Three-phase ball-stencil scheme, `levels` as `(n, nt)`.
    GrimReaper { alpha: f64, t_final: f64, levels: Vec<(usize, usize)> },
    /// Shrinking circle with the single-circle kernel of radius `cells`
    /// grid cells.
    Circle { n: usize, r0: f64, cells: f64, steps: usize },
}

impl StudyCase {
    pub fn name(&self) -> String {
        match self {
            StudyCase::Ellipse { .. } => "ellipse".into(),
            StudyCase::Flower { petals, .. } => format!("flower{petals}"),
            StudyCase::GrimReaper { alpha, .. } => format!("grim_alpha{alpha}"),
            StudyCase::Circle { .. } => "circle".into(),
        }
    }

    /// Keeps only the first `k` refinement levels.
    pub fn truncated(mut self, k: usize) -> Self {
        match &mut self {
            StudyCase::Ellipse { nts, .. } => nts.truncate(k),
            StudyCase::Flower { levels, .. } | StudyCase::GrimReaper { levels, .. } => levels.truncate(k),
            StudyCase::Circle { .. } => {}
        }
        self
    }

    pub fn run(&self) -> Result<StudyTable> {
        match self {
            StudyCase::Ellipse { n, a, b, t_final, nts } => {
                let shape = Shape::Ellipse { center: Point::new(0.5, 0.5), a: *a, b: *b };
                let spec = GridSpec::unit(*n)?;
                let h = spec.hx();
                // Short straddling arcs count as zero, a bias of about eps * r per
                // step, so eps is kept far below the grid resolution.
                let params = BisectionParams::new(1e-5, 1e-3 * h)?;
                let oracle = curve_oracle(&shape, *t_final, 2048)?;
                let runs = nts
                    .iter()
                    .map(|&nt| {
                        let err = curve_run(&spec, &shape, &CircleSumKernel::single_circle(), params, *t_final, nt, &oracle)?;
                        Ok((h, nt, err))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(StudyTable::from_errors(self.name(), *t_final, &runs))
            }
            StudyCase::Flower { petals, r0, amp, t_final, levels } => {
                let shape = Shape::Flower { center: Point::new(0.5, 0.5), r0: *r0, amp: *amp, petals: *petals };
                let oracle = curve_oracle(&shape, *t_final, 4096)?;
                let runs = levels
                    .iter()
                    .map(|&(n, nt)| {
                        let spec = GridSpec::unit(n)?;
                        let h = spec.hx();
                        let params = BisectionParams::new((h * h).min(1e-4), 1e-2 * h * h)?;
                        let err = curve_run(&spec, &shape, &CircleSumKernel::second_order(), params, *t_final, nt, &oracle)?;
                        Ok((h, nt, err))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(StudyTable::from_errors(self.name(), *t_final, &runs))
            }
            StudyCase::GrimReaper { alpha, t_final, levels } => {
                let setup = GrimReaperSetup::new(*alpha)?;
                let runs = levels
                    .iter()
                    .map(|&(n, nt)| {
                        let spec = setup.grid(n)?;
                        let sys = run_grim_reaper(&setup, &spec, *t_final, nt)?;
                        Ok((spec.hx(), nt, setup.profile_error(&sys, *t_final)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(StudyTable::from_errors(self.name(), *t_final, &runs))
            }
            StudyCase::Circle { n, r0, cells, steps } => {
                let spec = GridSpec::unit(*n)?;
                let h = spec.hx();
                let r = cells * h;
                let dt = 0.5 * r * r;
                let t_final = dt * *steps as f64;
                let center = Point::new(0.5, 0.5);
                let shape = Shape::Circle { center, radius: *r0 };
                let exact = FrontPolyline::circle(center, exact_circle_radius(*r0, t_final)?, 8192);
                let params = BisectionParams::new(1e-6, 1e-6 * h)?;
                let phi = init_shape(&spec, &shape)?;
                let kernel = scaled_kernel(&CircleSumKernel::single_circle(), dt)?;
                let scheme = MedianScheme::new(MedianMethod::Bisection { kernel, params }, Variant::Jacobi).with_band(6.0 * h);
                let out = scheme.run(&phi, *steps)?;
                let err = hausdorff_distance(&contour(&out)?, &[exact])?;
                Ok(StudyTable::from_errors(self.name(), t_final, &[(h, *steps, err)]))
            }
        }
    }
}

fn contour(field: &ScalarField2D) -> Result<Vec<FrontPolyline>> {
    let c = extract_contour(field, 0.0);
    if c.is_empty() {
        return Err(Error::Oracle("zero level set vanished".into()));
    }
    Ok(c)
}

fn curve_oracle(shape: &Shape, t_final: f64, n_points: usize) -> Result<FrontPolyline> {
    let start = shape.boundary_polyline(16 * n_points).expect("closed shape");
    front_track(&start, t_final, n_points, None)
}

fn curve_run(
    spec: &GridSpec,
    shape: &Shape,
    kernel: &CircleSumKernel,
    params: BisectionParams,
    t_final: f64,
    nt: usize,
    oracle: &FrontPolyline,
) -> Result<f64> {
    let dt = t_final / nt as f64;
    let kernel = scaled_kernel(kernel, dt)?;
    let band = 6.0 * spec.hx();
    let scheme = MedianScheme::new(MedianMethod::Bisection { kernel, params }, Variant::Jacobi).with_band(band);
    let out = scheme.run(&init_shape(spec, shape)?, nt)?;
    hausdorff_distance(&contour(&out)?, std::slice::from_ref(oracle))
}

/// Evolves the three-phase grim reaper to `t_final` in `nt` steps with the
/// ring-integrated disk kernel.
pub fn run_grim_reaper(setup: &GrimReaperSetup, spec: &GridSpec, t_final: f64, nt: usize) -> Result<PhaseSystem> {
    let dt = t_final / nt as f64;
    let r = (dt / ball_time_coefficient()).sqrt();
    let h = spec.hx();
    let scheme = RingMultiphaseScheme::new(RingBall::new(r, 2.0 * h)?, setup.reaper.surface_tensions(), 1e-3 * h)?
        .with_band(5.0 * h);
    scheme.run(&setup.initial_system(spec)?, nt)
}

/// The reproduced experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Ellipse, first-order scheme, time refinement.
    Table1,
    /// Four- and six-petal flowers, second-order kernel.
    Table2,
    /// Grim reapers with `alpha = 3` and `alpha = 2`.
    Table3,
    /// Shrinking circle with a kernel of about five grid cells.
    Fig3,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table1" => Ok(Preset::Table1),
            "table2" => Ok(Preset::Table2),
            "table3" => Ok(Preset::Table3),
            "fig3" => Ok(Preset::Fig3),
            _ => Err(Error::Argument(format!("unknown preset '{s}' (table1, table2, table3, fig3)"))),
        }
    }
}

pub const ELLIPSE_AXES: (f64, f64) = (0.35, 0.2);
pub const ELLIPSE_TIME: f64 = 0.02;
pub const FLOWER_RADII: (f64, f64) = (0.3, 0.06);

impl Preset {
    /// The ladders of this experiment; `grid` overrides the fixed Table 1
    /// grid size (500 by default).
    pub fn cases(self, grid: Option<usize>) -> Vec<StudyCase> {
        match self {
            Preset::Table1 => vec![StudyCase::Ellipse {
                n: grid.unwrap_or(500),
                a: ELLIPSE_AXES.0,
                b: ELLIPSE_AXES.1,
                t_final: ELLIPSE_TIME,
                nts: vec![5, 10, 20, 40],
            }],
            Preset::Table2 => [4, 6]
                .into_iter()
                .map(|petals| StudyCase::Flower {
                    petals,
                    r0: FLOWER_RADII.0,
                    amp: FLOWER_RADII.1,
                    t_final: 1.0 / 200.0,
                    levels: vec![(100, 1), (200, 2), (400, 4), (800, 8)],
                })
                .collect(),
            Preset::Table3 => [3.0, 2.0]
                .into_iter()
                .map(|alpha| StudyCase::GrimReaper {
                    alpha,
                    t_final: 0.03,
                    levels: vec![(50, 5), (100, 10), (200, 20), (400, 40)],
                })
                .collect(),
            Preset::Fig3 => vec![StudyCase::Circle { n: grid.unwrap_or(512), r0: 0.25, cells: 5.0, steps: 10 }],
        }
    }
}

/// Runs every case, keeping at most `max_levels` refinement levels each.
pub fn convergence_study(preset: Preset, grid: Option<usize>, max_levels: Option<usize>) -> Result<Vec<StudyTable>> {
    preset
        .cases(grid)
        .into_iter()
        .map(|c| match max_levels {
            Some(k) => c.truncated(k).run(),
            None => c.run(),
        })
        .collect()
}

/// Smooth random field: a few random plane waves, rescaled so the largest
/// difference quotient between neighboring nodes is `lipschitz`.
pub fn random_lipschitz_field(spec: &GridSpec, lipschitz: f64, rng: &mut impl Rng) -> ScalarField2D {
    let modes: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(1..5) as f64,
                rng.gen_range(-4..5) as f64,
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.2..1.0),
            )
        })
        .collect();
    let (lx, ly) = (spec.lx(), spec.ly());
    let f = ScalarField2D::from_fn(*spec, |p| {
        modes
            .iter()
            .map(|&(a, b, ph, c)| c * (2.0 * PI * (a * p.x / lx + b * p.y / ly) + ph).sin())
            .sum()
    });
    let q = lipschitz_quotient(&f);
    if q > 0.0 {
        f.map(|v| v * lipschitz / q)
    } else {
        f
    }
}

/// Outcome of the stacking comparison over many random fields.
#[derive(Debug, Clone, PartialEq)]
pub struct StackingSummary {
    pub fields: usize,
    pub levels: usize,
    pub offsets: usize,
    /// Mismatching nodes summed over levels, per field.
    pub mismatches: Vec<usize>,
}

impl StackingSummary {
    pub fn total(&self) -> usize {
        self.mismatches.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("field,mismatches\n");
        for (k, m) in self.mismatches.iter().enumerate() {
            let _ = writeln!(s, "{k},{m}");
        }
        s
    }
}

/// Thresholded median against threshold dynamics on `fields` random `n x n`
/// fields with uniform values, one shared circle stencil of `offsets`
/// points and `levels` levels spanning each field.
pub fn stacking_experiment(fields: usize, n: usize, offsets: usize, levels: usize, seed: u64) -> Result<StackingSummary> {
    let spec = GridSpec::new(n, n, 1.0, 1.0, Boundary::Periodic)?;
    let stencil = SampledStencil::circle(4.3 * spec.hx(), offsets)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mismatches = (0..fields)
        .map(|_| {
            let f = ScalarField2D::new(spec, (0..spec.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
            Ok(stacked_td(&f, &stencil, &spanning_levels(&f, levels, 0.0))?.total_mismatches())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StackingSummary { fields, levels, offsets, mismatches })
}

/// One monitored run of the energy experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyRun {
    pub scheme: &'static str,
    pub field: usize,
    pub report: EnergyReport,
}

/// Runs `steps` updates from `fields` random Lipschitz fields on an `n x n`
/// periodic grid with two schemes: the two-step update with a grid-snapped
/// circle stencil and the Jacobi update with a discrete Gaussian, which is
/// checked to be positive semidefinite first.
pub fn energy_experiment(fields: usize, n: usize, steps: usize, seed: u64) -> Result<Vec<EnergyRun>> {
    let spec = GridSpec::new(n, n, 1.0, 1.0, Boundary::Periodic)?;
    let h = spec.hx();
    let circle = SampledStencil::circle(3.2 * h, 24)?.snap_to_grid(&spec)?;
    let gauss = SampledStencil::discrete_gaussian(&spec, 0.8 * h, 2)?;
    let sym = gauss.min_symbol(&spec)?;
    if sym < 0.0 {
        return Err(Error::Config(format!("gaussian stencil has negative symbol {sym:e}")));
    }
    let sampled = |st: &SampledStencil, variant| {
        MedianScheme::new(MedianMethod::Sampled { stencil: st.clone(), eval: Eval::Nearest, rule: MedianRule::Sup }, variant)
    };
    let schemes = [("two_step_circle", sampled(&circle, Variant::TwoStep), &circle), ("jacobi_gauss", sampled(&gauss, Variant::Jacobi), &gauss)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut runs = Vec::new();
    for field in 0..fields {
        let f0 = random_lipschitz_field(&spec, 1.0, &mut rng);
        for (name, scheme, st) in &schemes {
            let (report, _) = monitor(&f0, |f| scheme.step(f), |f| field_energy(f, st), steps)?;
            runs.push(EnergyRun { scheme: name, field, report });
        }
    }
    Ok(runs)
}
