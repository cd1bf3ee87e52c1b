//! Multiphase median filter for networks with pairwise surface tensions.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Point, ScalarField2D};
use crate::median2p::{clamped_plateau, read, Eval, MedianRule, SampledStencil};
use crate::tdyn::{argmin_lowest, phase_costs, PartitionField};

/// Symmetric matrix of surface tensions with zero diagonal, positive
/// off-diagonal entries and the triangle inequality.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceTensionMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SurfaceTensionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Config("surface tension matrix is empty".into()));
        }
        if let Some(r) = rows.iter().position(|r| r.len() != n) {
            return Err(Error::Config(format!("row {} has {} entries, expected {n}", r + 1, rows[r].len())));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        let at = |i: usize, j: usize| data[i * n + j];
        for i in 0..n {
            if at(i, i) != 0.0 {
                return Err(Error::Config(format!("sigma_{0}{0} = {1} must be zero", i + 1, at(i, i))));
            }
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = at(i, j);
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("sigma_{}{} = {v} must be positive", i + 1, j + 1)));
                }
                if (v - at(j, i)).abs() > 1e-12 * v.abs() {
                    return Err(Error::Config(format!(
                        "matrix is not symmetric: sigma_{}{} = {v}, sigma_{}{} = {}",
                        i + 1,
                        j + 1,
                        j + 1,
                        i + 1,
                        at(j, i)
                    )));
                }
            }
        }
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    if i == k || j == i || j == k {
                        continue;
                    }
                    let (direct, via) = (at(i, k), at(i, j) + at(j, k));
                    if direct > via * (1.0 + 1e-12) {
                        return Err(Error::Config(format!(
                            "triangle inequality fails for phases ({}, {}, {}): sigma_{}{} = {direct} > sigma_{}{} + sigma_{}{} = {via}",
                            i + 1,
                            j + 1,
                            k + 1,
                            i + 1,
                            k + 1,
                            i + 1,
                            j + 1,
                            j + 1,
                            k + 1
                        )));
                    }
                }
            }
        }
        Ok(Self { n, data })
    }

    /// All off-diagonal entries equal to one.
    pub fn uniform(n: usize) -> Self {
        let data = (0..n * n).map(|k| if k / n == k % n { 0.0 } else { 1.0 }).collect();
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Parses whitespace separated rows, one per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split(|c: char| c.is_whitespace() || c == ',')
                    .filter(|t| !t.is_empty())
                    .map(|t| t.parse::<f64>().map_err(|e| Error::Parse(format!("bad sigma entry '{t}': {e}"))))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows)
    }
}

impl fmt::Display for SurfaceTensionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|j| format!("{}", self.get(i, j))).collect();
            writeln!(f, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// One level-set function per phase on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSystem {
    phases: Vec<ScalarField2D>,
}

impl PhaseSystem {
    pub fn new(phases: Vec<ScalarField2D>) -> Result<Self> {
        if phases.len() < 2 {
            return Err(Error::Argument(format!("need at least two phases, got {}", phases.len())));
        }
        let spec = *phases[0].spec();
        if phases.iter().any(|p| *p.spec() != spec) {
            return Err(Error::Argument("phase fields live on different grids".into()));
        }
        Ok(Self { phases })
    }

    /// `+height` on the nodes of each phase, `-height` elsewhere.
    pub fn from_partition(part: &PartitionField, height: f64) -> Result<Self> {
        let phases = (0..part.n_phases())
            .map(|i| {
                let v = part.labels().iter().map(|&l| if l as usize == i { height } else { -height }).collect();
                ScalarField2D::new(*part.spec(), v)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(phases)
    }

    pub fn spec(&self) -> &GridSpec {
        self.phases[0].spec()
    }
    pub fn n(&self) -> usize {
        self.phases.len()
    }
    pub fn phases(&self) -> &[ScalarField2D] {
        &self.phases
    }
    pub fn phase(&self, i: usize) -> &ScalarField2D {
        &self.phases[i]
    }
    pub fn into_phases(self) -> Vec<ScalarField2D> {
        self.phases
    }

    /// Label of the largest phase value at each node (lowest index on ties).
    /// For a consistent system this is the phase with nonnegative value.
    pub fn partition(&self) -> PartitionField {
        let spec = *self.spec();
        let labels = (0..spec.len())
            .map(|k| {
                let mut best = 0;
                for (i, p) in self.phases.iter().enumerate().skip(1) {
                    if p.values()[k] > self.phases[best].values()[k] {
                        best = i;
                    }
                }
                best as u16
            })
            .collect();
        PartitionField::new(spec, labels, self.n()).expect("labels in range")
    }

    /// Number of nodes where not exactly one phase is nonnegative.
    pub fn inconsistent_nodes(&self) -> usize {
        (0..self.spec().len())
            .filter(|&k| self.phases.iter().filter(|p| p.values()[k] >= 0.0).count() != 1)
            .count()
    }
}

#[inline]
fn argmax_except(vals: &[f64], i: usize) -> usize {
    let mut best = usize::MAX;
    for (k, &v) in vals.iter().enumerate() {
        if k != i && (best == usize::MAX || v > vals[best]) {
            best = k;
        }
    }
    best
}

fn check_args(sys: &PhaseSystem, sigma: &SurfaceTensionMatrix, stencil: &SampledStencil) -> Result<()> {
    if sigma.n() != sys.n() {
        return Err(Error::Argument(format!(
            "surface tension matrix has {} phases, system has {}",
            sigma.n(),
            sys.n()
        )));
    }
    if stencil.is_empty() {
        return Err(Error::Argument("empty stencil".into()));
    }
    Ok(())
}

fn read_all(sys: &PhaseSystem, x: Point, stencil: &SampledStencil, eval: Eval) -> Vec<f64> {
    let spec = sys.spec();
    let (fi, fj) = spec.to_index(x);
    let mut vals = Vec::with_capacity(stencil.len() * sys.n());
    for y in stencil.offsets() {
        let (a, b) = (fi + y.x / spec.hx(), fj + y.y / spec.hy());
        vals.extend(sys.phases.iter().map(|p| read(p, a, b, eval)));
    }
    vals
}

/// Normalized cost of phase `j` seen from phase `i` at level `lambda`:
/// stencil points where `phi_i >= lambda` count as phase `i`, the others as
/// the largest remaining phase, and each is charged `sigma_{j,k}`.
#[allow(clippy::too_many_arguments)]
pub fn psi_ij(
    sys: &PhaseSystem,
    i: usize,
    j: usize,
    x: Point,
    lambda: f64,
    stencil: &SampledStencil,
    sigma: &SurfaceTensionMatrix,
    eval: Eval,
) -> Result<f64> {
    check_args(sys, sigma, stencil)?;
    let n = sys.n();
    if i >= n || j >= n {
        return Err(Error::Argument(format!("phase index out of range for {n} phases")));
    }
    let vals = read_all(sys, x, stencil, eval);
    let mut s = 0.0;
    for (row, &w) in vals.chunks(n).zip(stencil.weights()) {
        let k = if row[i] >= lambda { i } else { argmax_except(row, i) };
        s += sigma.get(j, k) * w;
    }
    Ok(s / stencil.total_weight())
}

#[derive(Clone, Copy)]
struct Sample {
    v: f64,
    k: u16,
    w: f64,
}

/// Scratch buffers for one node.
struct Work {
    samples: Vec<Sample>,
    consumed: Vec<f64>,
    trial: Vec<f64>,
    costs: Vec<f64>,
}

impl Work {
    fn new(n: usize, m: usize) -> Self {
        Self { samples: Vec::with_capacity(m), consumed: vec![0.0; n], trial: vec![0.0; n], costs: vec![0.0; n] }
    }
}

/// Costs of the state where the samples in `consumed` buckets have left
/// phase `i`; the rest of the mass stays in `i`.
#[inline]
fn state_costs(sigma: &SurfaceTensionMatrix, i: usize, total: f64, consumed: &[f64], masses: &mut [f64], costs: &mut [f64]) {
    masses.copy_from_slice(consumed);
    masses[i] = total - consumed.iter().sum::<f64>();
    phase_costs(sigma, masses, costs);
}

/// Median of phase `i` from its samples: the largest sample level at which
/// phase `i` still wins the cost comparison once every sample below that
/// level is handed to its strongest competitor.
///
/// Runs a quickselect over sample values, so the cost is linear in the
/// stencil size on average.
fn node_median(work: &mut Work, sigma: &SurfaceTensionMatrix, i: usize, total: f64, rule: MedianRule) -> f64 {
    let Work { samples, consumed, trial, costs } = work;
    let n = consumed.len();
    let mut masses = vec![0.0; n];
    consumed.iter_mut().for_each(|c| *c = 0.0);
    let (mut lo, mut hi) = (0, samples.len());
    let mut above: Option<f64> = None;
    let mut prev = f64::NEG_INFINITY;
    let wins = |c: &[f64], masses: &mut [f64], costs: &mut [f64]| {
        state_costs(sigma, i, total, c, masses, costs);
        argmin_lowest(costs) == i
    };
    let lambda = loop {
        if lo == hi {
            match above {
                Some(a) => break a,
                // Still winning with every sample consumed: clamp to the top.
                None => return samples.iter().map(|s| s.v).fold(f64::NEG_INFINITY, f64::max),
            }
        }
        let p = pivot(&samples[lo..hi]);
        let mid = lo + partition(&mut samples[lo..hi], |s| s.v < p);
        if mid == lo {
            // `p` is the smallest remaining value: try consuming its group.
            let g = lo + partition(&mut samples[lo..hi], |s| s.v <= p);
            trial.copy_from_slice(consumed);
            for s in &samples[lo..g] {
                trial[s.k as usize] += s.w;
            }
            if wins(trial, &mut masses, costs) {
                consumed.copy_from_slice(trial);
                prev = p;
                lo = g;
                continue;
            }
            break p;
        }
        trial.copy_from_slice(consumed);
        let mut top = f64::NEG_INFINITY;
        for s in &samples[lo..mid] {
            trial[s.k as usize] += s.w;
            top = top.max(s.v);
        }
        if wins(trial, &mut masses, costs) {
            consumed.copy_from_slice(trial);
            prev = prev.max(top);
            lo = mid;
        } else {
            above = Some(p);
            hi = mid;
        }
    };
    match rule {
        MedianRule::Sup => lambda,
        MedianRule::Midpoint => {
            state_costs(sigma, i, total, consumed, &mut masses, costs);
            let tie = (i + 1..n).any(|j| costs[j] == costs[i]);
            if tie && prev.is_finite() {
                0.5 * (prev + lambda)
            } else {
                lambda
            }
        }
    }
}

fn pivot(s: &[Sample]) -> f64 {
    let (a, b, c) = (s[0].v, s[s.len() / 2].v, s[s.len() - 1].v);
    a.max(b).min(a.min(b).max(c))
}

/// Moves elements satisfying `pred` to the front; returns their count.
fn partition(s: &mut [Sample], pred: impl Fn(&Sample) -> bool) -> usize {
    let mut k = 0;
    for t in 0..s.len() {
        if pred(&s[t]) {
            s.swap(k, t);
            k += 1;
        }
    }
    k
}

fn fill_samples(work: &mut Work, rows: &[f64], n: usize, i: usize, weights: &[f64]) {
    work.samples.clear();
    for (row, &w) in rows.chunks(n).zip(weights) {
        work.samples.push(Sample { v: row[i], k: argmax_except(row, i) as u16, w });
    }
}

/// Multiphase median of phase `i` at `x`.
///
/// With `MedianRule::Sup` the value is the exact supremum of levels at
/// which phase `i` wins; `MedianRule::Midpoint` averages with the previous
/// sample level when the final comparison is a tie, which for two phases
/// reproduces the two-phase midpoint median of the first phase.
#[allow(clippy::too_many_arguments)]
pub fn multiphase_median_node(
    sys: &PhaseSystem,
    i: usize,
    x: Point,
    stencil: &SampledStencil,
    sigma: &SurfaceTensionMatrix,
    eval: Eval,
    rule: MedianRule,
) -> Result<f64> {
    check_args(sys, sigma, stencil)?;
    if i >= sys.n() {
        return Err(Error::Argument(format!("phase index {i} out of range for {} phases", sys.n())));
    }
    let vals = read_all(sys, x, stencil, eval);
    let mut work = Work::new(sys.n(), stencil.len());
    fill_samples(&mut work, &vals, sys.n(), i, stencil.weights());
    Ok(node_median(&mut work, sigma, i, stencil.total_weight(), rule))
}

/// Jacobi multiphase median update of every phase at every node.
#[derive(Debug, Clone)]
pub struct MultiphaseScheme {
    pub stencil: SampledStencil,
    pub sigma: SurfaceTensionMatrix,
    pub eval: Eval,
    pub rule: MedianRule,
    /// Clamp each phase to `[-band, band]` and skip (node, phase) pairs
    /// whose stencil sees a single clamped value.
    pub band: Option<f64>,
}

impl MultiphaseScheme {
    pub fn new(stencil: SampledStencil, sigma: SurfaceTensionMatrix) -> Self {
        Self { stencil, sigma, eval: Eval::Bilinear, rule: MedianRule::Midpoint, band: None }
    }

    pub fn with_rule(mut self, rule: MedianRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn with_eval(mut self, eval: Eval) -> Self {
        self.eval = eval;
        self
    }

    pub fn with_band(mut self, band: f64) -> Self {
        self.band = Some(band);
        self
    }

    pub fn step(&self, sys: &PhaseSystem) -> Result<PhaseSystem> {
        check_args(sys, &self.sigma, &self.stencil)?;
        let spec = *sys.spec();
        let reach = self.stencil.reach();
        if reach > 0.5 * spec.lx().min(spec.ly()) {
            return Err(Error::Config(format!("stencil radius {reach} exceeds half the domain size")));
        }
        let clamped;
        let (sys, skip) = match self.band {
            Some(b) if b > 0.0 => {
                clamped = PhaseSystem { phases: sys.phases.iter().map(|p| p.map(|v| v.clamp(-b, b))).collect() };
                let skip: Vec<Vec<bool>> = clamped.phases.iter().map(|p| clamped_plateau(p, b, reach)).collect();
                (&clamped, Some(skip))
            }
            Some(b) => return Err(Error::Config(format!("band width must be positive, got {b}"))),
            None => (sys, None),
        };
        let n = sys.n();
        let nx = spec.nx();
        let m = self.stencil.len();
        let grid = self.stencil.grid_offsets(&spec);
        let frac: Vec<(f64, f64)> =
            self.stencil.offsets().iter().map(|y| (y.x / spec.hx(), y.y / spec.hy())).collect();
        let mut out: Vec<Vec<f64>> = vec![vec![0.0; spec.len()]; n];
        let rows: Vec<Vec<Vec<f64>>> = (0..spec.ny())
            .into_par_iter()
            .map(|j| {
                let mut work = Work::new(n, m);
                let mut vals = vec![0.0; m * n];
                let mut row_out = vec![vec![0.0; nx]; n];
                for i in 0..nx {
                    let node = j * nx + i;
                    let active: Vec<bool> = (0..n)
                        .map(|p| skip.as_ref().map_or(true, |s| !s[p][node]))
                        .collect();
                    if !active.iter().any(|&a| a) {
                        for p in 0..n {
                            row_out[p][i] = sys.phases[p].values()[node];
                        }
                        continue;
                    }
                    match &grid {
                        Some(offs) => gather_grid(sys, &spec, i, j, offs, &mut vals),
                        None => {
                            for (s, &(di, dj)) in frac.iter().enumerate() {
                                for p in 0..n {
                                    vals[s * n + p] = read(&sys.phases[p], i as f64 + di, j as f64 + dj, self.eval);
                                }
                            }
                        }
                    }
                    for p in 0..n {
                        row_out[p][i] = if active[p] {
                            fill_samples(&mut work, &vals, n, p, self.stencil.weights());
                            node_median(&mut work, &self.sigma, p, self.stencil.total_weight(), self.rule)
                        } else {
                            sys.phases[p].values()[node]
                        };
                    }
                }
                row_out
            })
            .collect();
        for (j, row) in rows.into_iter().enumerate() {
            for (p, r) in row.into_iter().enumerate() {
                out[p][j * nx..(j + 1) * nx].copy_from_slice(&r);
            }
        }
        let phases = out.into_iter().map(|v| ScalarField2D::new(spec, v)).collect::<Result<Vec<_>>>()?;
        Ok(PhaseSystem { phases })
    }

    pub fn run(&self, sys: &PhaseSystem, steps: usize) -> Result<PhaseSystem> {
        let mut s = sys.clone();
        for _ in 0..steps {
            s = self.step(&s)?;
        }
        Ok(s)
    }
}

/// Reads every phase at grid-aligned offsets around node `(i, j)`.
fn gather_grid(sys: &PhaseSystem, spec: &GridSpec, i: usize, j: usize, offs: &[(isize, isize)], vals: &mut [f64]) {
    let n = sys.n();
    let (nx, ny) = (spec.nx() as isize, spec.ny() as isize);
    let (ii, jj) = (i as isize, j as isize);
    let b = spec.boundary();
    for (s, &(di, dj)) in offs.iter().enumerate() {
        let (a, c) = (ii + di, jj + dj);
        let idx = if a >= 0 && c >= 0 && a < nx && c < ny {
            (c * nx + a) as usize
        } else {
            b.map_index(c, ny as usize) * nx as usize + b.map_index(a, nx as usize)
        };
        for p in 0..n {
            vals[s * n + p] = sys.phases[p].values()[idx];
        }
    }
}

/// The disk `|y| <= r` as concentric rings at the midpoints of equal
/// radial steps, each sampled at equally spaced angles. A ring segment
/// between consecutive samples carries area `rho * drho * dtheta`, so the
/// weights add up to `pi r^2` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RingBall {
    radius: f64,
    points: Vec<Point>,
    /// `(first sample, sample count, segment weight)` per ring.
    rings: Vec<(usize, usize, f64)>,
}

impl RingBall {
    /// Rings and samples about `spacing` apart.
    pub fn new(r: f64, spacing: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite() && spacing > 0.0) {
            return Err(Error::Config(format!("ring ball needs r > 0 and spacing > 0, got {r}, {spacing}")));
        }
        let k_rings = ((r / spacing).ceil() as usize).max(2);
        let dr = r / k_rings as f64;
        let mut points = Vec::new();
        let mut rings = Vec::with_capacity(k_rings);
        for k in 0..k_rings {
            let rho = (k as f64 + 0.5) * dr;
            let m = ((std::f64::consts::TAU * rho / spacing).ceil() as usize).max(8);
            let dt = std::f64::consts::TAU / m as f64;
            // Stagger the rings so that their samples do not line up.
            let shift = (k as f64 * 0.618_033_988_749_895).fract();
            rings.push((points.len(), m, rho * dr * dt));
            points.extend((0..m).map(|s| {
                let t = (s as f64 + shift) * dt;
                Point::new(rho * t.cos(), rho * t.sin())
            }));
        }
        Ok(Self { radius: r, points, rings })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
    pub fn offsets(&self) -> &[Point] {
        &self.points
    }
    pub fn total_weight(&self) -> f64 {
        self.rings.iter().map(|&(_, m, w)| m as f64 * w).sum()
    }
}

/// Ring segment seen from one phase: that phase's values at both ends,
/// the weight, the competing phase at each end and where along the
/// segment they trade places.
#[derive(Clone, Copy)]
struct Seg {
    pa: f64,
    pb: f64,
    w: f64,
    ca: u16,
    cb: u16,
    split: f64,
}

/// Largest and second largest phase at every sample.
fn top_two(vals: &[f64], n: usize, top: &mut Vec<(u16, u16)>) {
    top.clear();
    for row in vals.chunks(n) {
        let (mut b, mut s) = (usize::MAX, usize::MAX);
        for (k, &v) in row.iter().enumerate() {
            if b == usize::MAX || v > row[b] {
                s = b;
                b = k;
            } else if s == usize::MAX || v > row[s] {
                s = k;
            }
        }
        top.push((b as u16, s as u16));
    }
}

fn ring_segments(ball: &RingBall, vals: &[f64], top: &[(u16, u16)], n: usize, i: usize, segs: &mut Vec<Seg>) {
    segs.clear();
    let other = |t: (u16, u16)| if t.0 as usize == i { t.1 as usize } else { t.0 as usize };
    for &(start, m, w) in &ball.rings {
        for s in 0..m {
            let (a, b) = (start + s, start + (s + 1) % m);
            let (ra, rb) = (&vals[a * n..(a + 1) * n], &vals[b * n..(b + 1) * n]);
            let (ca, cb) = (other(top[a]), other(top[b]));
            let split = if ca == cb {
                1.0
            } else {
                let da = ra[ca] - ra[cb];
                let db = rb[ca] - rb[cb];
                if da - db > 0.0 {
                    (da / (da - db)).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            };
            segs.push(Seg { pa: ra[i], pb: rb[i], w, ca: ca as u16, cb: cb as u16, split });
        }
    }
}

/// Phase masses at level `lambda` from the point of view of phase `i`,
/// added to `base`. Along each segment the values are linear in the arc
/// parameter, so the part with `phi_i >= lambda` is a subinterval at one
/// end.
fn ring_masses(segs: &[Seg], i: usize, lambda: f64, base: &[f64], masses: &mut [f64]) {
    masses.copy_from_slice(base);
    for g in segs {
        let (pa, pb) = (g.pa, g.pb);
        let (u0, u1) = match (pa >= lambda, pb >= lambda) {
            (true, true) => (0.0, 1.0),
            (false, false) => (0.0, 0.0),
            (true, false) => (0.0, (pa - lambda) / (pa - pb)),
            (false, true) => (1.0 - (pb - lambda) / (pb - pa), 1.0),
        };
        let inside = u1 - u0;
        let first = g.split - (g.split.min(u1) - u0).max(0.0);
        masses[i] += g.w * inside;
        masses[g.ca as usize] += g.w * first;
        masses[g.cb as usize] += g.w * (1.0 - inside - first);
    }
}

/// Moves segments whose class no longer depends on `lambda in [lo, hi]`
/// into `base`.
fn settle(segs: &mut Vec<Seg>, i: usize, lo: f64, hi: f64, base: &mut [f64]) {
    segs.retain(|g| {
        if g.pa.min(g.pb) >= hi {
            base[i] += g.w;
            false
        } else if g.pa.max(g.pb) < lo {
            base[g.ca as usize] += g.w * g.split;
            base[g.cb as usize] += g.w * (1.0 - g.split);
            false
        } else {
            true
        }
    });
}

/// Scratch buffers for one node.
struct RingWork {
    top: Vec<(u16, u16)>,
    segs: Vec<Seg>,
    base: Vec<f64>,
    masses: Vec<f64>,
    costs: Vec<f64>,
}

impl RingWork {
    fn new(n: usize) -> Self {
        Self { top: Vec::new(), segs: Vec::new(), base: vec![0.0; n], masses: vec![0.0; n], costs: vec![0.0; n] }
    }
}

/// Multiphase median of phase `i` over the disk, by bisection on `lambda`
/// to within `eps`. `vals` holds every phase at every ring sample and
/// `work.top` their two largest phases.
fn ring_median(ball: &RingBall, vals: &[f64], n: usize, i: usize, sigma: &SurfaceTensionMatrix, eps: f64, work: &mut RingWork) -> f64 {
    let RingWork { top, segs, base, masses, costs } = work;
    ring_segments(ball, vals, top, n, i, segs);
    base.iter_mut().for_each(|b| *b = 0.0);
    let wins = |lambda: f64, segs: &[Seg], base: &[f64], masses: &mut [f64], costs: &mut [f64]| {
        ring_masses(segs, i, lambda, base, masses);
        phase_costs(sigma, masses, costs);
        argmin_lowest(costs) == i
    };
    let (mut lo, mut hi) = vals
        .chunks(n)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), row| (l.min(row[i]), h.max(row[i])));
    if wins(hi, segs, base, masses, costs) {
        return hi;
    }
    if hi - lo > eps && !wins(lo + eps, segs, base, masses, costs) {
        return lo;
    }
    while hi - lo > eps {
        let mid = 0.5 * (lo + hi);
        if wins(mid, segs, base, masses, costs) {
            lo = mid;
        } else {
            hi = mid;
        }
        settle(segs, i, lo, hi, base);
    }
    0.5 * (lo + hi)
}

/// Jacobi multiphase median update with the disk kernel integrated along
/// rings of bilinearly interpolated values.
///
/// Unlike a lattice sampling of the disk, the interpolated integrals vary
/// continuously with the level, so slowly moving interfaces are not pinned
/// to grid rows.
#[derive(Debug, Clone)]
pub struct RingMultiphaseScheme {
    pub ball: RingBall,
    pub sigma: SurfaceTensionMatrix,
    pub eps_lambda: f64,
    /// Clamp each phase to `[-band, band]` and skip (node, phase) pairs
    /// whose disk sees a single clamped value.
    pub band: Option<f64>,
}

impl RingMultiphaseScheme {
    pub fn new(ball: RingBall, sigma: SurfaceTensionMatrix, eps_lambda: f64) -> Result<Self> {
        if !(eps_lambda > 0.0 && eps_lambda.is_finite()) {
            return Err(Error::Config(format!("eps_lambda must be positive, got {eps_lambda}")));
        }
        Ok(Self { ball, sigma, eps_lambda, band: None })
    }

    pub fn with_band(mut self, band: f64) -> Self {
        self.band = Some(band);
        self
    }

    /// Median of phase `i` at grid node `(i_node, j_node)`.
    pub fn node_value(&self, sys: &PhaseSystem, phase: usize, i_node: usize, j_node: usize) -> Result<f64> {
        let n = sys.n();
        if self.sigma.n() != n || phase >= n {
            return Err(Error::Argument(format!("phase {phase} or tension matrix does not fit {n} phases")));
        }
        let vals = self.gather(sys, i_node, j_node);
        let mut work = RingWork::new(n);
        top_two(&vals, n, &mut work.top);
        Ok(ring_median(&self.ball, &vals, n, phase, &self.sigma, self.eps_lambda, &mut work))
    }

    fn gather(&self, sys: &PhaseSystem, i: usize, j: usize) -> Vec<f64> {
        let spec = sys.spec();
        let mut vals = Vec::with_capacity(self.ball.len() * sys.n());
        for y in &self.ball.points {
            let (a, b) = (i as f64 + y.x / spec.hx(), j as f64 + y.y / spec.hy());
            vals.extend(sys.phases.iter().map(|p| p.sample_index(a, b)));
        }
        vals
    }

    pub fn step(&self, sys: &PhaseSystem) -> Result<PhaseSystem> {
        let n = sys.n();
        if self.sigma.n() != n {
            return Err(Error::Argument(format!(
                "surface tension matrix has {} phases, system has {n}",
                self.sigma.n()
            )));
        }
        let spec = *sys.spec();
        let reach = self.ball.radius;
        if reach > 0.5 * spec.lx().min(spec.ly()) {
            return Err(Error::Config(format!("disk radius {reach} exceeds half the domain size")));
        }
        let clamped;
        let (sys, skip) = match self.band {
            Some(b) if b > 0.0 => {
                clamped = PhaseSystem { phases: sys.phases.iter().map(|p| p.map(|v| v.clamp(-b, b))).collect() };
                let skip: Vec<Vec<bool>> = clamped.phases.iter().map(|p| clamped_plateau(p, b, reach)).collect();
                (&clamped, Some(skip))
            }
            Some(b) => return Err(Error::Config(format!("band width must be positive, got {b}"))),
            None => (sys, None),
        };
        let nx = spec.nx();
        let rows: Vec<Vec<Vec<f64>>> = (0..spec.ny())
            .into_par_iter()
            .map(|j| {
                let mut work = RingWork::new(n);
                let mut row_out = vec![vec![0.0; nx]; n];
                for i in 0..nx {
                    let node = j * nx + i;
                    let active: Vec<bool> = (0..n).map(|p| skip.as_ref().map_or(true, |s| !s[p][node])).collect();
                    if !active.iter().any(|&a| a) {
                        for p in 0..n {
                            row_out[p][i] = sys.phases[p].values()[node];
                        }
                        continue;
                    }
                    let vals = self.gather(sys, i, j);
                    top_two(&vals, n, &mut work.top);
                    for p in 0..n {
                        row_out[p][i] = if active[p] {
                            ring_median(&self.ball, &vals, n, p, &self.sigma, self.eps_lambda, &mut work)
                        } else {
                            sys.phases[p].values()[node]
                        };
                    }
                }
                row_out
            })
            .collect();
        let mut out: Vec<Vec<f64>> = vec![vec![0.0; spec.len()]; n];
        for (j, row) in rows.into_iter().enumerate() {
            for (p, r) in row.into_iter().enumerate() {
                out[p][j * nx..(j + 1) * nx].copy_from_slice(&r);
            }
        }
        let phases = out.into_iter().map(|v| ScalarField2D::new(spec, v)).collect::<Result<Vec<_>>>()?;
        Ok(PhaseSystem { phases })
    }

    pub fn run(&self, sys: &PhaseSystem, steps: usize) -> Result<PhaseSystem> {
        let mut s = sys.clone();
        for _ in 0..steps {
            s = self.step(&s)?;
        }
        Ok(s)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::grid::Boundary;
    use std::f64::consts::PI;
    use crate::median2p::sampled_weighted_median_with;
    use crate::tdyn::td_multiphase_step;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dyadic entries with a strict triangle inequality.
    pub(crate) fn random_sigma(n: usize, rng: &mut impl Rng) -> SurfaceTensionMatrix {
        loop {
            let mut rows = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    let v = rng.gen_range(4..=8) as f64 / 8.0;
                    rows[i][j] = v;
                    rows[j][i] = v;
                }
            }
            let strict = (0..n).all(|i| {
                (0..n).all(|j| (0..n).all(|k| i == j || j == k || i == k || rows[i][k] < rows[i][j] + rows[j][k]))
            });
            if strict {
                return SurfaceTensionMatrix::new(rows).unwrap();
            }
        }
    }

    /// Consistent random system: at each node one phase is positive.
    pub(crate) fn random_system(spec: GridSpec, n: usize, rng: &mut impl Rng) -> PhaseSystem {
        let labels: Vec<usize> = (0..spec.len()).map(|_| rng.gen_range(0..n)).collect();
        let phases = (0..n)
            .map(|p| {
                let v = labels
                    .iter()
                    .map(|&l| if l == p { rng.gen_range(0.0..1.0) } else { -rng.gen_range(1e-3..1.0) })
                    .collect();
                ScalarField2D::new(spec, v).unwrap()
            })
            .collect();
        PhaseSystem::new(phases).unwrap()
    }

    #[test]
    fn sigma_validation_names_triple() {
        let err = SurfaceTensionMatrix::new(vec![vec![0.0, 1.0, 3.0], vec![1.0, 0.0, 1.0], vec![3.0, 1.0, 0.0]])
            .unwrap_err()
            .to_string();
        assert!(err.contains("(1, 2, 3)"), "{err}");
        assert!(SurfaceTensionMatrix::new(vec![vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(SurfaceTensionMatrix::new(vec![vec![0.0, -1.0], vec![-1.0, 0.0]]).is_err());
        assert!(SurfaceTensionMatrix::new(vec![vec![1.0, 1.0], vec![1.0, 0.0]]).is_err());
        let s = SurfaceTensionMatrix::parse("0 1 1\n1 0 1 # c\n1 1 0\n").unwrap();
        assert_eq!(s, SurfaceTensionMatrix::uniform(3));
        assert_eq!(SurfaceTensionMatrix::parse(&s.to_string()).unwrap(), s);
    }

    fn sorted_reference(sys: &PhaseSystem, i: usize, x: Point, st: &SampledStencil, sigma: &SurfaceTensionMatrix, rule: MedianRule) -> f64 {
        // Independent path: sort, then scan levels in increasing order.
        let n = sys.n();
        let vals = read_all(sys, x, st, Eval::Nearest);
        let mut s: Vec<(f64, usize, f64)> = vals
            .chunks(n)
            .zip(st.weights())
            .map(|(r, &w)| (r[i], argmax_except(r, i), w))
            .collect();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total = st.total_weight();
        let mut consumed = vec![0.0; n];
        let mut masses = vec![0.0; n];
        let mut costs = vec![0.0; n];
        let mut l = 0;
        let mut prev = f64::NEG_INFINITY;
        loop {
            if l == s.len() {
                return s[l - 1].0;
            }
            let v = s[l].0;
            let mut trial = consumed.clone();
            let mut g = l;
            while g < s.len() && s[g].0 == v {
                trial[s[g].1] += s[g].2;
                g += 1;
            }
            state_costs(sigma, i, total, &trial, &mut masses, &mut costs);
            if argmin_lowest(&costs) != i {
                state_costs(sigma, i, total, &consumed, &mut masses, &mut costs);
                let tie = (i + 1..n).any(|j| costs[j] == costs[i]);
                return if rule == MedianRule::Midpoint && tie && prev.is_finite() { 0.5 * (prev + v) } else { v };
            }
            consumed = trial;
            prev = v;
            l = g;
        }
    }

    #[test]
    fn quickselect_matches_sorted_scan() {
        let spec = GridSpec::unit(20).unwrap();
        let st = SampledStencil::ball(&spec, 3.0 / 20.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let sigma = random_sigma(3, &mut rng);
            let mut sys = random_system(spec, 3, &mut rng);
            // Quantize to force repeated values.
            sys.phases.iter_mut().for_each(|p| *p = p.map(|v| (v * 4.0).round() / 4.0));
            for _ in 0..20 {
                let x = spec.node(rng.gen_range(0..20), rng.gen_range(0..20));
                for i in 0..3 {
                    for rule in [MedianRule::Sup, MedianRule::Midpoint] {
                        let a = multiphase_median_node(&sys, i, x, &st, &sigma, Eval::Nearest, rule).unwrap();
                        let b = sorted_reference(&sys, i, x, &st, &sigma, rule);
                        assert_eq!(a, b);
                    }
                }
            }
        }
    }

    #[test]
    fn two_phase_reduction() {
        let spec = GridSpec::unit(24).unwrap();
        let st = SampledStencil::circle(3.3 / 24.0, 16).unwrap();
        let sigma = SurfaceTensionMatrix::uniform(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = ScalarField2D::new(spec, (0..spec.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let sys = PhaseSystem::new(vec![phi.clone(), phi.map(|v| -v)]).unwrap();
        for rule in [MedianRule::Sup, MedianRule::Midpoint] {
            for eval in [Eval::Bilinear, Eval::Nearest] {
                for _ in 0..30 {
                    let x = Point::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                    let a = multiphase_median_node(&sys, 0, x, &st, &sigma, eval, rule).unwrap();
                    let b = sampled_weighted_median_with(&phi, x, &st, eval, rule).unwrap();
                    assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn psi_sums_match_cost_comparison() {
        let spec = GridSpec::unit(16).unwrap();
        let st = SampledStencil::ball(&spec, 2.0 / 16.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sigma = random_sigma(3, &mut rng);
        let sys = random_system(spec, 3, &mut rng);
        let x = spec.node(5, 7);
        for i in 0..3 {
            let med = multiphase_median_node(&sys, i, x, &st, &sigma, Eval::Nearest, MedianRule::Sup).unwrap();
            let wins = |l: f64| {
                let c: Vec<f64> = (0..3).map(|j| psi_ij(&sys, i, j, x, l, &st, &sigma, Eval::Nearest).unwrap()).collect();
                (0..3).all(|j| j == i || if j < i { c[i] < c[j] } else { c[i] <= c[j] })
            };
            assert!(wins(med));
            assert!(!wins(med + 1e-9) || med == sys.phases().iter().map(|p| p.max()).fold(f64::MIN, f64::max));
        }
    }

    #[test]
    fn zero_level_matches_threshold_dynamics() {
        let spec = GridSpec::unit(24).unwrap();
        let st = SampledStencil::ball(&spec, 3.0 / 24.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let sigma = random_sigma(3, &mut rng);
            let sys = random_system(spec, 3, &mut rng);
            let scheme = MultiphaseScheme::new(st.clone(), sigma.clone()).with_rule(MedianRule::Sup);
            let next = scheme.step(&sys).unwrap();
            let td = td_multiphase_step(&sys.partition(), &sigma, &st).unwrap();
            for i in 0..3 {
                assert_eq!(
                    crate::tdyn::IndicatorField2D::threshold(next.phase(i), 0.0),
                    td.phase(i),
                    "phase {i}"
                );
            }
            assert_eq!(next.inconsistent_nodes(), 0);
        }
    }

    #[test]
    fn band_leaves_interface_values_unchanged() {
        let spec = GridSpec::unit(48).unwrap();
        let st = SampledStencil::ball(&spec, 4.0 / 48.0).unwrap();
        let sigma = SurfaceTensionMatrix::uniform(3);
        // Three sectors around the center, values are signed distances
        // to the nearest foreign sector (approximately).
        let c = Point::new(0.5, 0.5);
        let sector = |p: Point| {
            let a = (p.y - c.y).atan2(p.x - c.x).rem_euclid(std::f64::consts::TAU);
            (a / (std::f64::consts::TAU / 3.0)) as usize % 3
        };
        let phases = (0..3)
            .map(|i| {
                ScalarField2D::from_fn(spec, |p| {
                    let mut d = f64::INFINITY;
                    for k in 0..48 {
                        for l in 0..48 {
                            let q = spec.node(k, l);
                            if (sector(q) == i) != (sector(p) == i) {
                                d = d.min(p.dist(q));
                            }
                        }
                    }
                    if sector(p) == i { d } else { -d }
                })
            })
            .collect();
        let sys = PhaseSystem::new(phases).unwrap();
        let b = 3.0 / 48.0;
        let full = MultiphaseScheme::new(st.clone(), sigma.clone()).with_rule(MedianRule::Sup).step(&sys).unwrap();
        let banded = MultiphaseScheme::new(st, sigma).with_rule(MedianRule::Sup).with_band(b).step(&sys).unwrap();
        for i in 0..3 {
            for (x, y) in full.phase(i).values().iter().zip(banded.phase(i).values()) {
                if x.abs() < b {
                    assert_eq!(x, y);
                }
            }
        }
    }

    #[test]
    fn monotone_in_own_phase() {
        let spec = GridSpec::unit(16).unwrap();
        let st = SampledStencil::ball(&spec, 2.0 / 16.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..10 {
            let sigma = random_sigma(3, &mut rng);
            let sys = random_system(spec, 3, &mut rng);
            let i = rng.gen_range(0..3);
            let mut raised = sys.clone();
            let bump: Vec<f64> = (0..spec.len()).map(|_| rng.gen_range(0.0..0.3)).collect();
            raised.phases[i] = raised.phases[i].zip_map(&ScalarField2D::new(spec, bump).unwrap(), |v, d| v + d).unwrap();
            for rule in [MedianRule::Sup, MedianRule::Midpoint] {
                let s = MultiphaseScheme::new(st.clone(), sigma.clone()).with_rule(rule);
                let a = s.step(&sys).unwrap();
                let b = s.step(&raised).unwrap();
                for (x, y) in a.phase(i).values().iter().zip(b.phase(i).values()) {
                    assert!(y >= x);
                }
            }
        }
    }

    #[test]
    fn ring_ball_weights() {
        let ball = RingBall::new(0.1, 0.01).unwrap();
        assert!((ball.total_weight() - PI * 0.01).abs() < 1e-15);
        assert!(ball.offsets().iter().all(|y| y.norm() < 0.1));
        assert!(RingBall::new(0.0, 0.01).is_err());
    }

    /// Area of the intersection of two disks at center distance `d`.
    fn lens_area(r1: f64, r2: f64, d: f64) -> f64 {
        if d >= r1 + r2 {
            return 0.0;
        }
        if d <= (r1 - r2).abs() {
            return PI * r1.min(r2).powi(2);
        }
        let a1 = ((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1)).acos();
        let a2 = ((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2)).acos();
        r1 * r1 * (a1 - a1.sin() * a1.cos()) + r2 * r2 * (a2 - a2.sin() * a2.cos())
    }

    #[test]
    fn ring_two_phase_circle_matches_lens_areas() {
        // phi = R - |x - c|; the disk median at x is the level lambda whose
        // disk of radius R - lambda covers half of the ball around x.
        let spec = GridSpec::unit(128).unwrap();
        let (c, big, r) = (Point::new(0.5, 0.5), 0.25, 0.05);
        let phi = ScalarField2D::from_fn(spec, |p| big - p.dist(c));
        let sys = PhaseSystem::new(vec![phi.clone(), phi.map(|v| -v)]).unwrap();
        let h = spec.hx();
        let scheme = RingMultiphaseScheme::new(RingBall::new(r, h).unwrap(), SurfaceTensionMatrix::uniform(2), 1e-9).unwrap();
        for (i, j) in [(96, 64), (98, 64), (90, 90), (64, 30), (100, 70)] {
            let d = spec.node(i, j).dist(c);
            let (mut lo, mut hi) = (-r, r);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if lens_area(big - mid, r, d) >= 0.5 * PI * r * r {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let got = scheme.node_value(&sys, 0, i, j).unwrap();
            assert!((got - lo).abs() < 0.02 * h, "node ({i}, {j}): {got} vs {lo}");
            let other = scheme.node_value(&sys, 1, i, j).unwrap();
            assert!((other + got).abs() < 1e-8, "{other} vs {got}");
        }
    }

    #[test]
    fn ring_keeps_planes_in_place() {
        let spec = GridSpec::new(64, 64, 1.0, 1.0, Boundary::Reflect).unwrap();
        let h = spec.hx();
        let n = Point::new(0.6, 0.8);
        let phi = ScalarField2D::from_fn(spec, |p| n.dot(p) - 0.7);
        let sys = PhaseSystem::new(vec![phi.clone(), phi.map(|v| -v)]).unwrap();
        let scheme = RingMultiphaseScheme::new(RingBall::new(6.0 * h, h).unwrap(), SurfaceTensionMatrix::uniform(2), 1e-10).unwrap();
        for (i, j) in [(20, 30), (33, 33), (40, 25)] {
            let got = scheme.node_value(&sys, 0, i, j).unwrap();
            assert!((got - phi.get(i, j)).abs() < 1e-3 * h, "{got} vs {}", phi.get(i, j));
        }
    }

    #[test]
    fn ring_monotone_up_to_tolerance() {
        let spec = GridSpec::unit(16).unwrap();
        let eps = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..5 {
            let sigma = random_sigma(3, &mut rng);
            let sys = random_system(spec, 3, &mut rng);
            let i = rng.gen_range(0..3);
            let mut raised = sys.clone();
            let bump: Vec<f64> = (0..spec.len()).map(|_| rng.gen_range(0.0..0.3)).collect();
            raised.phases[i] = raised.phases[i].zip_map(&ScalarField2D::new(spec, bump).unwrap(), |v, d| v + d).unwrap();
            let s = RingMultiphaseScheme::new(RingBall::new(2.5 / 16.0, 1.0 / 16.0).unwrap(), sigma, eps).unwrap();
            let a = s.step(&sys).unwrap();
            let b = s.step(&raised).unwrap();
            for (x, y) in a.phase(i).values().iter().zip(b.phase(i).values()) {
                assert!(y >= &(x - eps), "{y} < {x}");
            }
        }
    }

    #[test]
    fn ring_band_matches_unbanded_near_interface() {
        let spec = GridSpec::unit(48).unwrap();
        let h = spec.hx();
        let c = Point::new(0.5, 0.5);
        let phi = ScalarField2D::from_fn(spec, |p| 0.3 - p.dist(c));
        let sys = PhaseSystem::new(vec![phi.clone(), phi.map(|v| -v)]).unwrap();
        let plain = RingMultiphaseScheme::new(RingBall::new(4.0 * h, h).unwrap(), SurfaceTensionMatrix::uniform(2), 1e-6 * h).unwrap();
        let banded = plain.clone().with_band(5.0 * h);
        let a = plain.step(&sys).unwrap();
        let b = banded.step(&sys).unwrap();
        for (x, y) in a.phase(0).values().iter().zip(b.phase(0).values()) {
            if x.abs() < h {
                assert!((x - y).abs() <= 1e-6 * h, "{x} vs {y}");
            }
        }
    }
}
