//! Radial kernels and their moment functionals.
//!
//! [`CircleSumKernel`] is a positive combination of arclength measures on
//! concentric circles, `K = sum_j c_j delta_{|y| = alpha_j r}`. Its moments
//! `Gamma(p) = sum_j c_j alpha_j^p` are computed in exact rational
//! arithmetic. [`RadialProfile`] covers radial densities and shells used by
//! the `<K>_n = int r^n K(r) dr` moment algebra and the obstruction check.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Parses `3`, `-1.25`, `8/5` into an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a rational number: `{s}`"));
    if let Some((n, d)) = s.split_once('/') {
        let n = parse_rational(n)?;
        let d = parse_rational(d)?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(n / d);
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = digits.parse().map_err(|_| bad())?;
    let denom = num::pow(BigInt::from(10), frac_part.len());
    let r = BigRational::new(numer, denom);
    Ok(if neg { -r } else { r })
}

pub fn rational_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn rational_pow(x: &BigRational, p: i32) -> BigRational {
    let base = if p < 0 { x.recip() } else { x.clone() };
    let mut out = BigRational::one();
    for _ in 0..p.unsigned_abs() {
        out *= &base;
    }
    out
}

/// One circle of a [`CircleSumKernel`]: weight `c` on relative radius `alpha`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CircleComponent {
    pub weight: BigRational,
    pub alpha: BigRational,
}

/// Weighted sum of circle measures with relative radii `alpha_j` and a
/// physical scale `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleSumKernel {
    components: Vec<CircleComponent>,
    scale: f64,
}

impl CircleSumKernel {
    /// Builds a kernel from `(weight, alpha)` pairs. Components are sorted
    /// ascending by radius.
    pub fn new(components: Vec<(BigRational, BigRational)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("circle kernel needs at least one circle".into()));
        }
        let mut comps: Vec<CircleComponent> = components
            .into_iter()
            .map(|(weight, alpha)| CircleComponent { weight, alpha })
            .collect();
        if comps.iter().any(|c| !c.weight.is_positive()) {
            return Err(Error::Config("circle weights must be positive".into()));
        }
        if comps.iter().any(|c| !c.alpha.is_positive()) {
            return Err(Error::Config("circle radii must be positive".into()));
        }
        comps.sort_by(|a, b| a.alpha.cmp(&b.alpha));
        if comps.windows(2).any(|w| w[0].alpha == w[1].alpha) {
            return Err(Error::Config("circle radii must be distinct".into()));
        }
        Ok(Self { components: comps, scale: 1.0 })
    }

    /// Single unit-weight circle of relative radius 1.
    pub fn single_circle() -> Self {
        Self::new(vec![(BigRational::one(), BigRational::one())]).expect("valid")
    }

    /// The positive three-circle kernel `{(1, 1), (8/5, 2), (32/5, 1/2)}`
    /// with second order consistency.
    pub fn second_order() -> Self {
        let q = |n: i64, d: i64| BigRational::new(n.into(), d.into());
        Self::new(vec![(q(1, 1), q(1, 1)), (q(8, 5), q(2, 1)), (q(32, 5), q(1, 2))]).expect("valid")
    }

    pub fn components(&self) -> &[CircleComponent] {
        &self.components
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn with_scale(mut self, r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Config(format!("kernel scale must be positive, got {r}")));
        }
        self.scale = r;
        Ok(self)
    }

    /// `Gamma(p) = sum_j c_j alpha_j^p`, exactly.
    pub fn gamma_moment(&self, p: i32) -> BigRational {
        self.components
            .iter()
            .map(|c| &c.weight * rational_pow(&c.alpha, p))
            .fold(BigRational::zero(), |a, b| a + b)
    }

    /// `(c_j, alpha_j)` in floating point.
    pub fn components_f64(&self) -> Vec<(f64, f64)> {
        self.components
            .iter()
            .map(|c| (rational_f64(&c.weight), rational_f64(&c.alpha)))
            .collect()
    }

    /// Physical circle radii `alpha_j r`.
    pub fn radii(&self) -> Vec<f64> {
        self.components_f64().into_iter().map(|(_, a)| a * self.scale).collect()
    }

    pub fn max_radius(&self) -> f64 {
        self.radii().into_iter().fold(0.0, f64::max)
    }

    /// Total arclength mass `W = sum_j c_j 2 pi alpha_j r`.
    pub fn total_mass(&self) -> f64 {
        self.components_f64()
            .into_iter()
            .map(|(c, a)| c * std::f64::consts::TAU * a * self.scale)
            .sum()
    }

    /// Leading coefficient `Gamma(2) / (2 Gamma(0))`: the interface moves
    /// with normal speed `coefficient * kappa * r^2` per step.
    pub fn time_coefficient(&self) -> BigRational {
        self.gamma_moment(2) / (BigRational::from_integer(2.into()) * self.gamma_moment(0))
    }
}

impl fmt::Display for CircleSumKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("circles:")?;
        for (k, c) in self.components.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}@{}", c.weight, c.alpha)?;
        }
        Ok(())
    }
}

/// Exact values of the second-order moment conditions for a circle kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentIdentities {
    /// `Gamma(2) / (2 Gamma(0))`, target `1/2`.
    pub beta0: BigRational,
    /// Coefficient of `f''^3` in `beta_2`, target `-1/4`.
    pub beta2_cubic: BigRational,
    /// `Gamma(3) / (24 Gamma(-1))`, the coefficient of `f''''` in `beta_2`.
    pub beta2_quartic: BigRational,
}

impl MomentIdentities {
    pub fn of(k: &CircleSumKernel) -> Self {
        let g = |p| k.gamma_moment(p);
        let q = |n: i64| BigRational::from_integer(n.into());
        let (g0, g2) = (g(0), g(2));
        let beta0 = &g2 / (q(2) * &g0);
        let beta2_cubic = -(&g2 * &g2 * &g2 * g(-2)) / (q(48) * rational_pow(&g0, 4))
            + (&g2 * &g2) / (q(8) * &g0 * &g0)
            - (q(5) * g(4)) / (q(48) * &g0);
        let beta2_quartic = g(3) / (q(24) * g(-1));
        Self { beta0, beta2_cubic, beta2_quartic }
    }

    pub fn beta0_target() -> BigRational {
        BigRational::new(1.into(), 2.into())
    }

    pub fn beta2_cubic_target() -> BigRational {
        BigRational::new((-1).into(), 4.into())
    }

    /// The value stated alongside the other two conditions.
    pub fn beta2_quartic_stated() -> BigRational {
        BigRational::new(1.into(), 8.into())
    }

    pub fn beta2_quartic_residual(&self) -> BigRational {
        &self.beta2_quartic - Self::beta2_quartic_stated()
    }
}

impl fmt::Display for MomentIdentities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Gamma(2)/(2 Gamma(0))        = {} (target 1/2)", self.beta0)?;
        writeln!(f, "beta2 f''^3 coefficient      = {} (target -1/4)", self.beta2_cubic)?;
        write!(
            f,
            "Gamma(3)/(24 Gamma(-1))      = {} (stated 1/8, residual {})",
            self.beta2_quartic,
            self.beta2_quartic_residual()
        )
    }
}

/// `Gamma(2) / (2 Gamma(0))` for the uniform disk `1_{B_r}` seen as a stack
/// of unit-weight circles, `Gamma(p) = int_0^1 a^p da = 1/(p+1)`.
pub fn ball_time_coefficient() -> f64 {
    (1.0 / 3.0) / 2.0
}

pub type ProfileFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Nonnegative radial profile `K(rho)` on `[0, inf)`.
#[derive(Clone)]
pub enum RadialProfile {
    /// `exp(-rho^2 / (2 sigma^2))`.
    Gaussian { sigma: f64 },
    /// Indicator of `[0, radius]`.
    Ball { radius: f64 },
    /// Unit point mass at `radius`.
    Shell { radius: f64 },
    /// `sum_j w_j delta_{rho_j}` as `(w_j, rho_j)` pairs.
    ShellSum { shells: Vec<(f64, f64)> },
    /// Arbitrary profile integrated numerically; `support` bounds it if set.
    Custom { profile: ProfileFn, support: Option<f64> },
}

impl fmt::Debug for RadialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian { sigma } => write!(f, "Gaussian {{ sigma: {sigma} }}"),
            Self::Ball { radius } => write!(f, "Ball {{ radius: {radius} }}"),
            Self::Shell { radius } => write!(f, "Shell {{ radius: {radius} }}"),
            Self::ShellSum { shells } => write!(f, "ShellSum {{ shells: {shells:?} }}"),
            Self::Custom { support, .. } => write!(f, "Custom {{ support: {support:?} }}"),
        }
    }
}

impl RadialProfile {
    /// Multiplies the density by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        match self.clone() {
            Self::Shell { radius } => Self::ShellSum { shells: vec![(c, radius)] },
            Self::ShellSum { shells } => {
                Self::ShellSum { shells: shells.into_iter().map(|(w, r)| (c * w, r)).collect() }
            }
            other => {
                let support = match &other {
                    Self::Ball { radius } => Some(*radius),
                    Self::Custom { support, .. } => *support,
                    _ => None,
                };
                let inner = other;
                Self::Custom {
                    profile: Arc::new(move |r| c * inner.density(r)),
                    support,
                }
            }
        }
    }

    /// Pointwise density; shells have no density and return 0.
    pub fn density(&self, r: f64) -> f64 {
        match self {
            Self::Gaussian { sigma } => (-r * r / (2.0 * sigma * sigma)).exp(),
            Self::Ball { radius } => {
                if (0.0..=*radius).contains(&r) {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Shell { .. } | Self::ShellSum { .. } => 0.0,
            Self::Custom { profile, .. } => profile(r),
        }
    }
}

/// `Gamma(x)` for `x` a positive integer or half-integer.
fn gamma_half_integer(twice_x: u32) -> f64 {
    let mut v = if twice_x % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut t = if twice_x % 2 == 0 { 2 } else { 1 };
    while t < twice_x {
        v *= t as f64 / 2.0;
        t += 2;
    }
    v
}

/// `<K>_n = int_0^inf rho^n K(rho) drho`.
pub fn bracket_moment(k: &RadialProfile, n: i32) -> Result<f64> {
    let divergent = || Error::Domain(format!("moment <K>_{n} diverges for {k:?}"));
    match k {
        RadialProfile::Gaussian { sigma } => {
            if n < 0 {
                return Err(divergent());
            }
            let twice = (n + 1) as u32;
            Ok(sigma.powi(n + 1) * 2f64.powf((n as f64 - 1.0) / 2.0) * gamma_half_integer(twice))
        }
        RadialProfile::Ball { radius } => {
            if n <= -1 {
                return Err(divergent());
            }
            Ok(radius.powi(n + 1) / (n + 1) as f64)
        }
        RadialProfile::Shell { radius } => Ok(radius.powi(n)),
        RadialProfile::ShellSum { shells } => Ok(shells.iter().map(|&(w, r)| w * r.powi(n)).sum()),
        RadialProfile::Custom { profile, support } => {
            if n < 0 {
                return Err(divergent());
            }
            let v = match support {
                Some(s) => adaptive_simpson(&|r: f64| r.powi(n) * profile(r), 0.0, *s, 1e-10),
                None => {
                    // rho = t / (1 - t) maps [0, 1) onto [0, inf).
                    let g = |t: f64| {
                        if t >= 1.0 {
                            return 0.0;
                        }
                        let r = t / (1.0 - t);
                        r.powi(n) * profile(r) / ((1.0 - t) * (1.0 - t))
                    };
                    adaptive_simpson(&g, 0.0, 1.0, 1e-10)
                }
            };
            if v.is_finite() {
                Ok(v)
            } else {
                Err(divergent())
            }
        }
    }
}

/// Adaptive Simpson quadrature with relative tolerance `rel_tol`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    // A coarse pass fixes the absolute tolerance from the magnitude.
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    let mut coarse = 0.0;
    let mut parts = Vec::with_capacity(pieces);
    for k in 0..pieces {
        let x0 = a + k as f64 * h;
        let x1 = x0 + h;
        let (f0, fm, f1) = (f(x0), f(0.5 * (x0 + x1)), f(x1));
        let s = simpson(f0, fm, f1, x0, x1);
        coarse += s.abs();
        parts.push((x0, x1, f0, fm, f1, s));
    }
    let tol = (rel_tol * coarse).max(1e-300) / pieces as f64;
    parts
        .into_iter()
        .map(|(x0, x1, f0, fm, f1, s)| recurse(f, x0, x1, f0, fm, f1, s, tol, 40))
        .sum()
}

/// Expansion coefficients of the 3D shell-kernel interface velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BCoefficients {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
}

impl BCoefficients {
    /// From the ratios `a = <K>_3/<K>_1`, `b = <K>_5/<K>_1`.
    pub fn from_ratios(a: f64, b: f64) -> Self {
        Self {
            b0: a / 4.0,
            b1: b / 64.0,
            b2: -(5.0 * b / 128.0 - a * a / 32.0),
            b3: 3.0 * b / 32.0 - a * a / 16.0,
        }
    }

    /// `(B0^2 - 2 B1, 2 B1 + B2)`: both vanish for a consistent kernel.
    pub fn residuals(&self) -> (f64, f64) {
        (self.b0 * self.b0 - 2.0 * self.b1, 2.0 * self.b1 + self.b2)
    }
}

pub fn b_coefficients(k: &RadialProfile) -> Result<BCoefficients> {
    let k1 = bracket_moment(k, 1)?;
    if k1 == 0.0 {
        return Err(Error::Domain("first moment vanishes".into()));
    }
    let k3 = bracket_moment(k, 3)?;
    let k5 = bracket_moment(k, 5)?;
    Ok(BCoefficients::from_ratios(k3 / k1, k5 / k1))
}

/// Two-shell kernel `w1 delta_{rho1} + w2 delta_{rho2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoShell {
    pub w1: f64,
    pub rho1: f64,
    pub w2: f64,
    pub rho2: f64,
}

impl TwoShell {
    pub fn profile(&self) -> RadialProfile {
        RadialProfile::ShellSum { shells: vec![(self.w1, self.rho1), (self.w2, self.rho2)] }
    }

    fn moment(&self, n: i32) -> f64 {
        self.w1 * self.rho1.powi(n) + self.w2 * self.rho2.powi(n)
    }

    /// `(a, b) = (<K>_3/<K>_1, <K>_5/<K>_1)`.
    pub fn ratios(&self) -> (f64, f64) {
        let k1 = self.moment(1);
        (self.moment(3) / k1, self.moment(5) / k1)
    }

    pub fn residuals(&self) -> (f64, f64) {
        let (a, b) = self.ratios();
        BCoefficients::from_ratios(a, b).residuals()
    }
}

/// A constrained solution candidate and its diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct ObstructionSolution {
    pub kernel: TwoShell,
    pub residual: f64,
    pub b0: f64,
    pub k5_over_k1: f64,
}

#[derive(Debug, Clone)]
pub struct ObstructionReport {
    /// Residual `B0^2 - 2 B1` of the unit shell.
    pub single_shell_residual: f64,
    /// Solutions of both constraints found by the constrained solve.
    pub solutions: Vec<ObstructionSolution>,
    /// Smallest scale-free residual `|R| / (a^2 + |b|)` over random kernels.
    pub min_normalized_residual: f64,
    /// Solution of the two constraints in the ratio variables `(a^2, b)`.
    pub ratio_solution: (f64, f64),
    pub tol: f64,
}

impl ObstructionReport {
    pub fn max_b0(&self) -> f64 {
        self.solutions.iter().map(|s| s.b0.abs()).fold(0.0, f64::max)
    }

    pub fn max_k5_ratio(&self) -> f64 {
        self.solutions.iter().map(|s| s.k5_over_k1.abs()).fold(0.0, f64::max)
    }

    /// Every solution found has vanishing `<K>_5/<K>_1` and `B0`.
    pub fn confirmed(&self) -> bool {
        !self.solutions.is_empty() && self.max_b0() < self.tol && self.max_k5_ratio() < self.tol
    }
}

impl fmt::Display for ObstructionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "single shell residual B0^2 - 2B1 = {:.6e}", self.single_shell_residual)?;
        writeln!(f, "constrained solutions found      = {}", self.solutions.len())?;
        writeln!(f, "max |B0| over solutions          = {:.3e}", self.max_b0())?;
        writeln!(f, "max |<K>_5/<K>_1| over solutions = {:.3e}", self.max_k5_ratio())?;
        writeln!(f, "min scale-free residual          = {:.6e}", self.min_normalized_residual)?;
        writeln!(
            f,
            "ratio-space solution (a^2, b)    = ({:.3e}, {:.3e})",
            self.ratio_solution.0, self.ratio_solution.1
        )?;
        write!(
            f,
            "conclusion: {}",
            if self.confirmed() {
                "every solution has <K>_5 = 0 and B0 = 0; no consistent shell kernel"
            } else {
                "NOT confirmed"
            }
        )
    }
}

/// Searches the two-shell family for kernels with `B0^2 = 2 B1` and
/// `2 B1 = -B2`, from `starts` random initial points.
pub fn check_obstruction(starts: usize, seed: u64) -> ObstructionReport {
    let tol = 1e-8;
    let single_shell_residual = TwoShell { w1: 1.0, rho1: 1.0, w2: 0.0, rho2: 1.0 }.residuals().0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut solutions = Vec::new();
    let mut min_normalized = f64::INFINITY;
    for _ in 0..starts {
        let x0 = [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..1.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..1.0),
        ];
        let sample = from_log(&x0);
        let (a, b) = sample.ratios();
        let (r1, r2) = sample.residuals();
        min_normalized = min_normalized.min(r1.hypot(r2) / (a * a + b.abs()));
        if let Some(kernel) = levenberg_marquardt(x0, 1e-18) {
            let (r1, r2) = kernel.residuals();
            let (a, b) = kernel.ratios();
            solutions.push(ObstructionSolution {
                kernel,
                residual: r1.hypot(r2),
                b0: a / 4.0,
                k5_over_k1: b,
            });
        }
    }
    ObstructionReport {
        single_shell_residual,
        solutions,
        min_normalized_residual: min_normalized,
        ratio_solution: solve_ratio_system(),
        tol,
    }
}

fn from_log(x: &[f64; 4]) -> TwoShell {
    TwoShell { w1: x[0].exp(), rho1: x[1].exp(), w2: x[2].exp(), rho2: x[3].exp() }
}

/// Levenberg-Marquardt on log-parameters; returns the kernel once the
/// residual norm drops below `target`.
fn levenberg_marquardt(mut x: [f64; 4], target: f64) -> Option<TwoShell> {
    let resid = |x: &[f64; 4]| -> [f64; 2] {
        let (r1, r2) = from_log(x).residuals();
        [r1, r2]
    };
    let norm2 = |r: &[f64; 2]| r[0] * r[0] + r[1] * r[1];
    let mut mu = 1e-3;
    let mut r = resid(&x);
    for _ in 0..20_000 {
        if norm2(&r).sqrt() < target {
            return Some(from_log(&x));
        }
        let mut jac = [[0.0; 4]; 2];
        for k in 0..4 {
            let h = 1e-6;
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let (rp, rm) = (resid(&xp), resid(&xm));
            for i in 0..2 {
                jac[i][k] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        // Solve (J^T J + mu I) dx = -J^T r.
        let mut a = [[0.0; 4]; 4];
        let mut g = [0.0; 4];
        for p in 0..4 {
            for q in 0..4 {
                a[p][q] = jac[0][p] * jac[0][q] + jac[1][p] * jac[1][q];
            }
            g[p] = -(jac[0][p] * r[0] + jac[1][p] * r[1]);
        }
        let scale = (0..4).map(|p| a[p][p]).fold(0.0, f64::max).max(1e-300);
        loop {
            let mut m = a;
            for (p, row) in m.iter_mut().enumerate() {
                row[p] += mu * scale;
            }
            let dx = solve4(m, g)?;
            let mut xn = x;
            for p in 0..4 {
                xn[p] += dx[p].clamp(-2.0, 2.0);
            }
            let rn = resid(&xn);
            if norm2(&rn) < norm2(&r) {
                x = xn;
                r = rn;
                mu = (mu / 3.0).max(1e-12);
                break;
            }
            mu *= 4.0;
            if mu > 1e12 {
                return None;
            }
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > 700.0) {
            return None;
        }
    }
    None
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for c in 0..4 {
        let piv = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..4 {
            let f = a[r][c] / a[c][c];
            for k in c..4 {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// The constraints are linear in `(a^2, b)`:
/// `a^2/16 - b/32 = 0` and `a^2/32 - b/128 = 0`.
fn solve_ratio_system() -> (f64, f64) {
    let (m11, m12, m21, m22) = (1.0 / 16.0, -1.0 / 32.0, 1.0 / 32.0, -1.0 / 128.0);
    let det = m11 * m22 - m12 * m21;
    let (r1, r2) = (0.0, 0.0);
    ((r1 * m22 - m12 * r2) / det, (m11 * r2 - m21 * r1) / det)
}

/// Kernel selector used by the command line and the step drivers.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `circles:c1@a1,c2@a2,...` (weight `@` relative radius).
    Circles(CircleSumKernel),
    /// `ball:r`, the sampled uniform disk of radius `r` (physical units).
    Ball(f64),
    /// `gauss:s`, discrete Gaussian of standard deviation `s` (physical units).
    Gauss(f64),
}

impl FromStr for KernelSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, body) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("kernel spec `{s}` lacks `kind:`")))?;
        let positive = |v: &str| -> Result<f64> {
            let x: f64 = v.trim().parse().map_err(|_| Error::Parse(format!("bad number `{v}`")))?;
            if x > 0.0 && x.is_finite() {
                Ok(x)
            } else {
                Err(Error::Parse(format!("kernel parameter must be positive, got `{v}`")))
            }
        };
        match kind {
            "circles" => {
                let comps = body
                    .split(',')
                    .map(|item| {
                        let (w, a) = item
                            .split_once('@')
                            .ok_or_else(|| Error::Parse(format!("circle `{item}` lacks `@`")))?;
                        Ok((parse_rational(w)?, parse_rational(a)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(KernelSpec::Circles(CircleSumKernel::new(comps)?))
            }
            "ball" => Ok(KernelSpec::Ball(positive(body)?)),
            "gauss" => Ok(KernelSpec::Gauss(positive(body)?)),
            _ => Err(Error::Parse(format!("unknown kernel kind `{kind}`"))),
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Circles(k) => write!(f, "{k}"),
            KernelSpec::Ball(r) => write!(f, "ball:{r}"),
            KernelSpec::Gauss(s) => write!(f, "gauss:{s}"),
        }
    }
}
