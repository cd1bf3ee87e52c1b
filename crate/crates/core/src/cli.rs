//! Command line front end.
//!
//! Every subcommand reads its settings from `--key value` flags and from an
//! optional `--config` file of `key = value` lines (`#` starts a comment).
//! Flags win over file entries. Keys a subcommand does not use are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};

use crate::bench::{
    convergence_study, energy_experiment, stacking_experiment, GrimReaperSetup, Preset,
};
use crate::denoise::{denoise, DenoiseProblem};
use crate::energy::{field_energy, monitor, multiphase_energy, EnergyReport};
use crate::error::{Error, Result};
use crate::grid::{extract_contour, init_shape, Boundary, GridSpec, Point, Shape};
use crate::io;
use crate::kernels::{ball_time_coefficient, check_obstruction, CircleSumKernel, KernelSpec, MomentIdentities};
use crate::median2p::{
    scaled_kernel, BisectionParams, Eval, MedianMethod, MedianRule, MedianScheme, SampledStencil, Variant,
};
use crate::multiphase::{MultiphaseScheme, PhaseSystem, RingBall, RingMultiphaseScheme, SurfaceTensionMatrix};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

/// Every recognised key with its help text.
const KEYS: &[(&str, &str)] = &[
    ("grid", "grid size `n` or `nx,ny`"),
    ("lx", "domain width"),
    ("ly", "domain height"),
    ("boundary", "periodic, clamped or reflect"),
    ("shape", "circle:cx,cy,r | ellipse:cx,cy,a,b | flower:cx,cy,r0,amp,petals | halfplane:nx,ny,offset"),
    ("input", "input file (field dump, or PGM image for denoise)"),
    ("kernel", "circles:c@a,... | ball:r | gauss:s"),
    ("scheme", "jacobi (alias median, median2) or two-step"),
    ("dt", "time step"),
    ("steps", "number of steps"),
    ("band", "band half-width in grid cells"),
    ("eps-arc", "arc bisection tolerance"),
    ("eps-lambda", "median bisection tolerance"),
    ("labels", "initial phase labels (CSV, 1-based)"),
    ("sigma-file", "surface tension matrix file (alias --sigma)"),
    ("phases", "expected number of phases"),
    ("reaper", "start from the grim reaper with this alpha"),
    ("quadrature", "rings or lattice"),
    ("preset", "table1, table2, table3 or fig3"),
    ("levels", "number of levels"),
    ("fields", "number of random fields"),
    ("offsets", "stencil size"),
    ("starts", "random starting points"),
    ("gamma", "fidelity weight"),
    ("width", "gaussian width in grid cells"),
    ("tol", "relative tolerance"),
    ("seed", "random seed"),
    ("output", "output directory"),
];

/// Subcommands with the keys each accepts.
const COMMANDS: &[(&str, &str, &[&str])] = &[
    (
        "evolve2p",
        "two-phase median filter flow of a level set function",
        &["grid", "lx", "ly", "boundary", "shape", "input", "kernel", "scheme", "dt", "steps", "band", "eps-arc", "eps-lambda", "output"],
    ),
    (
        "evolve-mp",
        "multiphase median flow of a labelled partition",
        &["grid", "lx", "ly", "boundary", "labels", "sigma-file", "phases", "reaper", "kernel", "quadrature", "dt", "steps", "band", "output"],
    ),
    ("study", "convergence study preset", &["preset", "grid", "levels", "output"]),
    ("verify-kernel", "exact moment identities of a circle kernel", &["kernel"]),
    ("check-obstruction", "constrained search over two-shell kernels", &["starts", "seed"]),
    ("stacking-test", "thresholded median against threshold dynamics", &["fields", "grid", "offsets", "levels", "seed", "output"]),
    ("energy-test", "energy dissipation on random Lipschitz fields", &["fields", "grid", "steps", "seed", "output"]),
    ("denoise", "nonlocal total variation denoising of a PGM image", &["input", "gamma", "width", "steps", "tol", "boundary", "output"]),
];

pub fn command() -> Command {
    let mut cmd = Command::new("median-flow")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Median filter schemes for curvature flow")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for &(name, about, keys) in COMMANDS {
        let mut sub = Command::new(name)
            .about(about)
            .arg(Arg::new("config").long("config").value_name("FILE").help("key = value settings file"));
        for key in keys {
            let help = KEYS.iter().find(|(k, _)| k == key).map(|(_, h)| *h).unwrap_or("");
            let mut arg = Arg::new(*key).long(*key).value_name("VALUE").allow_negative_numbers(true).help(help);
            if *key == "sigma-file" {
                arg = arg.visible_alias("sigma");
            }
            sub = sub.arg(arg);
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Validated settings of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<String, String>,
}

fn config_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

/// Parses `key = value` lines.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl RunConfig {
    /// Merges file entries and flags of the subcommand `name`.
    pub fn from_matches(name: &str, m: &ArgMatches) -> Result<Self> {
        let keys = COMMANDS
            .iter()
            .find(|c| c.0 == name)
            .map(|c| c.2)
            .ok_or_else(|| Error::Config(format!("unknown command `{name}`")))?;
        let mut values = match m.get_one::<String>("config") {
            Some(path) => parse_config_text(&fs::read_to_string(path).map_err(|e| config_err("config", e))?)?,
            None => BTreeMap::new(),
        };
        if let Some(bad) = values.keys().find(|k| !keys.contains(&k.as_str())) {
            return Err(config_err(bad, format!("unknown key for `{name}`")));
        }
        for key in keys {
            if let Some(v) = m.get_one::<String>(key) {
                values.insert(key.to_string(), v.clone());
            }
        }
        let cfg = Self { command: name.to_string(), values };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_args<I, T>(args: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<std::ffi::OsString> + Clone,
    {
        let m = command().try_get_matches_from(args).map_err(|e| Error::Config(e.to_string()))?;
        let (name, sub) = m.subcommand().expect("subcommand required");
        Self::from_matches(name, sub)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key).map(|v| v.parse::<T>().map_err(|e| config_err(key, format!("`{v}`: {e}")))).transpose()
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parsed(key)?.ok_or_else(|| config_err(key, "missing required key"))
    }

    fn positive(&self, key: &str) -> Result<Option<f64>> {
        match self.parsed::<f64>(key)? {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(config_err(key, format!("must be positive, got {x}"))),
            x => Ok(x),
        }
    }

    fn count(&self, key: &str, default: usize) -> Result<usize> {
        match self.parsed::<usize>(key)?.unwrap_or(default) {
            0 => Err(config_err(key, "must be at least 1")),
            n => Ok(n),
        }
    }

    fn seed(&self) -> Result<u64> {
        Ok(self.parsed("seed")?.unwrap_or(1))
    }

    fn output(&self) -> PathBuf {
        PathBuf::from(self.raw("output").unwrap_or("out"))
    }

    fn grid(&self, default: Option<usize>) -> Result<GridSpec> {
        let (nx, ny) = match self.raw("grid") {
            Some(g) => parse_grid(g).map_err(|e| config_err("grid", e))?,
            None => {
                let n = default.ok_or_else(|| config_err("grid", "missing required key"))?;
                (n, n)
            }
        };
        let lx = self.positive("lx")?.unwrap_or(1.0);
        let ly = self.positive("ly")?.unwrap_or(lx * ny as f64 / nx as f64);
        let boundary = self.parsed::<Boundary>("boundary")?.unwrap_or_default();
        GridSpec::new(nx, ny, lx, ly, boundary).map_err(|e| config_err("grid", e))
    }

    fn variant(&self) -> Result<Variant> {
        match self.raw("scheme").unwrap_or("jacobi") {
            "jacobi" | "median" | "median2" => Ok(Variant::Jacobi),
            "two-step" | "two_step" => Ok(Variant::TwoStep),
            s => Err(config_err("scheme", format!("unknown scheme `{s}`"))),
        }
    }

    fn sigma(&self) -> Result<Option<SurfaceTensionMatrix>> {
        self.raw("sigma-file")
            .map(|p| io::read_sigma(Path::new(p)).map_err(|e| config_err("sigma-file", e)))
            .transpose()
    }

    /// Checks every key a command reads so that errors surface before any
    /// work starts.
    pub fn validate(&self) -> Result<()> {
        for key in ["lx", "ly", "dt", "band", "eps-arc", "eps-lambda", "gamma", "width", "tol"] {
            self.positive(key)?;
        }
        for key in ["steps", "levels", "fields", "offsets", "starts"] {
            if self.raw(key).is_some() {
                self.count(key, 1)?;
            }
        }
        self.seed()?;
        match self.command.as_str() {
            "evolve2p" => {
                let spec = self.grid(None)?;
                self.required::<usize>("steps")?;
                self.variant()?;
                match (self.raw("shape"), self.raw("input")) {
                    (Some(s), None) => {
                        parse_shape(s).map_err(|e| config_err("shape", e))?;
                    }
                    (None, Some(_)) => {}
                    _ => return Err(config_err("shape", "give exactly one of `shape` and `input`")),
                }
                let kernel: KernelSpec = self.required("kernel")?;
                let reach = match &kernel {
                    KernelSpec::Circles(k) => {
                        let dt = self.positive("dt")?.ok_or_else(|| config_err("dt", "missing required key"))?;
                        scaled_kernel(k, dt)?.max_radius()
                    }
                    KernelSpec::Ball(r) => *r,
                    KernelSpec::Gauss(s) => 2.0 * s,
                };
                check_reach(&spec, reach)
            }
            "evolve-mp" => {
                let spec = match self.parsed::<f64>("reaper")? {
                    Some(alpha) => {
                        let setup = GrimReaperSetup::new(alpha).map_err(|e| config_err("reaper", e))?;
                        let n = self.raw("grid").map(parse_grid).transpose().map_err(|e| config_err("grid", e))?;
                        setup.grid(n.map_or(100, |g| g.0)).map_err(|e| config_err("grid", e))?
                    }
                    None => {
                        self.raw("labels").ok_or_else(|| config_err("labels", "missing required key (or give `reaper`)"))?;
                        let sigma = self.sigma()?.ok_or_else(|| config_err("sigma-file", "missing required key"))?;
                        if let Some(n) = self.parsed::<usize>("phases")? {
                            if n != sigma.n() {
                                return Err(config_err("phases", format!("{n} phases but the sigma matrix is {0}x{0}", sigma.n())));
                            }
                        }
                        self.grid(None)?
                    }
                };
                self.required::<usize>("steps")?;
                let r = self.mp_radius()?;
                if !matches!(self.raw("quadrature").unwrap_or("rings"), "rings" | "lattice") {
                    return Err(config_err("quadrature", "expected `rings` or `lattice`"));
                }
                check_reach(&spec, r)
            }
            "study" => {
                self.required::<Preset>("preset")?;
                if self.raw("grid").is_some() {
                    self.required::<usize>("grid")?;
                }
                Ok(())
            }
            "verify-kernel" => {
                match self.parsed::<KernelSpec>("kernel")? {
                    None | Some(KernelSpec::Circles(_)) => Ok(()),
                    Some(_) => Err(config_err("kernel", "expected a `circles:` kernel")),
                }
            }
            "stacking-test" | "energy-test" => {
                self.grid(Some(64))?;
                Ok(())
            }
            "denoise" => {
                self.raw("input").ok_or_else(|| config_err("input", "missing required key"))?;
                self.positive("gamma")?.ok_or_else(|| config_err("gamma", "missing required key"))?;
                self.parsed::<Boundary>("boundary")?;
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Ball radius of the multiphase run: `ball:r` or from `dt`.
    fn mp_radius(&self) -> Result<f64> {
        match (self.parsed::<KernelSpec>("kernel")?, self.positive("dt")?) {
            (Some(KernelSpec::Ball(r)), None) => Ok(r),
            (None, Some(dt)) => Ok((dt / ball_time_coefficient()).sqrt()),
            (Some(KernelSpec::Ball(_)), Some(_)) => Err(config_err("dt", "give either `dt` or a `ball:` kernel, not both")),
            (Some(_), _) => Err(config_err("kernel", "multiphase runs use a `ball:r` kernel")),
            (None, None) => Err(config_err("dt", "missing required key (or give a `ball:` kernel)")),
        }
    }
}

fn check_reach(spec: &GridSpec, reach: f64) -> Result<()> {
    let limit = 0.25 * spec.lx().min(spec.ly());
    if reach >= limit {
        return Err(config_err("kernel", format!("radius {reach} must be below a quarter of the domain ({limit})")));
    }
    Ok(())
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let nums: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match nums[..] {
        [n] => Ok((n, n)),
        [nx, ny] => Ok((nx, ny)),
        _ => Err(format!("expected `n` or `nx,ny`, got `{s}`")),
    }
}

/// Parses `circle:cx,cy,r`, `ellipse:cx,cy,a,b`,
/// `flower:cx,cy,r0,amp,petals` and `halfplane:nx,ny,offset`.
pub fn parse_shape(s: &str) -> Result<Shape> {
    let (kind, body) = s.split_once(':').ok_or_else(|| Error::Parse(format!("shape `{s}` lacks `kind:`")))?;
    let v = body
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{t}` in shape"))))
        .collect::<Result<Vec<f64>>>()?;
    let arity = |n: usize| {
        if v.len() == n {
            Ok(())
        } else {
            Err(Error::Parse(format!("`{kind}` takes {n} numbers, got {}", v.len())))
        }
    };
    match kind {
        "circle" => {
            arity(3)?;
            Ok(Shape::Circle { center: Point::new(v[0], v[1]), radius: v[2] })
        }
        "ellipse" => {
            arity(4)?;
            Ok(Shape::Ellipse { center: Point::new(v[0], v[1]), a: v[2], b: v[3] })
        }
        "flower" => {
            arity(5)?;
            if v[4] < 1.0 || v[4].fract() != 0.0 {
                return Err(Error::Parse(format!("petal count must be a positive integer, got {}", v[4])));
            }
            Ok(Shape::Flower { center: Point::new(v[0], v[1]), r0: v[2], amp: v[3], petals: v[4] as u32 })
        }
        "halfplane" => {
            arity(3)?;
            Ok(Shape::HalfPlane { normal: Point::new(v[0], v[1]), offset: v[2] })
        }
        _ => Err(Error::Parse(format!("unknown shape kind `{kind}`"))),
    }
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: String,
    /// Numerical validation failed (exit code 3).
    pub failed: bool,
}

impl Outcome {
    fn ok(report: String) -> Self {
        Self { report, failed: false }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.command.as_str() {
        "evolve2p" => run_evolve2p(cfg),
        "evolve-mp" => run_evolve_mp(cfg),
        "study" => run_study(cfg),
        "verify-kernel" => run_verify_kernel(cfg),
        "check-obstruction" => {
            let rep = check_obstruction(cfg.count("starts", 64)?, cfg.seed()?);
            Ok(Outcome { failed: !rep.confirmed(), report: rep.to_string() })
        }
        "stacking-test" => run_stacking(cfg),
        "energy-test" => run_energy(cfg),
        "denoise" => run_denoise(cfg),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}

fn run_evolve2p(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.grid(None)?;
    let h = spec.hx().min(spec.hy());
    let phi0 = match (cfg.raw("shape"), cfg.raw("input")) {
        (Some(s), _) => init_shape(&spec, &parse_shape(s)?)?,
        (None, Some(p)) => io::read_field(Path::new(p))?,
        _ => unreachable!("checked by validate"),
    };
    let steps: usize = cfg.required("steps")?;
    let variant = cfg.variant()?;
    let (method, stencil) = match cfg.required::<KernelSpec>("kernel")? {
        KernelSpec::Circles(k) => {
            let kernel = scaled_kernel(&k, cfg.required("dt")?)?;
            let defaults = BisectionParams::default_for(&spec);
            let params = BisectionParams::new(
                cfg.positive("eps-arc")?.unwrap_or(defaults.eps_arc()),
                cfg.positive("eps-lambda")?.unwrap_or(defaults.eps_lambda()),
            )?;
            let stencil = SampledStencil::from_circle_kernel(&kernel, 64)?;
            (MedianMethod::Bisection { kernel, params }, stencil)
        }
        KernelSpec::Ball(r) => {
            let st = SampledStencil::ball(phi0.spec(), r)?;
            (MedianMethod::Sampled { stencil: st.clone(), eval: Eval::Nearest, rule: MedianRule::Sup }, st)
        }
        KernelSpec::Gauss(s) => {
            let p = (3.0 * s / h).ceil() as usize;
            let st = SampledStencil::discrete_gaussian(phi0.spec(), s, p)?;
            (MedianMethod::Sampled { stencil: st.clone(), eval: Eval::Nearest, rule: MedianRule::Sup }, st)
        }
    };
    let mut scheme = MedianScheme::new(method, variant);
    if let Some(b) = cfg.positive("band")? {
        scheme = scheme.with_band(b * h);
    }
    let (energy, phi) = monitor(&phi0, |f| scheme.step(f), |f| field_energy(f, &stencil), steps)?;
    let out = cfg.output();
    fs::create_dir_all(&out)?;
    io::write_field(&out.join("field.csv"), &phi)?;
    let contour = extract_contour(&phi, 0.0);
    write(&out.join("contour.csv"), &io::polylines_to_csv(&contour))?;
    energy.write_csv(&out.join("energy.csv"))?;
    let mut report = String::new();
    let _ = writeln!(report, "{steps} steps on {}x{} grid, {} contour pieces", spec.nx(), spec.ny(), contour.len());
    let _ = write!(report, "energy {:.6e} -> {:.6e}", energy.series[0].1, energy.series[steps].1);
    Ok(Outcome::ok(report))
}

fn run_evolve_mp(cfg: &RunConfig) -> Result<Outcome> {
    let steps: usize = cfg.required("steps")?;
    let r = cfg.mp_radius()?;
    let reaper = cfg.parsed::<f64>("reaper")?;
    let (sys, sigma, setup) = match reaper {
        Some(alpha) => {
            let setup = GrimReaperSetup::new(alpha)?;
            let n = cfg.raw("grid").map(parse_grid).transpose().map_err(|e| config_err("grid", e))?;
            let spec = setup.grid(n.map_or(100, |g| g.0))?;
            let sigma = match cfg.sigma()? {
                Some(s) => s,
                None => setup.reaper.surface_tensions(),
            };
            (setup.initial_system(&spec)?, sigma, Some(setup))
        }
        None => {
            let spec = cfg.grid(None)?;
            let sigma = cfg.sigma()?.expect("checked by validate");
            let path = cfg.raw("labels").expect("checked by validate");
            let part = io::labels_from_csv(&fs::read_to_string(path)?, spec, sigma.n())?;
            (PhaseSystem::from_partition(&part, 0.5 * spec.hx())?, sigma, None)
        }
    };
    let spec = *sys.spec();
    let h = spec.hx().min(spec.hy());
    let band = cfg.positive("band")?.unwrap_or(5.0) * h;
    let lattice = SampledStencil::ball(&spec, r)?;
    let energy_of = |s: &PhaseSystem| multiphase_energy(&s.partition(), &sigma, &lattice).unwrap_or(f64::NAN);
    let (energy, out_sys) = match cfg.raw("quadrature").unwrap_or("rings") {
        "rings" => {
            let scheme = RingMultiphaseScheme::new(RingBall::new(r, 2.0 * h)?, sigma.clone(), 1e-3 * h)?.with_band(band);
            monitor(&sys, |s| scheme.step(s), energy_of, steps)?
        }
        _ => {
            let scheme = MultiphaseScheme::new(lattice.clone(), sigma.clone()).with_band(band);
            monitor(&sys, |s| scheme.step(s), energy_of, steps)?
        }
    };
    let out = cfg.output();
    fs::create_dir_all(&out)?;
    write(&out.join("labels.csv"), &io::labels_to_csv(&out_sys.partition()))?;
    for (i, phase) in out_sys.phases().iter().enumerate() {
        io::write_field(&out.join(format!("phase_{}.csv", i + 1)), phase)?;
    }
    energy.write_csv(&out.join("energy.csv"))?;
    let mut report = format!("{steps} steps, {} phases, ball radius {r:.4e}", sys.n());
    if let Some(setup) = setup {
        let t = steps as f64 * ball_time_coefficient() * r * r;
        let _ = write!(report, "\nprofile error at t = {t:.4e}: {:.6e}", setup.profile_error(&out_sys, t)?);
    }
    Ok(Outcome::ok(report))
}

fn run_study(cfg: &RunConfig) -> Result<Outcome> {
    let preset: Preset = cfg.required("preset")?;
    let grid = cfg.parsed::<usize>("grid")?;
    let levels = cfg.parsed::<usize>("levels")?;
    let tables = convergence_study(preset, grid, levels)?;
    let out = cfg.output();
    let mut report = String::new();
    for t in &tables {
        write(&out.join(format!("{}.csv", t.case)), &t.to_csv())?;
        let _ = writeln!(report, "{}\n{}", t.case, t.to_csv());
    }
    Ok(Outcome::ok(report.trim_end().to_string()))
}

fn run_verify_kernel(cfg: &RunConfig) -> Result<Outcome> {
    let kernel = match cfg.parsed::<KernelSpec>("kernel")? {
        Some(KernelSpec::Circles(k)) => k,
        _ => CircleSumKernel::second_order(),
    };
    let ids = MomentIdentities::of(&kernel);
    let failed = ids.beta0 != MomentIdentities::beta0_target() || ids.beta2_cubic != MomentIdentities::beta2_cubic_target();
    Ok(Outcome { report: format!("kernel {kernel}\n{ids}"), failed })
}

fn run_stacking(cfg: &RunConfig) -> Result<Outcome> {
    let n = cfg.grid(Some(64))?.nx();
    let s = stacking_experiment(cfg.count("fields", 100)?, n, cfg.count("offsets", 32)?, cfg.count("levels", 21)?, cfg.seed()?)?;
    if cfg.raw("output").is_some() {
        write(&cfg.output().join("stacking.csv"), &s.to_csv())?;
    }
    Ok(Outcome {
        report: format!(
            "{} fields, {}x{n} grid, {} offsets, {} levels: {} mismatches",
            s.fields, n, s.offsets, s.levels, s.total()
        ),
        failed: s.total() > 0,
    })
}

fn run_energy(cfg: &RunConfig) -> Result<Outcome> {
    let n = cfg.grid(Some(64))?.nx();
    let steps = cfg.count("steps", 50)?;
    let runs = energy_experiment(cfg.count("fields", 20)?, n, steps, cfg.seed()?)?;
    if cfg.raw("output").is_some() {
        let out = cfg.output();
        fs::create_dir_all(&out)?;
        for r in &runs {
            r.report.write_csv(&out.join(format!("{}_{}.csv", r.scheme, r.field)))?;
        }
    }
    let violations: usize = runs.iter().map(|r| r.report.violations.len()).sum();
    Ok(Outcome {
        report: format!("{} runs of {steps} steps on {n}x{n}: {violations} energy increases", runs.len()),
        failed: violations > 0,
    })
}

fn run_denoise(cfg: &RunConfig) -> Result<Outcome> {
    let boundary = cfg.parsed::<Boundary>("boundary")?.unwrap_or(Boundary::Reflect);
    let f = io::read_pgm(Path::new(cfg.raw("input").expect("checked by validate")), boundary)?;
    let spec = *f.spec();
    let width = cfg.positive("width")?.unwrap_or(1.0);
    let stencil = SampledStencil::discrete_gaussian(&spec, width * spec.hx(), (3.0 * width).ceil() as usize)?;
    let prob = DenoiseProblem::new(f.clone(), cfg.required("gamma")?, stencil)?;
    let (u, energies) = denoise(&f, &prob, cfg.count("steps", 20)?, cfg.positive("tol")?.unwrap_or(1e-10))?;
    let out = cfg.output();
    fs::create_dir_all(&out)?;
    io::write_pgm(&out.join("denoised.pgm"), &u)?;
    let rep = EnergyReport::from_series(&energies, 1e-10);
    rep.write_csv(&out.join("energy.csv"))?;
    Ok(Outcome {
        report: format!(
            "{} steps, energy {:.6e} -> {:.6e}",
            energies.len() - 1,
            energies[0],
            energies[energies.len() - 1]
        ),
        failed: !rep.is_monotone(),
    })
}

/// Exit code for an error: configuration problems give 2, failed numerical
/// checks 3.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse(_) | Error::Argument(_) | Error::Io(_) => EXIT_CONFIG,
        Error::Domain(_) | Error::Oracle(_) => EXIT_VALIDATION,
    }
}

/// Parses, runs and reports; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let m = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (name, sub) = m.subcommand().expect("subcommand required");
    let result = RunConfig::from_matches(name, sub).and_then(|cfg| run(&cfg));
    match result {
        Ok(out) => {
            println!("{}", out.report);
            if out.failed {
                eprintln!("validation failed");
                EXIT_VALIDATION
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(args: &[&str]) -> Result<RunConfig> {
        RunConfig::from_args(std::iter::once("median-flow").chain(args.iter().copied()))
    }

    #[test]
    fn evolve2p_flags() {
        let c = cfg(&["evolve2p", "--grid", "64", "--shape", "circle:0.5,0.5,0.25", "--kernel", "circles:1@1", "--dt", "1e-3", "--steps", "10"]).unwrap();
        assert_eq!(c.raw("kernel"), Some("circles:1@1"));
        assert_eq!(c.grid(None).unwrap().nx(), 64);
    }

    #[test]
    fn usage_errors_name_the_key() {
        let err = |args: &[&str]| cfg(args).unwrap_err().to_string();
        assert!(err(&["evolve2p", "--grid", "64", "--shape", "circle:0.5,0.5,0.25", "--kernel", "circles:1@1", "--dt", "1e-3"]).contains("steps"));
        assert!(err(&["evolve2p", "--grid", "64", "--shape", "circle:0.5,0.5,0.25", "--kernel", "circles:1@1", "--dt", "-1", "--steps", "2"]).contains("dt"));
        assert!(err(&["evolve2p", "--grid", "64", "--shape", "circle:0.5,0.5", "--kernel", "circles:1@1", "--dt", "1e-3", "--steps", "2"]).contains("shape"));
        // sqrt(2 * 0.05) > 1/4
        assert!(err(&["evolve2p", "--grid", "64", "--shape", "circle:0.5,0.5,0.25", "--kernel", "circles:1@1", "--dt", "0.05", "--steps", "2"]).contains("kernel"));
        assert!(err(&["study"]).contains("preset"));
    }

    #[test]
    fn file_values_and_flag_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# stacking\nfields = 3\ngrid = 16\nseed = 9\n").unwrap();
        let p = path.to_str().unwrap();
        let c = cfg(&["stacking-test", "--config", p, "--seed", "4"]).unwrap();
        assert_eq!(c.raw("fields"), Some("3"));
        assert_eq!(c.seed().unwrap(), 4);
        fs::write(&path, "fields = 3\nshape = circle:0.5,0.5,0.2\n").unwrap();
        assert!(cfg(&["stacking-test", "--config", p]).unwrap_err().to_string().contains("shape"));
        fs::write(&path, "fields 3\n").unwrap();
        assert!(cfg(&["stacking-test", "--config", p]).is_err());
    }

    #[test]
    fn bad_sigma_names_the_triple() {
        let dir = tempfile::tempdir().unwrap();
        let sigma = dir.path().join("sigma.txt");
        fs::write(&sigma, "0 1 3\n1 0 1\n3 1 0\n").unwrap();
        let labels = dir.path().join("labels.csv");
        fs::write(&labels, "1,2\n3,1\n").unwrap();
        let e = cfg(&["evolve-mp", "--grid", "2", "--labels", labels.to_str().unwrap(), "--sigma-file", sigma.to_str().unwrap(), "--dt", "1e-4", "--steps", "1"])
            .unwrap_err()
            .to_string();
        assert!(e.contains("sigma-file") && e.contains("phases (1, 2, 3)"), "{e}");
    }

    #[test]
    fn shapes_parse() {
        assert_eq!(parse_shape("circle:0.5,0.5,0.25").unwrap(), Shape::Circle { center: Point::new(0.5, 0.5), radius: 0.25 });
        assert!(matches!(parse_shape("flower:0.5,0.5,0.3,0.06,4").unwrap(), Shape::Flower { petals: 4, .. }));
        assert!(parse_shape("flower:0.5,0.5,0.3,0.06,2.5").is_err());
        assert!(parse_shape("square:1").is_err());
    }

    #[test]
    fn small_runs_succeed() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let c = cfg(&["evolve2p", "--grid", "32", "--shape", "circle:0.5,0.5,0.25", "--kernel", "circles:1@1", "--dt", "1e-3", "--steps", "2", "--band", "6", "--output", out]).unwrap();
        assert!(!run(&c).unwrap().failed);
        assert!(io::read_field(&dir.path().join("field.csv")).is_ok());
        assert!(fs::read_to_string(dir.path().join("contour.csv")).unwrap().starts_with("curve_id,x,y"));
        let c = cfg(&["stacking-test", "--fields", "2", "--grid", "16"]).unwrap();
        assert!(!run(&c).unwrap().failed);
        let c = cfg(&["verify-kernel"]).unwrap();
        let o = run(&c).unwrap();
        assert!(!o.failed && o.report.contains("1/24"), "{}", o.report);
        let c = cfg(&["evolve-mp", "--reaper", "3", "--grid", "32", "--dt", "3e-3", "--steps", "1", "--output", out]).unwrap();
        let o = run(&c).unwrap();
        assert!(o.report.contains("profile error"), "{}", o.report);
        assert!(io::read_field(&dir.path().join("phase_3.csv")).is_ok());
    }

    #[test]
    fn sigma_alias_and_phase_count() {
        let dir = tempfile::tempdir().unwrap();
        let sigma = dir.path().join("sigma.txt");
        fs::write(&sigma, "0 1\n1 0\n").unwrap();
        let labels = dir.path().join("labels.csv");
        fs::write(&labels, "1,2,1,2\n1,2,1,2\n1,2,1,2\n1,2,1,2\n").unwrap();
        let (l, s) = (labels.to_str().unwrap(), sigma.to_str().unwrap());
        let base = ["evolve-mp", "--grid", "4", "--labels", l, "--sigma", s, "--dt", "1e-4", "--steps", "1"];
        assert!(cfg(&base).is_ok());
        let mut bad = base.to_vec();
        bad.extend(["--phases", "3"]);
        assert!(cfg(&bad).unwrap_err().to_string().contains("phases"));
        assert!(cfg(&["evolve2p", "--grid", "8", "--shape", "circle:0.5,0.5,0.25", "--kernel", "circles:1@1", "--dt", "1e-4", "--steps", "1", "--scheme", "median2"]).is_ok());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(main_with_args(["median-flow", "study", "--preset", "nope"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["median-flow", "bogus"]), EXIT_CONFIG);
        assert_eq!(main_with_args(["median-flow", "verify-kernel", "--kernel", "circles:1@1"]), EXIT_VALIDATION);
        assert_eq!(main_with_args(["median-flow", "verify-kernel"]), EXIT_OK);
    }
}
