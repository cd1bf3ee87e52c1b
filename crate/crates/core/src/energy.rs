//! Nonlocal interfacial energies and dissipation monitoring.
//!
//! Every energy reads the field through the same nearest-node stencil lookup
//! as threshold dynamics, so dissipation checks are statements about the
//! discrete scheme rather than about quadrature.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField2D};
use crate::median2p::SampledStencil;
use crate::multiphase::SurfaceTensionMatrix;
use crate::tdyn::{IndicatorField2D, NodeOffsets, PartitionField};

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sums `f(i, j)` over every node: rows in parallel, rows combined in order.
fn node_sum(spec: &GridSpec, f: impl Fn(usize, usize) -> f64 + Sync) -> f64 {
    let nx = spec.nx();
    let rows: Vec<f64> = (0..spec.ny())
        .into_par_iter()
        .map(|j| {
            let mut s = CompensatedSum::default();
            for i in 0..nx {
                s.add(f(i, j));
            }
            s.value()
        })
        .collect();
    let mut s = CompensatedSum::default();
    rows.into_iter().for_each(|r| s.add(r));
    s.value()
}

fn same_grid(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a != b {
        return Err(Error::Argument("fields live on different grids".into()));
    }
    Ok(())
}

/// `sum over x outside the set of (K * 1_set)(x)`, times the cell area.
pub fn set_energy(set: &IndicatorField2D, stencil: &SampledStencil) -> f64 {
    let spec = *set.spec();
    let offs = NodeOffsets::new(&spec, stencil);
    let mask = set.mask();
    let nx = spec.nx();
    let total = stencil.total_weight();
    node_sum(&spec, |i, j| {
        if mask[j * nx + i] {
            return 0.0;
        }
        let mut s = 0.0;
        for (k, &w) in stencil.weights().iter().enumerate() {
            if mask[offs.index(&spec, i, j, k)] {
                s += w;
            }
        }
        s / total
    }) * spec.cell_area()
}

/// `sum_x sum_j w_j |phi(x) - phi(x + y_j)| / W`, times the cell area.
pub fn field_energy(field: &ScalarField2D, stencil: &SampledStencil) -> f64 {
    let spec = *field.spec();
    let offs = NodeOffsets::new(&spec, stencil);
    let v = field.values();
    let nx = spec.nx();
    let total = stencil.total_weight();
    node_sum(&spec, |i, j| {
        let c = v[j * nx + i];
        let mut s = 0.0;
        for (k, &w) in stencil.weights().iter().enumerate() {
            s += w * (c - v[offs.index(&spec, i, j, k)]).abs();
        }
        s / total
    }) * spec.cell_area()
}

/// Movement limiter of a candidate `phi` against the previous iterate:
/// zero at `phi = phi_prev`, nonnegative for positive semidefinite stencils.
pub fn movement_limiter(phi: &ScalarField2D, phi_prev: &ScalarField2D, stencil: &SampledStencil) -> Result<f64> {
    same_grid(phi.spec(), phi_prev.spec())?;
    let spec = *phi.spec();
    let offs = NodeOffsets::new(&spec, stencil);
    let (a, b) = (phi.values(), phi_prev.values());
    let nx = spec.nx();
    let total = stencil.total_weight();
    Ok(node_sum(&spec, |i, j| {
        let n = j * nx + i;
        let mut s = 0.0;
        for (k, &w) in stencil.weights().iter().enumerate() {
            let m = offs.index(&spec, i, j, k);
            s += w * (2.0 * (a[n] - b[m]).abs() - (a[n] - a[m]).abs() - (b[n] - b[m]).abs());
        }
        s / total
    }) * spec.cell_area())
}

/// `sum_{i<j} 2 sigma_ij sum_{x in phase i} (K * 1_{phase j})(x)`, times
/// the cell area.
pub fn multiphase_energy(part: &PartitionField, sigma: &SurfaceTensionMatrix, stencil: &SampledStencil) -> Result<f64> {
    if sigma.n() != part.n_phases() {
        return Err(Error::Argument(format!(
            "surface tension matrix has {} phases, partition has {}",
            sigma.n(),
            part.n_phases()
        )));
    }
    let spec = *part.spec();
    let offs = NodeOffsets::new(&spec, stencil);
    let labels = part.labels();
    let nx = spec.nx();
    let total = stencil.total_weight();
    Ok(node_sum(&spec, |i, j| {
        let l = labels[j * nx + i] as usize;
        let mut s = 0.0;
        for (k, &w) in stencil.weights().iter().enumerate() {
            s += w * sigma.get(l, labels[offs.index(&spec, i, j, k)] as usize);
        }
        s / total
    }) * spec.cell_area())
}

/// Energy after each step of a run, with every increase flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub series: Vec<(usize, f64)>,
    pub violations: Vec<(usize, f64)>,
    pub tolerance: f64,
}

impl EnergyReport {
    /// Builds the report from energies at steps `0..=n`; an increase counts
    /// when it exceeds `tolerance` times the previous energy.
    pub fn from_series(energies: &[f64], tolerance: f64) -> Self {
        let series: Vec<(usize, f64)> = energies.iter().copied().enumerate().collect();
        let violations = energies
            .windows(2)
            .enumerate()
            .filter_map(|(k, w)| {
                let d = w[1] - w[0];
                (d > tolerance * w[0].abs()).then_some((k + 1, d))
            })
            .collect();
        Self { series, violations, tolerance }
    }

    pub fn is_monotone(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,energy,delta\n");
        let mut prev = None;
        for &(k, e) in &self.series {
            let d = prev.map_or(0.0, |p| e - p);
            let _ = writeln!(s, "{k},{e:.17e},{d:.17e}");
            prev = Some(e);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Runs `steps` updates from `initial`, recording `energy` before the first
/// and after every step. Increases beyond `1e-12` relative are flagged.
pub fn monitor<T>(
    initial: &T,
    mut step: impl FnMut(&T) -> Result<T>,
    energy: impl Fn(&T) -> f64,
    steps: usize,
) -> Result<(EnergyReport, T)>
where
    T: Clone,
{
    let mut state = initial.clone();
    let mut energies = Vec::with_capacity(steps + 1);
    energies.push(energy(&state));
    for _ in 0..steps {
        state = step(&state)?;
        energies.push(energy(&state));
    }
    Ok((EnergyReport::from_series(&energies, 1e-12), state))
}

/// `integral over lambda of set_energy(T_lambda phi)` for a field taking
/// finitely many values.
pub fn layer_cake_integral(field: &ScalarField2D, stencil: &SampledStencil) -> f64 {
    let mut levels: Vec<f64> = field.values().to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut s = CompensatedSum::default();
    for w in levels.windows(2) {
        s.add((w[1] - w[0]) * set_energy(&IndicatorField2D::threshold(field, w[1]), stencil));
    }
    s.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::median2p::{Eval, MedianMethod, MedianRule, MedianScheme, Variant};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_field_energy(f: &ScalarField2D, st: &SampledStencil) -> f64 {
        let spec = f.spec();
        let mut s = 0.0;
        for j in 0..spec.ny() {
            for i in 0..spec.nx() {
                for (y, w) in st.offsets().iter().zip(st.weights()) {
                    let a = (i as f64 + y.x / spec.hx()).round() as isize;
                    let b = (j as f64 + y.y / spec.hy()).round() as isize;
                    s += w * (f.get(i, j) - f.node_value(a, b)).abs();
                }
            }
        }
        s / st.total_weight() * spec.cell_area()
    }

    #[test]
    fn trivial_set_energies() {
        let spec = GridSpec::unit(16).unwrap();
        let st = SampledStencil::ball(&spec, 2.0 / 16.0).unwrap();
        assert_eq!(set_energy(&IndicatorField2D::empty(spec), &st), 0.0);
        assert_eq!(set_energy(&IndicatorField2D::full(spec), &st), 0.0);
        assert_eq!(field_energy(&ScalarField2D::constant(spec, 3.0), &st), 0.0);
    }

    #[test]
    fn strip_energy_scales_with_interface_length() {
        let spec = GridSpec::unit(64).unwrap();
        let st = SampledStencil::ball(&spec, 4.0 / 64.0).unwrap();
        let one = IndicatorField2D::new(spec, (0..spec.len()).map(|k| (k / 64) < 32).collect()).unwrap();
        let two = IndicatorField2D::new(spec, (0..spec.len()).map(|k| (k / 64) % 32 < 16).collect()).unwrap();
        let ratio = set_energy(&one, &st) / set_energy(&two, &st);
        assert!((ratio - 0.5).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn field_energy_matches_brute_force_and_scales() {
        let spec = GridSpec::unit(20).unwrap();
        let st = SampledStencil::discrete_gaussian(&spec, 0.06, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = ScalarField2D::new(spec, (0..spec.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let e = field_energy(&f, &st);
        assert!((e - brute_field_energy(&f, &st)).abs() <= 1e-12 * e);
        assert!((field_energy(&f.map(|v| -2.5 * v), &st) - 2.5 * e).abs() <= 1e-12 * e);
    }

    #[test]
    fn binary_field_energy_is_twice_set_energy() {
        let spec = GridSpec::unit(24).unwrap();
        let st = SampledStencil::circle(3.0 / 24.0, 16).unwrap().snap_to_grid(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let set = IndicatorField2D::new(spec, (0..spec.len()).map(|_| rng.gen_bool(0.5)).collect()).unwrap();
            let e = field_energy(&set.to_field(), &st);
            assert!((e - 2.0 * set_energy(&set, &st)).abs() <= 1e-12 * e);
        }
    }

    #[test]
    fn layer_cake_identity() {
        let spec = GridSpec::unit(24).unwrap();
        let st = SampledStencil::ball(&spec, 3.0 / 24.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let f = ScalarField2D::new(spec, (0..spec.len()).map(|_| rng.gen_range(0..8) as f64 * 0.37).collect()).unwrap();
            let lhs = layer_cake_integral(&f, &st);
            let rhs = 0.5 * field_energy(&f, &st);
            assert!((lhs - rhs).abs() <= 1e-8 * rhs, "{lhs} {rhs}");
        }
    }

    #[test]
    fn limiter_vanishes_and_is_nonnegative_for_gaussian() {
        let spec = GridSpec::unit(16).unwrap();
        let st = SampledStencil::discrete_gaussian(&spec, 0.8 / 16.0, 2).unwrap();
        assert!(st.min_symbol(&spec).unwrap() >= 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let a = ScalarField2D::new(spec, (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let b = ScalarField2D::new(spec, (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            assert_eq!(movement_limiter(&a, &a, &st).unwrap(), 0.0);
            assert!(movement_limiter(&a, &b, &st).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn multiphase_energy_reductions() {
        let spec = GridSpec::unit(24).unwrap();
        let st = SampledStencil::ball(&spec, 3.0 / 24.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set = IndicatorField2D::new(spec, (0..spec.len()).map(|_| rng.gen_bool(0.4)).collect()).unwrap();
        let labels = set.mask().iter().map(|&b| if b { 0 } else { 1 }).collect();
        let part = PartitionField::new(spec, labels, 2).unwrap();
        let e = multiphase_energy(&part, &SurfaceTensionMatrix::uniform(2), &st).unwrap();
        assert!((e - 2.0 * set_energy(&set, &st)).abs() <= 1e-12 * e);
        let scaled = SurfaceTensionMatrix::new(vec![vec![0.0, 3.0], vec![3.0, 0.0]]).unwrap();
        assert!((multiphase_energy(&part, &scaled, &st).unwrap() - 3.0 * e).abs() <= 1e-12 * e);
        let single = PartitionField::new(spec, vec![0; spec.len()], 1).unwrap();
        assert_eq!(multiphase_energy(&single, &SurfaceTensionMatrix::uniform(1), &st).unwrap(), 0.0);
    }

    #[test]
    fn report_flags_increases() {
        let r = EnergyReport::from_series(&[3.0, 2.0, 2.5, 2.5], 1e-12);
        assert_eq!(r.violations, vec![(2, 0.5)]);
        assert!(r.to_csv().starts_with("step,energy,delta\n0,"));
        assert_eq!(r.to_csv().lines().count(), 5);
    }

    #[test]
    fn gaussian_jacobi_dissipates() {
        let spec = GridSpec::unit(32).unwrap();
        let st = SampledStencil::discrete_gaussian(&spec, 0.8 / 32.0, 2).unwrap();
        let scheme = MedianScheme::new(MedianMethod::Sampled { stencil: st.clone(), eval: Eval::Nearest, rule: MedianRule::Sup }, Variant::Jacobi);
        let f0 = ScalarField2D::from_fn(spec, |p| (6.0 * p.x).sin() * (4.0 * p.y).cos() + 0.3 * p.x);
        let (rep, _) = monitor(&f0, |f| scheme.step(f), |f| field_energy(f, &st), 15).unwrap();
        assert!(rep.is_monotone(), "{:?}", rep.violations);
    }

    #[test]
    fn two_step_circle_dissipates() {
        let spec = GridSpec::unit(32).unwrap();
        let st = SampledStencil::circle(3.2 / 32.0, 24).unwrap().snap_to_grid(&spec).unwrap();
        let scheme = MedianScheme::new(MedianMethod::Sampled { stencil: st.clone(), eval: Eval::Nearest, rule: MedianRule::Sup }, Variant::TwoStep);
        let f0 = ScalarField2D::from_fn(spec, |p| (6.0 * p.x).sin() * (4.0 * p.y).cos() + 0.3 * p.x);
        let (rep, _) = monitor(&f0, |f| scheme.step(f), |f| field_energy(f, &st), 30).unwrap();
        assert!(rep.is_monotone(), "{:?}", rep.violations);
    }

    #[test]
    fn constant_field_flat_series() {
        let spec = GridSpec::unit(16).unwrap();
        let st = SampledStencil::ball(&spec, 2.0 / 16.0).unwrap();
        let scheme = MedianScheme::new(MedianMethod::Sampled { stencil: st.clone(), eval: Eval::Nearest, rule: MedianRule::Sup }, Variant::TwoStep);
        let (rep, _) = monitor(&ScalarField2D::constant(spec, 1.0), |f| scheme.step(f), |f| field_energy(f, &st), 5).unwrap();
        assert!(rep.series.iter().all(|&(_, e)| e == 0.0));
        assert_eq!(rep.series.len(), 6);
    }
}
