//! Threshold dynamics on sets and partitions, and the level-by-level
//! comparison with the sampled median filter.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField2D};
use crate::median2p::{Eval, MedianMethod, MedianRule, MedianScheme, SampledStencil, Variant};
use crate::multiphase::SurfaceTensionMatrix;

/// Node set on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorField2D {
    spec: GridSpec,
    mask: Vec<bool>,
}

impl IndicatorField2D {
    pub fn new(spec: GridSpec, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != spec.len() {
            return Err(Error::Argument(format!("expected {} mask entries, got {}", spec.len(), mask.len())));
        }
        Ok(Self { spec, mask })
    }

    pub fn full(spec: GridSpec) -> Self {
        Self { spec, mask: vec![true; spec.len()] }
    }

    pub fn empty(spec: GridSpec) -> Self {
        Self { spec, mask: vec![false; spec.len()] }
    }

    /// Super level set `{ field >= lambda }`.
    pub fn threshold(field: &ScalarField2D, lambda: f64) -> Self {
        Self { spec: *field.spec(), mask: field.values().iter().map(|&v| v >= lambda).collect() }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    /// Number of nodes where the two sets differ.
    pub fn mismatches(&self, other: &Self) -> usize {
        self.mask.iter().zip(&other.mask).filter(|(a, b)| a != b).count()
    }

    pub fn to_field(&self) -> ScalarField2D {
        ScalarField2D::new(self.spec, self.mask.iter().map(|&b| b as u8 as f64).collect())
            .expect("finite")
    }
}

/// Labelled partition of the grid nodes; labels are `0..n_phases`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionField {
    spec: GridSpec,
    labels: Vec<u16>,
    n_phases: usize,
}

impl PartitionField {
    pub fn new(spec: GridSpec, labels: Vec<u16>, n_phases: usize) -> Result<Self> {
        if labels.len() != spec.len() {
            return Err(Error::Argument(format!("expected {} labels, got {}", spec.len(), labels.len())));
        }
        if n_phases == 0 {
            return Err(Error::Argument("partition needs at least one phase".into()));
        }
        if let Some(k) = labels.iter().position(|&l| l as usize >= n_phases) {
            return Err(Error::Argument(format!("label {} at node {k} exceeds phase count {n_phases}", labels[k])));
        }
        Ok(Self { spec, labels, n_phases })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
    pub fn labels(&self) -> &[u16] {
        &self.labels
    }
    pub fn n_phases(&self) -> usize {
        self.n_phases
    }

    pub fn phase(&self, i: usize) -> IndicatorField2D {
        IndicatorField2D { spec: self.spec, mask: self.labels.iter().map(|&l| l as usize == i).collect() }
    }
}

/// Grid-index offsets of a stencil read with nearest-node lookup.
#[derive(Debug, Clone)]
pub(crate) struct NodeOffsets {
    offs: Vec<(f64, f64)>,
}

impl NodeOffsets {
    pub(crate) fn new(spec: &GridSpec, stencil: &SampledStencil) -> Self {
        Self { offs: stencil.offsets().iter().map(|y| (y.x / spec.hx(), y.y / spec.hy())).collect() }
    }

    /// Flat index of the node nearest to `node (i, j) + offset k`.
    #[inline]
    pub(crate) fn index(&self, spec: &GridSpec, i: usize, j: usize, k: usize) -> usize {
        let (di, dj) = self.offs[k];
        let ii = (i as f64 + di).round() as isize;
        let jj = (j as f64 + dj).round() as isize;
        let b = spec.boundary();
        b.map_index(jj, spec.ny()) * spec.nx() + b.map_index(ii, spec.nx())
    }
}

/// One step of two-phase threshold dynamics: a node joins the new set when
/// at least half the stencil mass around it lies in the old set.
pub fn td_step(set: &IndicatorField2D, stencil: &SampledStencil) -> IndicatorField2D {
    let spec = set.spec;
    let offs = NodeOffsets::new(&spec, stencil);
    let total = stencil.total_weight();
    let nx = spec.nx();
    let mask: Vec<bool> = (0..spec.len())
        .into_par_iter()
        .map(|n| {
            let (i, j) = (n % nx, n / nx);
            let mass: f64 = (0..stencil.len())
                .filter(|&k| set.mask[offs.index(&spec, i, j, k)])
                .map(|k| stencil.weights()[k])
                .sum();
            2.0 * mass >= total
        })
        .collect();
    IndicatorField2D { spec, mask }
}

/// `u_j = sum_k sigma_{j,k} m_k` for per-phase stencil masses `m_k`.
#[inline]
pub(crate) fn phase_costs(sigma: &SurfaceTensionMatrix, masses: &[f64], out: &mut [f64]) {
    let n = masses.len();
    for (j, o) in out.iter_mut().enumerate().take(n) {
        let mut s = 0.0;
        for (k, &m) in masses.iter().enumerate() {
            s += sigma.get(j, k) * m;
        }
        *o = s;
    }
}

/// Lowest index attaining the minimum.
#[inline]
pub(crate) fn argmin_lowest(costs: &[f64]) -> usize {
    let mut best = 0;
    for (j, &c) in costs.iter().enumerate().skip(1) {
        if c < costs[best] {
            best = j;
        }
    }
    best
}

/// One step of multiphase threshold dynamics; ties go to the lowest label.
pub fn td_multiphase_step(
    part: &PartitionField,
    sigma: &SurfaceTensionMatrix,
    stencil: &SampledStencil,
) -> Result<PartitionField> {
    if sigma.n() != part.n_phases {
        return Err(Error::Argument(format!(
            "surface tension matrix is {}x{} but the partition has {} phases",
            sigma.n(),
            sigma.n(),
            part.n_phases
        )));
    }
    let spec = part.spec;
    let offs = NodeOffsets::new(&spec, stencil);
    let n = part.n_phases;
    let nx = spec.nx();
    let labels: Vec<u16> = (0..spec.len())
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n]),
            |(masses, costs), node| {
                let (i, j) = (node % nx, node / nx);
                masses.iter_mut().for_each(|m| *m = 0.0);
                for (k, &w) in stencil.weights().iter().enumerate() {
                    masses[part.labels[offs.index(&spec, i, j, k)] as usize] += w;
                }
                phase_costs(sigma, masses, costs);
                argmin_lowest(costs) as u16
            },
        )
        .collect();
    Ok(PartitionField { spec, labels, n_phases: n })
}

/// Per-level comparison of thresholded median and threshold dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct StackingReport {
    pub levels: Vec<f64>,
    pub mismatches: Vec<usize>,
}

impl StackingReport {
    pub fn total_mismatches(&self) -> usize {
        self.mismatches.iter().sum()
    }
}

/// Compares `T_lambda(median(field))` with `td_step(T_lambda(field))` at
/// each level. The median uses nearest-node reads and the exact sup rule so
/// that both sides share one arithmetic path.
pub fn stacked_td(field: &ScalarField2D, stencil: &SampledStencil, levels: &[f64]) -> Result<StackingReport> {
    let scheme = MedianScheme::new(
        MedianMethod::Sampled { stencil: stencil.clone(), eval: Eval::Nearest, rule: MedianRule::Sup },
        Variant::Jacobi,
    );
    let median = scheme.step(field)?;
    let mismatches = levels
        .iter()
        .map(|&l| {
            let lhs = IndicatorField2D::threshold(&median, l);
            let rhs = td_step(&IndicatorField2D::threshold(field, l), stencil);
            lhs.mismatches(&rhs)
        })
        .collect();
    Ok(StackingReport { levels: levels.to_vec(), mismatches })
}

/// `count` levels evenly spaced over `[min - pad, max + pad]` of `field`.
pub fn spanning_levels(field: &ScalarField2D, count: usize, pad: f64) -> Vec<f64> {
    let (lo, hi) = (field.min() - pad, field.max() + pad);
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Boundary, Point};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(spec: GridSpec, p: f64, rng: &mut ChaCha8Rng) -> IndicatorField2D {
        IndicatorField2D::new(spec, (0..spec.len()).map(|_| rng.gen_bool(p)).collect()).unwrap()
    }

    fn stencil32(spec: &GridSpec) -> SampledStencil {
        SampledStencil::circle(4.3 * spec.hx(), 32).unwrap()
    }

    #[test]
    fn full_and_empty_are_fixed() {
        let spec = GridSpec::unit(16).unwrap();
        let st = stencil32(&spec);
        assert_eq!(td_step(&IndicatorField2D::full(spec), &st), IndicatorField2D::full(spec));
        assert_eq!(td_step(&IndicatorField2D::empty(spec), &st), IndicatorField2D::empty(spec));
    }

    #[test]
    fn halfplane_tie_keeps_boundary_node() {
        // Every offset is one row up or down, so both rows next to the
        // boundary see exactly half their mass inside: kept by the >= rule.
        let spec = GridSpec::new(16, 16, 1.0, 1.0, Boundary::Clamped).unwrap();
        let st = SampledStencil::new(
            vec![Point::new(0.0, 0.0625), Point::new(0.0, -0.0625), Point::new(0.0625, 0.0625), Point::new(-0.0625, -0.0625)],
            vec![1.0; 4],
        )
        .unwrap();
        let set = IndicatorField2D::new(spec, (0..256).map(|k| k / 16 >= 8).collect()).unwrap();
        let out = td_step(&set, &st);
        assert!(out.mask()[8 * 16 + 5]);
        assert!(out.mask()[7 * 16 + 5]);
        assert!(!out.mask()[6 * 16 + 5]);
    }

    #[test]
    fn td_step_is_monotone() {
        let spec = GridSpec::unit(32).unwrap();
        let st = stencil32(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_set(spec, 0.4, &mut rng);
            let extra = random_set(spec, 0.2, &mut rng);
            let b = IndicatorField2D::new(spec, a.mask().iter().zip(extra.mask()).map(|(x, y)| *x || *y).collect()).unwrap();
            assert!(td_step(&a, &st).is_subset_of(&td_step(&b, &st)));
        }
    }

    #[test]
    fn two_phase_partition_reduces_to_td_step() {
        let spec = GridSpec::unit(32).unwrap();
        let st = stencil32(&spec);
        let sigma = SurfaceTensionMatrix::uniform(2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let set = random_set(spec, 0.5, &mut rng);
            let labels = set.mask().iter().map(|&b| if b { 0 } else { 1 }).collect();
            let part = PartitionField::new(spec, labels, 2).unwrap();
            let next = td_multiphase_step(&part, &sigma, &st).unwrap();
            assert_eq!(next.phase(0), td_step(&set, &st));
        }
    }

    #[test]
    fn single_phase_partition_unchanged() {
        let spec = GridSpec::unit(16).unwrap();
        let part = PartitionField::new(spec, vec![0; 256], 1).unwrap();
        let sigma = SurfaceTensionMatrix::uniform(1);
        assert_eq!(td_multiphase_step(&part, &sigma, &stencil32(&spec)).unwrap(), part);
    }

    #[test]
    fn junction_ties_are_deterministic() {
        let spec = GridSpec::unit(30).unwrap();
        let labels: Vec<u16> = (0..900).map(|k| ((k % 30) / 10) as u16).collect();
        let part = PartitionField::new(spec, labels, 3).unwrap();
        let sigma = SurfaceTensionMatrix::uniform(3);
        let st = SampledStencil::ball(&spec, 3.0 / 30.0).unwrap();
        let a = td_multiphase_step(&part, &sigma, &st).unwrap();
        let b = td_multiphase_step(&part, &sigma, &st).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partial_comparison_principle() {
        let spec = GridSpec::unit(24).unwrap();
        let st = SampledStencil::ball(&spec, 3.0 / 24.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let sigma = crate::multiphase::tests::random_sigma(3, &mut rng);
            let base: Vec<u16> = (0..spec.len()).map(|_| rng.gen_range(0..3)).collect();
            let i = rng.gen_range(0..3u16);
            // Shrink phase i: some of its nodes move to other phases.
            let shrunk: Vec<u16> = base
                .iter()
                .map(|&l| if l == i && rng.gen_bool(0.3) { (i + rng.gen_range(1..3)) % 3 } else { l })
                .collect();
            let a = td_multiphase_step(&PartitionField::new(spec, base, 3).unwrap(), &sigma, &st).unwrap();
            let b = td_multiphase_step(&PartitionField::new(spec, shrunk, 3).unwrap(), &sigma, &st).unwrap();
            assert!(b.phase(i as usize).is_subset_of(&a.phase(i as usize)));
        }
    }

    #[test]
    fn stacking_identity_exact() {
        let spec = GridSpec::unit(32).unwrap();
        let st = stencil32(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let f = ScalarField2D::new(spec, (0..spec.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let levels = spanning_levels(&f, 21, 0.0);
            let report = stacked_td(&f, &st, &levels).unwrap();
            assert_eq!(report.total_mismatches(), 0, "{report:?}");
        }
    }

    #[test]
    fn stacking_extreme_levels() {
        let spec = GridSpec::unit(16).unwrap();
        let st = stencil32(&spec);
        let f = ScalarField2D::from_fn(spec, |p| p.x * p.y);
        let r = stacked_td(&f, &st, &[f.min() - 1.0, f.max() + 1.0]).unwrap();
        assert_eq!(r.mismatches, vec![0, 0]);
    }
}
