//! Threshold-based minimization of nonlocal total variation plus a
//! quadratic fidelity term.

use rayon::prelude::*;

use crate::energy::{field_energy, CompensatedSum};
use crate::error::{Error, Result};
use crate::grid::ScalarField2D;
use crate::median2p::SampledStencil;
use crate::tdyn::NodeOffsets;

/// Image `f >= 0`, fidelity weight `gamma > 0` and a positive
/// semidefinite grid stencil.
#[derive(Debug, Clone)]
pub struct DenoiseProblem {
    f: ScalarField2D,
    gamma: f64,
    stencil: SampledStencil,
}

impl DenoiseProblem {
    pub fn new(f: ScalarField2D, gamma: f64, stencil: SampledStencil) -> Result<Self> {
        if f.min() < 0.0 {
            return Err(Error::Config(format!("image must be nonnegative, minimum is {}", f.min())));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        let sym = stencil.min_symbol(f.spec())?;
        if sym < -1e-12 * stencil.total_weight() {
            return Err(Error::Config(format!(
                "stencil is not positive semidefinite on this grid (minimum symbol {sym:e})"
            )));
        }
        Ok(Self { f, gamma, stencil })
    }

    pub fn image(&self) -> &ScalarField2D {
        &self.f
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn stencil(&self) -> &SampledStencil {
        &self.stencil
    }
}

/// `field_energy(phi) + gamma / 2 * sum (phi - f)^2`, both with the cell area.
pub fn nl_energy(phi: &ScalarField2D, prob: &DenoiseProblem) -> Result<f64> {
    if phi.spec() != prob.f.spec() {
        return Err(Error::Argument("field and image live on different grids".into()));
    }
    let mut fid = CompensatedSum::default();
    for (a, b) in phi.values().iter().zip(prob.f.values()) {
        fid.add((a - b) * (a - b));
    }
    Ok(field_energy(phi, &prob.stencil) + 0.5 * prob.gamma * fid.value() * phi.spec().cell_area())
}

/// Largest `lambda` with `mass{v >= lambda} / W >= (1 + g (lambda - f)) / 2`.
///
/// The stencil mass above `lambda` is a decreasing step function and the
/// threshold is affine, so the crossing either sits on a jump (a sample
/// value) or on a flat piece, where it is solved for exactly.
fn crossing(samples: &mut [(f64, f64)], total: f64, f: f64, g: f64) -> f64 {
    samples.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    // Above every sample the mass is zero.
    let mu = f - 1.0 / g;
    if mu > samples[0].0 {
        return mu;
    }
    let mut mass = 0.0;
    let mut k = 0;
    while k < samples.len() {
        let v = samples[k].0;
        while k < samples.len() && samples[k].0 == v {
            mass += samples[k].1;
            k += 1;
        }
        let mu = f + (2.0 * mass / total - 1.0) / g;
        let next = if k < samples.len() { samples[k].0 } else { f64::NEG_INFINITY };
        if mu > next {
            return mu.min(v);
        }
    }
    unreachable!("the last piece extends to -infinity")
}

/// One update: every node moves to the level where its thresholded
/// neighborhood mass meets the fidelity threshold, clamped at zero.
///
/// The threshold uses `gamma / 2` because `field_energy` counts each pair
/// of nodes twice.
pub fn denoise_step(phi: &ScalarField2D, prob: &DenoiseProblem) -> Result<ScalarField2D> {
    if phi.spec() != prob.f.spec() {
        return Err(Error::Argument("field and image live on different grids".into()));
    }
    let spec = *phi.spec();
    let offs = NodeOffsets::new(&spec, &prob.stencil);
    let g = 0.5 * prob.gamma;
    let nx = spec.nx();
    let total = prob.stencil.total_weight();
    let mut out = vec![0.0; spec.len()];
    out.par_chunks_mut(nx).enumerate().for_each(|(j, row)| {
        let mut buf = Vec::with_capacity(prob.stencil.len());
        for (i, o) in row.iter_mut().enumerate() {
            buf.clear();
            for (k, &w) in prob.stencil.weights().iter().enumerate() {
                buf.push((phi.values()[offs.index(&spec, i, j, k)], w));
            }
            *o = crossing(&mut buf, total, prob.f.values()[j * nx + i], g).max(0.0);
        }
    });
    ScalarField2D::new(spec, out)
}

/// Runs `steps` updates from `phi0`, stopping early once the relative
/// energy decrease of a step falls below `tol`. Returns the final field and
/// the energy after each completed step (starting with `phi0`).
pub fn denoise(phi0: &ScalarField2D, prob: &DenoiseProblem, steps: usize, tol: f64) -> Result<(ScalarField2D, Vec<f64>)> {
    let mut phi = phi0.clone();
    let mut energies = vec![nl_energy(&phi, prob)?];
    for _ in 0..steps {
        phi = denoise_step(&phi, prob)?;
        let e = nl_energy(&phi, prob)?;
        let prev = *energies.last().expect("nonempty");
        energies.push(e);
        if prev - e <= tol * prev.abs() {
            break;
        }
    }
    Ok((phi, energies))
}
