//! Salt-and-pepper noise removal by threshold steps on the nonlocal total
//! variation with a quadratic fidelity term. Writes the noisy and the
//! cleaned image as PGM files to the temp directory.

use median_flow::denoise::{denoise, DenoiseProblem};
use median_flow::grid::{Boundary, GridSpec, ScalarField2D};
use median_flow::io::{read_pgm, write_pgm};
use median_flow::median2p::SampledStencil;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> median_flow::Result<()> {
    let spec = GridSpec::new(96, 96, 1.0, 1.0, Boundary::Reflect)?;
    let clean = ScalarField2D::from_fn(spec, |p| {
        let disk = (p.x - 0.4).hypot(p.y - 0.55) < 0.25;
        if disk { 0.8 } else { 0.25 }
    });
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let values = clean
        .values()
        .iter()
        .map(|&v| match rng.gen_range(0..10) {
            0 => 0.0,
            1 => 1.0,
            _ => v,
        })
        .collect();
    let noisy = ScalarField2D::new(spec, values)?;
    let dir = std::env::temp_dir();
    let input = dir.join("denoise_input.pgm");
    write_pgm(&input, &noisy)?;

    let f = read_pgm(&input, Boundary::Reflect)?;
    let stencil = SampledStencil::discrete_gaussian(f.spec(), f.spec().hx(), 3)?;
    let prob = DenoiseProblem::new(f.clone(), 0.5, stencil)?;
    let (u, energies) = denoise(&f, &prob, 30, 1e-10)?;
    for (k, e) in energies.iter().enumerate() {
        println!("step {k:2}: energy {e:.6e}");
    }
    let mean_err = |g: &ScalarField2D| {
        g.values().iter().zip(clean.values()).map(|(a, b)| (a - b).abs()).sum::<f64>() / g.values().len() as f64
    };
    println!("mean abs error: noisy {:.4}, denoised {:.4}", mean_err(&noisy), mean_err(&u));
    let output = dir.join("denoise_output.pgm");
    write_pgm(&output, &u)?;
    println!("wrote {} and {}", input.display(), output.display());
    Ok(())
}
