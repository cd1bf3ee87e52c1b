//! A circle shrinking by curvature under the single-circle median scheme,
//! compared with the exact radius `sqrt(r0^2 - 2t)`.
//!
//! Usage: `shrinking_circle [n]` (default 256).

use median_flow::bench::exact_circle_radius;
use median_flow::grid::{extract_contour, hausdorff_distance, init_shape, FrontPolyline, GridSpec, Point, Shape};
use median_flow::io::polylines_to_csv;
use median_flow::kernels::CircleSumKernel;
use median_flow::median2p::{scaled_kernel, BisectionParams, MedianMethod, MedianScheme, Variant};

fn main() -> median_flow::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(256, |s| s.parse().expect("grid size"));
    let spec = GridSpec::unit(n)?;
    let h = spec.hx();
    let center = Point::new(0.5, 0.5);
    let r = 5.0 * h;
    let dt = 0.5 * r * r;
    let steps = 10;

    let kernel = scaled_kernel(&CircleSumKernel::single_circle(), dt)?;
    let params = BisectionParams::new(1e-6, 1e-6 * h)?;
    let scheme = MedianScheme::new(MedianMethod::Bisection { kernel, params }, Variant::Jacobi).with_band(6.0 * h);
    let mut phi = init_shape(&spec, &Shape::Circle { center, radius: 0.25 })?;
    for k in 1..=steps {
        phi = scheme.step(&phi)?;
        let exact = FrontPolyline::circle(center, exact_circle_radius(0.25, k as f64 * dt)?, 4096);
        let err = hausdorff_distance(&extract_contour(&phi, 0.0), &[exact])?;
        println!("step {k:2}  t = {:.3e}  error = {err:.3e} ({:.4} cells)", k as f64 * dt, err / h);
    }
    let path = std::env::temp_dir().join("shrinking_circle.csv");
    std::fs::write(&path, polylines_to_csv(&extract_contour(&phi, 0.0)))?;
    println!("final contour written to {}", path.display());
    Ok(())
}
