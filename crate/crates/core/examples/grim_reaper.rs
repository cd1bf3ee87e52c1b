//! Three-phase grim reaper: a translating solution with a triple junction,
//! evolved with the ring-integrated disk kernel.
//!
//! Usage: `grim_reaper [alpha] [n]` (defaults 3 and 100).

use median_flow::bench::{run_grim_reaper, GrimReaperSetup};

fn main() -> median_flow::Result<()> {
    let mut args = std::env::args().skip(1);
    let alpha: f64 = args.next().map_or(3.0, |s| s.parse().expect("alpha"));
    let n: usize = args.next().map_or(100, |s| s.parse().expect("grid size"));
    let setup = GrimReaperSetup::new(alpha)?;
    let angles = setup.reaper.junction_angles().map(f64::to_degrees);
    println!("alpha {alpha}: junction angles {angles:.1?} degrees, speed {:.4}", setup.reaper.speed());
    println!("surface tensions\n{}", setup.reaper.surface_tensions());

    let spec = setup.grid(n)?;
    let t_final = 0.03;
    let nt = n / 10;
    let start = setup.initial_system(&spec)?;
    println!("initial profile error {:.3e}", setup.profile_error(&start, 0.0)?);
    let sys = run_grim_reaper(&setup, &spec, t_final, nt)?;
    println!("h = 1/{n}, {nt} steps: profile error at t = {t_final} is {:.3e}", setup.profile_error(&sys, t_final)?);
    Ok(())
}
