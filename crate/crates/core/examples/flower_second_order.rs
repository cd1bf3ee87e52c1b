//! Flower-shaped curves with the three-circle second-order kernel, refining
//! space and time together.
//!
//! Usage: `flower_second_order [levels]` (default 3 of 4).

use median_flow::bench::{convergence_study, Preset};
use median_flow::kernels::{CircleSumKernel, MomentIdentities};

fn main() -> median_flow::Result<()> {
    let levels: usize = std::env::args().nth(1).map_or(3, |s| s.parse().expect("level count"));
    let kernel = CircleSumKernel::second_order();
    println!("kernel {kernel}\n{}\n", MomentIdentities::of(&kernel));
    for table in convergence_study(Preset::Table2, None, Some(levels))? {
        println!("{}", table.case);
        print!("{}", table.to_csv());
    }
    Ok(())
}
