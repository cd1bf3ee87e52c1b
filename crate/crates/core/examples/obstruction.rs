//! Kernel moment bookkeeping: exact identities of the second-order circle
//! kernel, and the search showing that no two-shell kernel satisfies both
//! consistency constraints of the three-dimensional expansion.

use median_flow::kernels::{b_coefficients, check_obstruction, CircleSumKernel, MomentIdentities, RadialProfile};

fn main() {
    for kernel in [CircleSumKernel::single_circle(), CircleSumKernel::second_order()] {
        println!("{kernel}\n{}\n", MomentIdentities::of(&kernel));
    }
    for profile in [RadialProfile::Gaussian { sigma: 1.0 }, RadialProfile::Ball { radius: 1.0 }] {
        let b = b_coefficients(&profile).expect("finite moments");
        let (r1, r2) = b.residuals();
        println!("{profile:?}: residuals {r1:.4e}, {r2:.4e}");
    }
    println!("\n{}", check_obstruction(32, 5));
}
