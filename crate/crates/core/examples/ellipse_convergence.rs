//! Time refinement for a shrinking ellipse against a front-tracking
//! reference, first-order scheme.
//!
//! Usage: `ellipse_convergence [n]` (default 200; the preset uses 500).

use median_flow::bench::{convergence_study, Preset};

fn main() -> median_flow::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(200, |s| s.parse().expect("grid size"));
    for table in convergence_study(Preset::Table1, Some(n), None)? {
        println!("{}", table.case);
        print!("{}", table.to_csv());
        if let Some(p) = table.fitted_order() {
            println!("least squares order {p:.3}");
        }
    }
    Ok(())
}
