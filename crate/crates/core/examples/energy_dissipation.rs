//! The nonlocal energy along median filter runs: the two-step scheme with a
//! circle stencil and the Jacobi scheme with a positive semidefinite
//! Gaussian both dissipate it.

use median_flow::bench::energy_experiment;

fn main() -> median_flow::Result<()> {
    let runs = energy_experiment(3, 64, 30, 11)?;
    for run in &runs {
        let first = run.report.series[0].1;
        let last = run.report.series.last().expect("nonempty").1;
        println!(
            "{:16} field {}: {:.5e} -> {:.5e}, {} increases",
            run.scheme,
            run.field,
            first,
            last,
            run.report.violations.len()
        );
    }
    print!("\n{}", runs[0].report.to_csv());
    Ok(())
}
