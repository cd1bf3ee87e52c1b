//! Thresholding the median filter at any level gives the same set as one
//! step of threshold dynamics on the thresholded field.

use median_flow::bench::stacking_experiment;
use median_flow::grid::{GridSpec, ScalarField2D};
use median_flow::median2p::SampledStencil;
use median_flow::tdyn::{spanning_levels, stacked_td};

fn main() -> median_flow::Result<()> {
    let spec = GridSpec::unit(32)?;
    let f = ScalarField2D::from_fn(spec, |p| (9.0 * p.x).sin() + (7.0 * p.y).cos() * p.x);
    let st = SampledStencil::circle(4.3 * spec.hx(), 32)?;
    let report = stacked_td(&f, &st, &spanning_levels(&f, 11, 0.0))?;
    for (l, m) in report.levels.iter().zip(&report.mismatches) {
        println!("level {l:+.4}: {m} mismatching nodes");
    }

    let summary = stacking_experiment(20, 64, 32, 21, 7)?;
    println!("{} random fields x {} levels: {} mismatches", summary.fields, summary.levels, summary.total());
    Ok(())
}
