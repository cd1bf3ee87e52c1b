//! Three grains meeting at a T junction relax toward equal angles under the
//! multiphase median scheme; with unequal tensions the weakest interface
//! grows at the expense of the others.

use median_flow::energy::multiphase_energy;
use median_flow::grid::{Boundary, GridSpec};
use median_flow::io::labels_to_csv;
use median_flow::median2p::SampledStencil;
use median_flow::multiphase::{PhaseSystem, RingBall, RingMultiphaseScheme, SurfaceTensionMatrix};
use median_flow::tdyn::PartitionField;

fn main() -> median_flow::Result<()> {
    let n = 64;
    let spec = GridSpec::new(n, n, 1.0, 1.0, Boundary::Reflect)?;
    let labels = (0..spec.len())
        .map(|k| {
            let p = spec.node(k % n, k / n);
            if p.y > 0.5 { 2 } else if p.x < 0.5 { 0 } else { 1 }
        })
        .collect();
    let part = PartitionField::new(spec, labels, 3)?;
    let h = spec.hx();
    let r = 4.0 * h;
    let lattice = SampledStencil::ball(&spec, r)?;
    for sigma in [SurfaceTensionMatrix::uniform(3), SurfaceTensionMatrix::new(vec![vec![0.0, 0.6, 1.0], vec![0.6, 0.0, 1.0], vec![1.0, 1.0, 0.0]])?] {
        println!("tensions\n{sigma}");
        let scheme = RingMultiphaseScheme::new(RingBall::new(r, h)?, sigma.clone(), 1e-4 * h)?.with_band(5.0 * h);
        let mut sys = PhaseSystem::from_partition(&part, 0.5 * h)?;
        for step in 0..=20 {
            if step % 5 == 0 {
                let p = sys.partition();
                let counts: Vec<usize> = (0..3).map(|i| p.phase(i).count()).collect();
                println!("step {step:2}: cells per phase {counts:?}, energy {:.5}", multiphase_energy(&p, &sigma, &lattice)?);
            }
            sys = scheme.step(&sys)?;
        }
        let path = std::env::temp_dir().join(format!("junction_{}.csv", if sigma == SurfaceTensionMatrix::uniform(3) { "equal" } else { "unequal" }));
        std::fs::write(&path, labels_to_csv(&sys.partition()))?;
        println!("labels written to {}\n", path.display());
    }
    Ok(())
}
