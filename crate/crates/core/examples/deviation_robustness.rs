//! Monte Carlo camera deviation: how often the rounded prior pixel moves,
//! and how often the undeviated prior stays inside the deviated kernel.

use bevkernel::bench::{run_robustness, standard_levels, RobustnessConfig, HEIGHT_LEVELS};
use bevkernel::synthetic::SyntheticPreset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scene = SyntheticPreset::default().scene()?;
    let config = RobustnessConfig {
        levels: standard_levels(),
        kernels: vec![
            "3x3".parse()?,
            "5x5".parse()?,
            "7x3".parse()?,
            "cross-3x3".parse()?,
        ],
        draws: 300,
        seed: 0,
        heights: HEIGHT_LEVELS.to_vec(),
    };
    let report = run_robustness(&scene.rig, &scene.grid, &config)?;

    println!(
        "{:<12} {:>6} {:>10} {:>10} {:>10} {:>10}",
        "kind", "sigma", "kernel", "unchanged", "coverage", "shift px"
    );
    for r in &report.deviation {
        println!(
            "{:<12} {:>6} {:>10} {:>10.3} {:>10.3} {:>10.3}",
            r.kind.name(),
            r.sigma,
            r.kernel,
            r.unchanged_fraction,
            r.coverage_fraction,
            r.mean_shift_px
        );
    }
    println!();
    for h in &report.height {
        println!(
            "z = {:>4} m  {:>10}  LUT overlap with z = 0: {:.3}",
            h.z, h.kernel, h.overlap_fraction
        );
    }
    Ok(())
}
