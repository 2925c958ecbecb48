//! Unfolds the same features with all three strategies and checks that the
//! results are bit-identical.

use std::time::Instant;

use bevkernel::synthetic::SyntheticPreset;
use bevkernel::{gather, GatherOptions, Strategy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let preset = SyntheticPreset {
        kernel: "7x3".parse()?,
        ..SyntheticPreset::default()
    };
    let scene = preset.scene()?;
    let pyramid = preset.pyramid(&scene.rig)?;
    let lut = scene.build_lut()?;

    let mut results = Vec::new();
    for strategy in Strategy::ALL {
        let start = Instant::now();
        let unfolded = gather(
            strategy,
            &scene,
            &pyramid,
            Some(&lut),
            &GatherOptions::default(),
        )?;
        println!(
            "{strategy:>7}: {:8.2} ms",
            start.elapsed().as_secs_f64() * 1e3
        );
        results.push(unfolded);
    }

    let (v, s, c, p) = results[0].block_shape();
    println!("per-query block [{v} views][{s} scales][{c} channels][{p} positions]");
    for (strategy, r) in Strategy::ALL.iter().zip(&results).skip(1) {
        match results[0].first_difference(r) {
            None => println!("{strategy} matches im2col bit for bit"),
            Some((q, i)) => println!("{strategy} differs from im2col at query {q}, element {i}"),
        }
    }
    Ok(())
}
