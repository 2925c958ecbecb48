//! Gathers kernel features, runs the attention forward pass and dumps one
//! query's attention weights as a PGM heatmap.
//!
//!     cargo run --example attention_forward -- [heatmap.pgm]

use bevkernel::attention::heatmap_pgm;
use bevkernel::synthetic::SyntheticPreset;
use bevkernel::{attend, attention_map, gather_lut, init_embeddings, init_weights, AttendOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("attention.pgm"));

    let preset = SyntheticPreset {
        channels: 64,
        kernel: "5x5".parse()?,
        ..SyntheticPreset::default()
    };
    let scene = preset.scene()?;
    let pyramid = preset.pyramid(&scene.rig)?;
    let unfolded = gather_lut(&pyramid, &scene.build_lut()?)?;

    let d_model = 32;
    let weights = init_weights(pyramid.channels(), d_model, 1)?;
    let queries = init_embeddings(unfolded.num_queries(), d_model, 2)?;
    let options = AttendOptions::default();
    let bev = attend(&queries, &unfolded, &weights, &options)?
        .with_grid(scene.grid.rows, scene.grid.cols)?;
    println!("BEV features {}x{}x{}", bev.rows, bev.cols, bev.d_model);

    let q = 12 * 25 + 17;
    let alpha = attention_map(&queries, &unfolded, &weights, &options, q)?;
    let valid = unfolded.block_valid(q);
    let on_image: f32 = alpha
        .iter()
        .zip(valid)
        .filter(|(_, v)| **v)
        .map(|(a, _)| a)
        .sum();
    let (top, weight) = alpha
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let p = unfolded.positions_per_kernel();
    println!(
        "query {q}: sum {:.6}, {:.3} of the mass on valid pixels, peak {weight:.4} at view {} scale {} position {}",
        alpha.iter().sum::<f32>(),
        on_image,
        top / p / unfolded.num_scales(),
        (top / p) % unfolded.num_scales(),
        top % p
    );

    let pgm = heatmap_pgm(&alpha, unfolded.num_views() * unfolded.num_scales(), p, 12)?;
    std::fs::write(&out, pgm)?;
    println!(
        "heatmap (rows: view x scale, cols: kernel position) -> {}",
        out.display()
    );
    Ok(())
}
