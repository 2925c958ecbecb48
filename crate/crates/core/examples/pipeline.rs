//! End to end through files: features, table and weights on disk, then the
//! transform into a BEV tensor.
//!
//!     cargo run --example pipeline -- [out_dir]

use std::path::PathBuf;

use bevkernel::synthetic::SyntheticPreset;
use bevkernel::{
    attend, gather_lut, init_embeddings, init_weights, AttendOptions, AttentionWeights,
    FeaturePyramid, Lut,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("bevkernel-pipeline"));
    std::fs::create_dir_all(&dir)?;

    let preset = SyntheticPreset::default();
    let scene = preset.scene()?;
    preset
        .pyramid(&scene.rig)?
        .write(dir.join("features.gktf"))?;
    scene.build_lut()?.write(dir.join("scene.gktl"))?;
    init_weights(preset.channels, 64, 1)?.write(dir.join("weights.gktw"))?;

    let features = FeaturePyramid::read(dir.join("features.gktf"))?;
    let lut = Lut::read(dir.join("scene.gktl"))?;
    let weights = AttentionWeights::read(dir.join("weights.gktw"))?;
    if lut.fingerprint() != scene.fingerprint() {
        return Err("table was built for a different scene".into());
    }

    let unfolded = gather_lut(&features, &lut)?;
    let queries = init_embeddings(unfolded.num_queries(), weights.d_model, 2)?;
    let (rows, cols) = lut.grid_shape();
    let bev =
        attend(&queries, &unfolded, &weights, &AttendOptions::default())?.with_grid(rows, cols)?;
    bev.write(dir.join("bev.gktf"))?;

    let norm = |q: usize| bev.query(q).iter().map(|x| x * x).sum::<f32>().sqrt();
    println!(
        "wrote features, table, weights and BEV tensor to {}",
        dir.display()
    );
    println!("BEV {}x{} x d_model {}", bev.rows, bev.cols, bev.d_model);
    println!(
        "|out| at the grid center {:.4}, at a corner {:.4}",
        norm(rows / 2 * cols + cols / 2),
        norm(0)
    );
    Ok(())
}
