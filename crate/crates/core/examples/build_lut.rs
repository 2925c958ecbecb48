//! Builds the query -> pixel-index table for a rig config, writes it as a
//! `GKTL` file and reads it back.
//!
//!     cargo run --example build_lut -- [rig.toml] [out.gktl]

use std::path::PathBuf;

use bevkernel::{ConfigFile, Lut, Scene};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data/surround.toml")
    });
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("surround.gktl"));

    let cfg = ConfigFile::load(&config)?;
    let scene = Scene::new(cfg.rig()?, cfg.grid()?, cfg.kernel()?)?;
    let lut = scene.build_lut()?;
    lut.write(&out)?;

    let back = Lut::read(&out)?;
    assert_eq!(back, lut);
    let valid = lut.validity().iter().filter(|v| **v).count();
    println!("{} -> {}", config.display(), out.display());
    println!("fingerprint {:016x}", lut.fingerprint());
    println!(
        "{} queries, {} entries each, {:.1}% valid",
        lut.num_queries(),
        lut.block_len(),
        100.0 * valid as f64 / lut.indices().len() as f64
    );

    // The cell just ahead of the ego vehicle, seen by the front camera.
    let (rows, cols) = lut.grid_shape();
    let q = (rows / 2) * cols + cols / 2 + 3;
    let block = lut.lookup(q)?;
    let front_fine: Vec<String> = block
        .iter()
        .take(lut.positions_per_kernel())
        .map(|e| {
            if e.valid {
                e.flat_index.to_string()
            } else {
                "-".into()
            }
        })
        .collect();
    println!(
        "query {q} at {:?}: front/stride-8 indices [{}]",
        scene.grid.query_center(q)?,
        front_fine.join(" ")
    );
    Ok(())
}
