//! Projects a few ego-frame points into every camera of the synthetic
//! surround rig, at both feature scales.

use bevkernel::synthetic::surround_rig;
use bevkernel::{project_point, round_pixel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rig = surround_rig(6, 2)?;
    let points = [
        [20.0, 0.0, 0.0],
        [10.0, 10.0, 0.0],
        [-15.0, 3.0, 1.0],
        [0.5, 0.0, 0.0],
    ];

    for p in &points {
        println!("point ({:.1}, {:.1}, {:.1})", p[0], p[1], p[2]);
        for view in rig.views() {
            for &stride in rig.scale_strides() {
                let c = project_point(p, view, stride);
                if !c.valid {
                    continue;
                }
                let (h, w) = view.feature_size(stride);
                let r = round_pixel(&c);
                let inside =
                    r.row >= 0 && r.col >= 0 && (r.row as usize) < h && (r.col as usize) < w;
                println!(
                    "  {:>5} /{:<2}  u {:8.3}  v {:8.3}  depth {:6.2}  -> ({}, {}){}",
                    view.name,
                    stride,
                    c.u,
                    c.v,
                    c.depth,
                    r.row,
                    r.col,
                    if inside { "" } else { "  outside map" }
                );
            }
        }
    }
    Ok(())
}
