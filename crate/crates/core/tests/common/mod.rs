//! Test-side oracles and random instance generators.
//!
//! The oracles here are written from the model definitions directly and do
//! not call into the crate's projection, rounding or gather code.

#![allow(dead_code, clippy::needless_range_loop)]

use std::sync::{Mutex, MutexGuard};

use bevkernel::deviation::rotation_matrix;
use bevkernel::geometry::{compose, CameraExtrinsics, CameraIntrinsics, CameraRig, CameraView};
use bevkernel::grid::{BevGridSpec, KernelLayout, KernelSpec};
use bevkernel::synthetic::yaw_camera;
use bevkernel::tensor::FeaturePyramid;
use bevkernel::AttentionWeights;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

/// Keeps timing-sensitive tests from overlapping within one test binary.
pub fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// K · [R | t] · [X; 1], perspective divide, then divide by stride.
/// `None` when the camera-frame depth is at or below 1e-3.
pub fn oracle_project(point: [f64; 3], view: &CameraView, stride: usize) -> Option<(f64, f64)> {
    let e = view.extrinsics.to_row_major();
    let k = &view.intrinsics;
    let kmat = [[k.fx, k.skew, k.cx], [0.0, k.fy, k.cy], [0.0, 0.0, 1.0]];
    let hom = [point[0], point[1], point[2], 1.0];
    let mut cam = [0.0f64; 3];
    for (r, c) in cam.iter_mut().enumerate() {
        for j in 0..4 {
            *c += e[r * 4 + j] * hom[j];
        }
    }
    if cam[2] <= 1e-3 {
        return None;
    }
    let mut img = [0.0f64; 3];
    for (r, o) in img.iter_mut().enumerate() {
        for j in 0..3 {
            *o += kmat[r][j] * cam[j];
        }
    }
    Some((
        img[0] / img[2] / stride as f64,
        img[1] / img[2] / stride as f64,
    ))
}

/// Nearest integer, halves away from zero, computed without `f64::round`.
pub fn oracle_round(x: f64) -> i64 {
    let t = x.abs().floor();
    let r = if x.abs() - t >= 0.5 { t + 1.0 } else { t };
    (r * x.signum()) as i64
}

pub fn oracle_center(grid: &BevGridSpec, query: usize) -> [f64; 3] {
    let (row, col) = (query / grid.cols, query % grid.cols);
    let [x0, x1, y0, y1] = grid.extent;
    [
        x0 + (col as f64 + 0.5) * (x1 - x0) / grid.cols as f64,
        y0 + (row as f64 + 0.5) * (y1 - y0) / grid.rows as f64,
        grid.height_z,
    ]
}

pub fn oracle_offsets(kernel: &KernelSpec) -> Vec<(i64, i64)> {
    let hh = (kernel.k_h / 2) as i64;
    let hw = (kernel.k_w / 2) as i64;
    let mut out = Vec::new();
    match kernel.layout {
        KernelLayout::Full => {
            for r in -hh..=hh {
                for c in -hw..=hw {
                    out.push((r, c));
                }
            }
        }
        KernelLayout::Dilated => {
            let d = kernel.dilation as i64;
            for r in -hh..=hh {
                for c in -hw..=hw {
                    out.push((r * d, c * d));
                }
            }
        }
        KernelLayout::Cross => {
            for r in -hh..=hh {
                out.push((r, 0));
            }
            for c in -hw..=hw {
                if c != 0 {
                    out.push((0, c));
                }
            }
        }
    }
    out
}

/// Rounded prior (row, col) of every (query, view, scale), or `None`.
pub fn oracle_priors(rig: &CameraRig, grid: &BevGridSpec) -> Vec<Option<(i64, i64)>> {
    let mut out = Vec::new();
    for q in 0..grid.rows * grid.cols {
        let p = oracle_center(grid, q);
        for view in rig.views() {
            for &stride in rig.scale_strides() {
                out.push(
                    oracle_project(p, view, stride)
                        .map(|(u, v)| (oracle_round(v), oracle_round(u))),
                );
            }
        }
    }
    out
}

/// Brute-force unfolding: `[Q][V][S][C][P]` values.
pub fn oracle_gather(
    rig: &CameraRig,
    grid: &BevGridSpec,
    kernel: &KernelSpec,
    pyramid: &FeaturePyramid,
) -> Vec<f32> {
    let offsets = oracle_offsets(kernel);
    let priors = oracle_priors(rig, grid);
    let (v_n, s_n) = (rig.num_views(), rig.num_scales());
    let c_n = pyramid.channels();
    let mut out = Vec::new();
    for (i, prior) in priors.iter().enumerate() {
        let (v, s) = ((i / s_n) % v_n, i % s_n);
        let map = pyramid.map(v, s);
        for c in 0..c_n {
            for &(dr, dc) in &offsets {
                let val = match prior {
                    Some((r, col)) => {
                        let (rr, cc) = (r + dr, col + dc);
                        if rr >= 0
                            && cc >= 0
                            && (rr as usize) < map.height
                            && (cc as usize) < map.width
                        {
                            map.data[(c * map.height + rr as usize) * map.width + cc as usize]
                        } else {
                            0.0
                        }
                    }
                    None => 0.0,
                };
                out.push(val);
            }
        }
    }
    out
}

/// Unvectorized forward pass in f64 over a `[P][C]` position matrix.
pub fn oracle_attend(
    query: &[f32],
    positions: &[f32],
    w: &AttentionWeights,
) -> (Vec<f64>, Vec<f64>) {
    let (c, d) = (w.channels, w.d_model);
    let p = positions.len() / c;
    let at = |m: &[f32], i: usize, o: usize, width: usize| m[i * width + o] as f64;
    let mut qp = vec![0.0f64; d];
    for o in 0..d {
        for i in 0..d {
            qp[o] += at(&w.w_q, i, o, d) * query[i] as f64;
        }
    }
    let mut keys = vec![vec![0.0f64; d]; p];
    let mut values = vec![vec![0.0f64; d]; p];
    for j in 0..p {
        for o in 0..d {
            let mut k = w.b_k[o] as f64;
            let mut v = w.b_v[o] as f64;
            for ch in 0..c {
                let f = positions[j * c + ch] as f64;
                k += at(&w.w_k, ch, o, d) * f;
                v += at(&w.w_v, ch, o, d) * f;
            }
            keys[j][o] = k;
            values[j][o] = v;
        }
    }
    let logits: Vec<f64> = keys
        .iter()
        .map(|k| k.iter().zip(&qp).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let alpha: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let mut ctx = vec![0.0f64; d];
    for j in 0..p {
        for o in 0..d {
            ctx[o] += alpha[j] * values[j][o];
        }
    }
    let mut out = vec![0.0f64; d];
    for o in 0..d {
        out[o] = w.b_o[o] as f64 + query[o] as f64;
        for i in 0..d {
            out[o] += at(&w.w_o, i, o, d) * ctx[i];
        }
    }
    (alpha, out)
}

pub const KERNELS: [&str; 5] = ["3x3", "5x5", "7x3", "cross-3x3", "3x3-d2"];

/// Random outward-looking camera around the ego origin, slightly tilted.
pub fn random_view(rng: &mut ChaCha8Rng, name: String) -> CameraView {
    let h = rng.random_range(32..=256usize);
    let w = rng.random_range(32..=512usize);
    let f = rng.random_range(0.4..1.5) * w as f64;
    let intrinsics = CameraIntrinsics::new(
        f,
        f * rng.random_range(0.9..1.1),
        w as f64 * rng.random_range(0.4..0.6),
        h as f64 * rng.random_range(0.4..0.6),
        rng.random_range(-2.0..2.0),
    )
    .unwrap();
    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let center = [
        yaw.cos() * rng.random_range(0.0..2.0),
        yaw.sin() * rng.random_range(0.0..2.0),
        rng.random_range(0.5..3.0),
    ];
    let tilt = rotation_matrix(
        rng.random_range(-0.3..0.05),
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
    );
    let base = yaw_camera(yaw, center).unwrap();
    let extrinsics = CameraExtrinsics::new(compose(&tilt, base.matrix())).unwrap();
    CameraView::new(name, intrinsics, extrinsics, (h, w)).unwrap()
}

pub fn random_rig(rng: &mut ChaCha8Rng, max_views: usize, max_scales: usize) -> CameraRig {
    let views = rng.random_range(1..=max_views);
    let scales = rng.random_range(1..=max_scales);
    let base = [2usize, 4, 8][rng.random_range(0..3)];
    let cams = (0..views)
        .map(|i| random_view(rng, format!("cam{i}")))
        .collect();
    CameraRig::new(cams, (0..scales).map(|s| base << s).collect()).unwrap()
}

pub fn random_grid(rng: &mut ChaCha8Rng, max_side: usize) -> BevGridSpec {
    let half = rng.random_range(5.0..60.0);
    BevGridSpec::new(
        rng.random_range(1..=max_side),
        rng.random_range(1..=max_side),
        [-half, half, -half * rng.random_range(0.5..1.5), half],
        rng.random_range(-1.0..2.0),
    )
    .unwrap()
}

pub fn random_kernel(rng: &mut ChaCha8Rng) -> KernelSpec {
    KERNELS[rng.random_range(0..KERNELS.len())].parse().unwrap()
}

pub fn to_bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}
