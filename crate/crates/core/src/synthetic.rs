//! Synthetic surround-view rigs and feature pyramids for demos and tests.

use std::f64::consts::PI;

use crate::error::Result;
use crate::geometry::{CameraExtrinsics, CameraIntrinsics, CameraRig, CameraView};
use crate::grid::{BevGridSpec, KernelSpec};
use crate::scene::Scene;
use crate::tensor::FeaturePyramid;

/// Image size of the default preset (height, width).
pub const IMAGE_SIZE: (usize, usize) = (224, 480);
pub const MOUNT_HEIGHT: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPreset {
    pub views: usize,
    pub scales: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub channels: usize,
    pub kernel: KernelSpec,
    /// Half-width of the square BEV extent, meters.
    pub half_extent: f64,
    pub seed: u64,
}

impl Default for SyntheticPreset {
    /// Six surround cameras, two scales, a 25x25 query grid over 100 m x 100 m.
    fn default() -> Self {
        SyntheticPreset {
            views: 6,
            scales: 2,
            grid_rows: 25,
            grid_cols: 25,
            channels: 128,
            kernel: KernelSpec::full(3, 3).expect("3x3 is valid"),
            half_extent: 50.0,
            seed: 0,
        }
    }
}

/// Camera looking horizontally along ego yaw `yaw`, mounted at `center`.
///
/// Ego frame: x forward, y left, z up. Camera frame: x right, y down, z
/// forward.
pub fn yaw_camera(yaw: f64, center: [f64; 3]) -> Result<CameraExtrinsics> {
    let (s, c) = yaw.sin_cos();
    let rotation = [[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]];
    let mut t = [0.0; 3];
    for i in 0..3 {
        t[i] = -(0..3).map(|k| rotation[i][k] * center[k]).sum::<f64>();
    }
    CameraExtrinsics::from_rotation_translation(rotation, t)
}

/// `views` cameras evenly spread in yaw (first one facing forward), each
/// 1 m out from the ego origin at `MOUNT_HEIGHT`. Strides are 8, 16, 32, ...
pub fn surround_rig(views: usize, scales: usize) -> Result<CameraRig> {
    let (h, w) = IMAGE_SIZE;
    let intrinsics = CameraIntrinsics::new(300.0, 300.0, w as f64 / 2.0, h as f64 / 2.0, 0.0)?;
    let cams = (0..views)
        .map(|i| {
            let yaw = 2.0 * PI * i as f64 / views as f64;
            let center = [yaw.cos(), yaw.sin(), MOUNT_HEIGHT];
            CameraView::new(
                format!("cam{i}"),
                intrinsics,
                yaw_camera(yaw, center)?,
                IMAGE_SIZE,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let strides = (0..scales).map(|s| 8usize << s).collect();
    CameraRig::new(cams, strides)
}

impl SyntheticPreset {
    pub fn grid(&self) -> Result<BevGridSpec> {
        let e = self.half_extent;
        BevGridSpec::new(self.grid_rows, self.grid_cols, [-e, e, -e, e], 0.0)
    }

    pub fn scene(&self) -> Result<Scene> {
        Scene::new(
            surround_rig(self.views, self.scales)?,
            self.grid()?,
            self.kernel,
        )
    }

    pub fn pyramid(&self, rig: &CameraRig) -> Result<FeaturePyramid> {
        FeaturePyramid::random(rig, self.channels, self.seed)
    }
}
