use crate::error::Result;
use crate::geometry::CameraRig;
use crate::grid::{BevGridSpec, KernelSpec};
use crate::lut::{build_lut, fingerprint, Lut};

/// Everything that fixes the BEV → pixel correspondence: rig, grid and kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub rig: CameraRig,
    pub grid: BevGridSpec,
    pub kernel: KernelSpec,
}

impl Scene {
    pub fn new(rig: CameraRig, grid: BevGridSpec, kernel: KernelSpec) -> Result<Self> {
        grid.validate()?;
        kernel.validate()?;
        Ok(Scene { rig, grid, kernel })
    }

    pub fn num_queries(&self) -> usize {
        self.grid.num_cells()
    }

    pub fn positions_per_kernel(&self) -> usize {
        self.kernel.positions()
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(&self.rig, &self.grid, &self.kernel)
    }

    pub fn build_lut(&self) -> Result<Lut> {
        build_lut(&self.rig, &self.grid, &self.kernel, None)
    }

    pub fn with_rig(&self, rig: CameraRig) -> Self {
        Scene {
            rig,
            ..self.clone()
        }
    }

    pub fn with_kernel(&self, kernel: KernelSpec) -> Self {
        Scene {
            kernel,
            ..self.clone()
        }
    }

    pub fn with_height(&self, z: f64) -> Self {
        Scene {
            grid: self.grid.with_height(z),
            ..self.clone()
        }
    }
}
