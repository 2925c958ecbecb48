//! BEV-query → pixel-index look-up table.
//!
//! For every query, view, scale and kernel position the table stores a
//! row-major flat index `row * W + col` into that view/scale's feature map
//! plus a validity bit. Positions that fall outside the map, and every
//! position of a prior that projects behind the camera, are invalid and
//! gather zeros. Entries are ordered query-major, then view, then scale, then
//! kernel offset.
//!
//! # Binary layout (`GKTL`, version 1, little-endian)
//!
//! ```text
//! magic       "GKTL"
//! version     u16
//! fingerprint u64
//! grid_rows   u32
//! grid_cols   u32
//! num_views   u32
//! num_scales  u32
//! positions   u32            // per kernel
//! dims        (H u32, W u32) × num_views·num_scales, view-major
//! indices     u32 × N        // N = rows·cols·views·scales·positions; 0 when invalid
//! validity    ceil(N/8) bytes, bit i = entry i, LSB first, padding bits zero
//! ```

use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::codec::{dim, to_u32, Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::geometry::{project_point, round_pixel, CameraRig, Point3, RoundedPixel};
use crate::grid::{BevGridSpec, KernelLayout, KernelSpec};

pub const LUT_MAGIC: [u8; 4] = *b"GKTL";
pub const LUT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lut {
    grid_rows: usize,
    grid_cols: usize,
    num_views: usize,
    num_scales: usize,
    positions: usize,
    map_dims: Vec<(usize, usize)>,
    fingerprint: u64,
    indices: Vec<u32>,
    valid: Vec<bool>,
}

/// One entry of a query's block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LutEntry {
    pub view: usize,
    pub scale: usize,
    pub position: usize,
    pub flat_index: u32,
    pub valid: bool,
}

/// Contiguous entry block of one query.
#[derive(Debug, Clone, Copy)]
pub struct QueryBlock<'a> {
    num_scales: usize,
    positions: usize,
    indices: &'a [u32],
    valid: &'a [bool],
}

impl<'a> QueryBlock<'a> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &'a [u32] {
        self.indices
    }

    pub fn valid(&self) -> &'a [bool] {
        self.valid
    }

    pub fn iter(&self) -> impl Iterator<Item = LutEntry> + 'a {
        let (ns, np) = (self.num_scales, self.positions);
        self.indices
            .iter()
            .zip(self.valid)
            .enumerate()
            .map(move |(i, (&flat_index, &valid))| LutEntry {
                view: i / (ns * np),
                scale: (i / np) % ns,
                position: i % np,
                flat_index,
                valid,
            })
    }
}

/// Rounded prior pixel of a BEV point in one view at one stride.
pub fn prior_pixel(
    point: &Point3,
    view: &crate::geometry::CameraView,
    stride: usize,
) -> RoundedPixel {
    round_pixel(&project_point(point, view, stride))
}

/// 64-bit digest of everything that determines a table's contents.
pub fn fingerprint(rig: &CameraRig, grid: &BevGridSpec, kernel: &KernelSpec) -> u64 {
    let mut h = Sha256::new();
    let f = |h: &mut Sha256, v: f64| h.update(v.to_bits().to_le_bytes());
    let u = |h: &mut Sha256, v: usize| h.update((v as u64).to_le_bytes());
    u(&mut h, rig.num_views());
    for v in rig.views() {
        u(&mut h, v.name.len());
        h.update(v.name.as_bytes());
        let k = &v.intrinsics;
        for x in [k.fx, k.fy, k.cx, k.cy, k.skew] {
            f(&mut h, x);
        }
        for x in v.extrinsics.to_row_major() {
            f(&mut h, x);
        }
        u(&mut h, v.image_size.0);
        u(&mut h, v.image_size.1);
    }
    u(&mut h, rig.num_scales());
    for &s in rig.scale_strides() {
        u(&mut h, s);
    }
    u(&mut h, grid.rows);
    u(&mut h, grid.cols);
    for x in grid.extent {
        f(&mut h, x);
    }
    f(&mut h, grid.height_z);
    u(&mut h, kernel.k_h);
    u(&mut h, kernel.k_w);
    u(
        &mut h,
        match kernel.layout {
            KernelLayout::Full => 0,
            KernelLayout::Cross => 1,
            KernelLayout::Dilated => 2,
        },
    );
    u(&mut h, kernel.dilation);
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Precomputes the table. `height_override` replaces the grid's plane height.
pub fn build_lut(
    rig: &CameraRig,
    grid: &BevGridSpec,
    kernel: &KernelSpec,
    height_override: Option<f64>,
) -> Result<Lut> {
    grid.validate()?;
    kernel.validate()?;
    let grid = match height_override {
        Some(z) if !z.is_finite() => {
            return Err(Error::invalid("height override", "must be finite"))
        }
        Some(z) => grid.with_height(z),
        None => *grid,
    };
    let offsets = kernel.offsets();
    let map_dims = rig.feature_sizes();
    let positions = offsets.len();
    let block = rig.num_views() * rig.num_scales() * positions;
    let total = grid.num_cells() * block;
    let mut indices = vec![0u32; total];
    let mut valid = vec![false; total];

    indices
        .par_chunks_mut(block)
        .zip(valid.par_chunks_mut(block))
        .enumerate()
        .for_each(|(query, (idx, ok))| {
            let center = grid.center_unchecked(query / grid.cols, query % grid.cols);
            let mut slot = 0;
            for view in rig.views() {
                for &stride in rig.scale_strides() {
                    let (h, w) = view.feature_size(stride);
                    let prior = prior_pixel(&center, view, stride);
                    for &(dr, dc) in &offsets {
                        let (r, c) = (prior.row + dr, prior.col + dc);
                        if prior.valid && r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
                            idx[slot] = (r as usize * w + c as usize) as u32;
                            ok[slot] = true;
                        }
                        slot += 1;
                    }
                }
            }
        });

    Ok(Lut {
        grid_rows: grid.rows,
        grid_cols: grid.cols,
        num_views: rig.num_views(),
        num_scales: rig.num_scales(),
        positions,
        map_dims,
        fingerprint: fingerprint(rig, &grid, kernel),
        indices,
        valid,
    })
}

impl Lut {
    pub fn num_queries(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.grid_rows, self.grid_cols)
    }

    pub fn num_views(&self) -> usize {
        self.num_views
    }

    pub fn num_scales(&self) -> usize {
        self.num_scales
    }

    pub fn positions_per_kernel(&self) -> usize {
        self.positions
    }

    /// Entries per query: views · scales · positions.
    pub fn block_len(&self) -> usize {
        self.num_views * self.num_scales * self.positions
    }

    /// Feature-map (H, W) for each (view, scale), view-major.
    pub fn map_dims(&self) -> &[(usize, usize)] {
        &self.map_dims
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn lookup(&self, query_index: usize) -> Result<QueryBlock<'_>> {
        if query_index >= self.num_queries() {
            return Err(Error::OutOfRange {
                what: "query",
                index: query_index,
                len: self.num_queries(),
            });
        }
        let b = self.block_len();
        let range = query_index * b..(query_index + 1) * b;
        Ok(QueryBlock {
            num_scales: self.num_scales,
            positions: self.positions,
            indices: &self.indices[range.clone()],
            valid: &self.valid[range],
        })
    }

    /// Fraction of entries whose (index, validity) match `other` exactly.
    pub fn overlap_fraction(&self, other: &Lut) -> Result<f64> {
        if self.indices.len() != other.indices.len() || self.map_dims != other.map_dims {
            return Err(Error::ShapeMismatch("LUTs have different shapes".into()));
        }
        if self.indices.is_empty() {
            return Ok(1.0);
        }
        let same = (0..self.indices.len())
            .filter(|&i| self.valid[i] == other.valid[i] && self.indices[i] == other.indices[i])
            .count();
        Ok(same as f64 / self.indices.len() as f64)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(&LUT_MAGIC, LUT_VERSION);
        w.u64(self.fingerprint);
        w.u32(to_u32(self.grid_rows, "grid rows"));
        w.u32(to_u32(self.grid_cols, "grid cols"));
        w.u32(to_u32(self.num_views, "views"));
        w.u32(to_u32(self.num_scales, "scales"));
        w.u32(to_u32(self.positions, "positions"));
        for &(h, wd) in &self.map_dims {
            w.u32(to_u32(h, "map height"));
            w.u32(to_u32(wd, "map width"));
        }
        let mut raw = Vec::with_capacity(self.indices.len() * 4);
        for &i in &self.indices {
            raw.extend_from_slice(&i.to_le_bytes());
        }
        w.bytes(&raw);
        let mut bits = vec![0u8; self.valid.len().div_ceil(8)];
        for (i, _) in self.valid.iter().enumerate().filter(|(_, v)| **v) {
            bits[i / 8] |= 1 << (i % 8);
        }
        w.bytes(&bits);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::with_header(bytes, &LUT_MAGIC, LUT_VERSION)?;
        let fingerprint = r.u64()?;
        let grid_rows = dim(r.u32()?, "grid rows")?;
        let grid_cols = dim(r.u32()?, "grid cols")?;
        let num_views = dim(r.u32()?, "num_views")?;
        let num_scales = dim(r.u32()?, "num_scales")?;
        let positions = dim(r.u32()?, "positions")?;
        let maps = num_views
            .checked_mul(num_scales)
            .ok_or_else(|| FormatError::Inconsistent("map count overflows".into()))?;
        let mut map_dims = Vec::with_capacity(maps.min(1 << 16));
        for _ in 0..maps {
            let h = dim(r.u32()?, "map height")?;
            let w = dim(r.u32()?, "map width")?;
            map_dims.push((h, w));
        }
        let total = [grid_rows, grid_cols, num_views, num_scales, positions]
            .iter()
            .try_fold(1usize, |acc, &x| acc.checked_mul(x))
            .ok_or_else(|| FormatError::Inconsistent("entry count overflows".into()))?;
        let raw = r.take(
            total
                .checked_mul(4)
                .ok_or_else(|| FormatError::Inconsistent("entry count overflows".into()))?,
        )?;
        let indices: Vec<u32> = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let bits = r.take(total.div_ceil(8))?;
        r.finish()?;

        let valid: Vec<bool> = (0..total)
            .map(|i| bits[i / 8] >> (i % 8) & 1 == 1)
            .collect();
        if total % 8 != 0 && bits[total / 8] >> (total % 8) != 0 {
            return Err(FormatError::Inconsistent(
                "nonzero validity padding bits".into(),
            ));
        }
        let per_map = positions;
        for (i, (&idx, &ok)) in indices.iter().zip(&valid).enumerate() {
            let map = (i / per_map) % maps;
            let (h, w) = map_dims[map];
            if ok && idx as usize >= h * w {
                return Err(FormatError::Inconsistent(format!(
                    "entry {i} index {idx} out of bounds for {h}x{w} map"
                )));
            }
            if !ok && idx != 0 {
                return Err(FormatError::Inconsistent(format!(
                    "invalid entry {i} carries index {idx}"
                )));
            }
        }
        Ok(Lut {
            grid_rows,
            grid_cols,
            num_views,
            num_scales,
            positions,
            map_dims,
            fingerprint,
            indices,
            valid,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

pub fn serialize_lut(lut: &Lut) -> Vec<u8> {
    lut.to_bytes()
}

pub fn deserialize_lut(bytes: &[u8]) -> Result<Lut, FormatError> {
    Lut::from_bytes(bytes)
}
