//! Kernel-feature unfolding.
//!
//! Three interchangeable strategies produce the same [`UnfoldedFeatures`]:
//!
//! * [`Strategy::Im2col`] unfolds every pixel of every (zero-padded) feature
//!   map into columns, then picks the column at each query's prior pixel.
//! * [`Strategy::Sample`] projects each query at gather time and reads the
//!   pixels of its kernel region directly, zero-filling out-of-bounds reads.
//! * [`Strategy::Lut`] reads through precomputed flat indices; no camera math
//!   runs at gather time.
//!
//! Priors are rounded before unfolding, so sampling is nearest-pixel and the
//! three outputs are bit-identical.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lut::{prior_pixel, Lut};
use crate::scene::Scene;
use crate::tensor::{FeatureMap, FeaturePyramid};

/// Default cap on im2col column buffers (2 GiB).
pub const DEFAULT_IM2COL_CAP: usize = 2 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Im2col,
    Sample,
    Lut,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Im2col, Strategy::Sample, Strategy::Lut];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Im2col => "im2col",
            Strategy::Sample => "sample",
            Strategy::Lut => "lut",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "im2col" => Ok(Strategy::Im2col),
            "sample" => Ok(Strategy::Sample),
            "lut" => Ok(Strategy::Lut),
            _ => Err(Error::invalid(
                "strategy",
                format!("{s:?} (expected im2col, sample or lut)"),
            )),
        }
    }
}

/// Per-query blocks of shape (views, scales, C, positions), query-major.
///
/// `valid` mirrors the LUT validity bits, shape (views, scales, positions)
/// per query. Invalid positions hold 0.0 in every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct UnfoldedFeatures {
    num_queries: usize,
    num_views: usize,
    num_scales: usize,
    channels: usize,
    positions: usize,
    data: Vec<f32>,
    valid: Vec<bool>,
}

impl UnfoldedFeatures {
    pub fn zeros(
        num_queries: usize,
        num_views: usize,
        num_scales: usize,
        channels: usize,
        positions: usize,
    ) -> Self {
        let slots = num_queries * num_views * num_scales * positions;
        UnfoldedFeatures {
            num_queries,
            num_views,
            num_scales,
            channels,
            positions,
            data: vec![0.0; slots * channels],
            valid: vec![false; slots],
        }
    }

    /// Builds from raw buffers laid out as documented on the type.
    pub fn from_parts(
        num_queries: usize,
        num_views: usize,
        num_scales: usize,
        channels: usize,
        positions: usize,
        data: Vec<f32>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let slots = num_queries * num_views * num_scales * positions;
        if valid.len() != slots || data.len() != slots * channels {
            return Err(Error::ShapeMismatch(format!(
                "unfolded buffers ({} values, {} flags) do not match {}x{}x{}x{}x{}",
                data.len(),
                valid.len(),
                num_queries,
                num_views,
                num_scales,
                channels,
                positions
            )));
        }
        Ok(UnfoldedFeatures {
            num_queries,
            num_views,
            num_scales,
            channels,
            positions,
            data,
            valid,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
    }

    pub fn num_views(&self) -> usize {
        self.num_views
    }

    pub fn num_scales(&self) -> usize {
        self.num_scales
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn positions_per_kernel(&self) -> usize {
        self.positions
    }

    /// Attention set size per query: views · scales · positions.
    pub fn positions_per_query(&self) -> usize {
        self.num_views * self.num_scales * self.positions
    }

    /// (views, scales, C, positions).
    pub fn block_shape(&self) -> (usize, usize, usize, usize) {
        (
            self.num_views,
            self.num_scales,
            self.channels,
            self.positions,
        )
    }

    pub fn block_len(&self) -> usize {
        self.positions_per_query() * self.channels
    }

    pub fn block(&self, query: usize) -> &[f32] {
        let b = self.block_len();
        &self.data[query * b..(query + 1) * b]
    }

    pub fn block_valid(&self, query: usize) -> &[bool] {
        let b = self.positions_per_query();
        &self.valid[query * b..(query + 1) * b]
    }

    pub fn value(
        &self,
        query: usize,
        view: usize,
        scale: usize,
        channel: usize,
        position: usize,
    ) -> f32 {
        let i = ((view * self.num_scales + scale) * self.channels + channel) * self.positions
            + position;
        self.block(query)[i]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    /// Query `query`'s features as a `[P][C]` matrix, P flattened over
    /// (view, scale, position).
    pub fn query_positions(&self, query: usize) -> Vec<f32> {
        let (c, p) = (self.channels, self.positions);
        let block = self.block(query);
        let mut out = vec![0.0; self.block_len()];
        for map in 0..self.num_views * self.num_scales {
            for ch in 0..c {
                for k in 0..p {
                    out[(map * p + k) * c + ch] = block[(map * c + ch) * p + k];
                }
            }
        }
        out
    }

    /// First (query, flat offset) where two results differ bitwise, if any.
    pub fn first_difference(&self, other: &UnfoldedFeatures) -> Option<(usize, usize)> {
        if self.block_shape() != other.block_shape() || self.num_queries != other.num_queries {
            return Some((0, 0));
        }
        let b = self.block_len();
        let pos = self
            .data
            .iter()
            .zip(&other.data)
            .position(|(a, b)| a.to_bits() != b.to_bits())
            .map(|i| (i / b, i % b));
        pos.or_else(|| {
            let pq = self.positions_per_query();
            self.valid
                .iter()
                .zip(&other.valid)
                .position(|(a, b)| a != b)
                .map(|i| (i / pq, i % pq))
        })
    }

    pub fn bit_identical(&self, other: &UnfoldedFeatures) -> bool {
        self.first_difference(other).is_none()
    }

    fn check_shape(
        &self,
        queries: usize,
        views: usize,
        scales: usize,
        channels: usize,
        positions: usize,
    ) -> Result<()> {
        let want = (queries, views, scales, channels, positions);
        let got = (
            self.num_queries,
            self.num_views,
            self.num_scales,
            self.channels,
            self.positions,
        );
        if want != got {
            return Err(Error::ShapeMismatch(format!(
                "output buffer is {got:?} (queries, views, scales, C, positions), expected {want:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GatherOptions {
    /// Upper bound on bytes im2col may materialize per call.
    pub im2col_memory_cap: usize,
}

impl Default for GatherOptions {
    fn default() -> Self {
        GatherOptions {
            im2col_memory_cap: DEFAULT_IM2COL_CAP,
        }
    }
}

fn alloc_for_scene(scene: &Scene, pyramid: &FeaturePyramid) -> UnfoldedFeatures {
    UnfoldedFeatures::zeros(
        scene.num_queries(),
        scene.rig.num_views(),
        scene.rig.num_scales(),
        pyramid.channels(),
        scene.positions_per_kernel(),
    )
}

fn check_scene_output(
    scene: &Scene,
    pyramid: &FeaturePyramid,
    out: &UnfoldedFeatures,
) -> Result<()> {
    pyramid.check_rig(&scene.rig)?;
    out.check_shape(
        scene.num_queries(),
        scene.rig.num_views(),
        scene.rig.num_scales(),
        pyramid.channels(),
        scene.positions_per_kernel(),
    )
}

/// Column buffer of one map: a `[C][P]` column per padded pixel.
struct Columns {
    pad_rows: i64,
    pad_cols: i64,
    padded_width: usize,
    padded_height: usize,
    column_len: usize,
    data: Vec<f32>,
}

impl Columns {
    fn column(&self, row: i64, col: i64) -> Option<&[f32]> {
        let (r, c) = (row + self.pad_rows, col + self.pad_cols);
        if r < 0 || c < 0 || r as usize >= self.padded_height || c as usize >= self.padded_width {
            return None;
        }
        let start = (r as usize * self.padded_width + c as usize) * self.column_len;
        Some(&self.data[start..start + self.column_len])
    }
}

fn unfold_map(map: &FeatureMap, offsets: &[(i64, i64)], reach: (i64, i64)) -> Columns {
    let (ph, pw) = (
        map.height + 2 * reach.0 as usize,
        map.width + 2 * reach.1 as usize,
    );
    let p = offsets.len();
    let column_len = map.channels * p;
    let plane = map.plane_len();
    let mut data = vec![0.0f32; ph * pw * column_len];
    data.par_chunks_mut(column_len)
        .enumerate()
        .for_each(|(pix, column)| {
            let row = (pix / pw) as i64 - reach.0;
            let col = (pix % pw) as i64 - reach.1;
            for (k, &(dr, dc)) in offsets.iter().enumerate() {
                let (r, c) = (row + dr, col + dc);
                if r < 0 || c < 0 || r as usize >= map.height || c as usize >= map.width {
                    continue;
                }
                let at = r as usize * map.width + c as usize;
                for ch in 0..map.channels {
                    column[ch * p + k] = map.data[ch * plane + at];
                }
            }
        });
    Columns {
        pad_rows: reach.0,
        pad_cols: reach.1,
        padded_width: pw,
        padded_height: ph,
        column_len,
        data,
    }
}

/// Bytes im2col would materialize for this scene and pyramid.
pub fn im2col_bytes(scene: &Scene, pyramid: &FeaturePyramid) -> usize {
    let (rh, rw) = scene.kernel.reach();
    pyramid
        .maps()
        .iter()
        .map(|m| {
            (m.height + 2 * rh as usize)
                * (m.width + 2 * rw as usize)
                * m.channels
                * scene.positions_per_kernel()
                * 4
        })
        .sum()
}

pub fn gather_im2col(
    scene: &Scene,
    pyramid: &FeaturePyramid,
    options: &GatherOptions,
) -> Result<UnfoldedFeatures> {
    let mut out = alloc_for_scene(scene, pyramid);
    gather_im2col_into(scene, pyramid, options, &mut out)?;
    Ok(out)
}

pub fn gather_im2col_into(
    scene: &Scene,
    pyramid: &FeaturePyramid,
    options: &GatherOptions,
    out: &mut UnfoldedFeatures,
) -> Result<()> {
    check_scene_output(scene, pyramid, out)?;
    let required = im2col_bytes(scene, pyramid);
    if required > options.im2col_memory_cap {
        return Err(Error::MemoryCap {
            required,
            cap: options.im2col_memory_cap,
        });
    }
    let offsets = scene.kernel.offsets();
    let reach = scene.kernel.reach();
    let columns: Vec<Columns> = pyramid
        .maps()
        .iter()
        .map(|m| unfold_map(m, &offsets, reach))
        .collect();

    let rig = &scene.rig;
    let grid = &scene.grid;
    let ns = rig.num_scales();
    let p = offsets.len();
    let column_len = pyramid.channels() * p;
    let block = out.block_len();
    let vblock = out.positions_per_query();
    out.data
        .par_chunks_mut(block)
        .zip(out.valid.par_chunks_mut(vblock))
        .enumerate()
        .for_each(|(query, (dst, ok))| {
            let center = grid.center_unchecked(query / grid.cols, query % grid.cols);
            for (v, view) in rig.views().iter().enumerate() {
                for (s, &stride) in rig.scale_strides().iter().enumerate() {
                    let map = v * ns + s;
                    let dst = &mut dst[map * column_len..(map + 1) * column_len];
                    let ok = &mut ok[map * p..(map + 1) * p];
                    let prior = prior_pixel(&center, view, stride);
                    let column = if prior.valid {
                        columns[map].column(prior.row, prior.col)
                    } else {
                        None
                    };
                    match column {
                        Some(col) => dst.copy_from_slice(col),
                        None => dst.fill(0.0),
                    }
                    let fm = pyramid.map(v, s);
                    for (k, &(dr, dc)) in offsets.iter().enumerate() {
                        let (r, c) = (prior.row + dr, prior.col + dc);
                        ok[k] = prior.valid
                            && r >= 0
                            && c >= 0
                            && (r as usize) < fm.height
                            && (c as usize) < fm.width;
                    }
                }
            }
        });
    Ok(())
}

pub fn gather_sample(scene: &Scene, pyramid: &FeaturePyramid) -> Result<UnfoldedFeatures> {
    let mut out = alloc_for_scene(scene, pyramid);
    gather_sample_into(scene, pyramid, &mut out)?;
    Ok(out)
}

pub fn gather_sample_into(
    scene: &Scene,
    pyramid: &FeaturePyramid,
    out: &mut UnfoldedFeatures,
) -> Result<()> {
    check_scene_output(scene, pyramid, out)?;
    let offsets = scene.kernel.offsets();
    let rig = &scene.rig;
    let grid = &scene.grid;
    let ns = rig.num_scales();
    let p = offsets.len();
    let channels = pyramid.channels();
    let block = out.block_len();
    let vblock = out.positions_per_query();
    out.data
        .par_chunks_mut(block)
        .zip(out.valid.par_chunks_mut(vblock))
        .enumerate()
        .for_each(|(query, (dst, ok))| {
            let center = grid.center_unchecked(query / grid.cols, query % grid.cols);
            for (v, view) in rig.views().iter().enumerate() {
                for (s, &stride) in rig.scale_strides().iter().enumerate() {
                    let map = v * ns + s;
                    let fm = pyramid.map(v, s);
                    let plane = fm.plane_len();
                    let dst = &mut dst[map * channels * p..(map + 1) * channels * p];
                    let prior = prior_pixel(&center, view, stride);
                    for (k, &(dr, dc)) in offsets.iter().enumerate() {
                        let (r, c) = (prior.row + dr, prior.col + dc);
                        let inside = prior.valid
                            && r >= 0
                            && c >= 0
                            && (r as usize) < fm.height
                            && (c as usize) < fm.width;
                        ok[map * p + k] = inside;
                        if inside {
                            let at = r as usize * fm.width + c as usize;
                            for ch in 0..channels {
                                dst[ch * p + k] = fm.data[ch * plane + at];
                            }
                        } else {
                            for ch in 0..channels {
                                dst[ch * p + k] = 0.0;
                            }
                        }
                    }
                }
            }
        });
    Ok(())
}

pub fn gather_lut(pyramid: &FeaturePyramid, lut: &Lut) -> Result<UnfoldedFeatures> {
    let mut out = UnfoldedFeatures::zeros(
        lut.num_queries(),
        lut.num_views(),
        lut.num_scales(),
        pyramid.channels(),
        lut.positions_per_kernel(),
    );
    gather_lut_into(pyramid, lut, &mut out)?;
    Ok(out)
}

pub fn gather_lut_into(
    pyramid: &FeaturePyramid,
    lut: &Lut,
    out: &mut UnfoldedFeatures,
) -> Result<()> {
    pyramid.check_dims(lut.num_views(), lut.num_scales(), lut.map_dims())?;
    let p = lut.positions_per_kernel();
    out.check_shape(
        lut.num_queries(),
        lut.num_views(),
        lut.num_scales(),
        pyramid.channels(),
        p,
    )?;
    let channels = pyramid.channels();
    let maps = pyramid.maps();
    let block = out.block_len();
    let vblock = out.positions_per_query();
    out.data
        .par_chunks_mut(block)
        .zip(out.valid.par_chunks_mut(vblock))
        .zip(
            lut.indices()
                .par_chunks(vblock)
                .zip(lut.validity().par_chunks(vblock)),
        )
        .for_each(|((dst, ok), (indices, valid))| {
            ok.copy_from_slice(valid);
            for (map, fm) in maps.iter().enumerate() {
                let idx = &indices[map * p..(map + 1) * p];
                let val = &valid[map * p..(map + 1) * p];
                let plane = fm.plane_len();
                let dst = &mut dst[map * channels * p..(map + 1) * channels * p];
                for (ch, row) in dst.chunks_exact_mut(p).enumerate() {
                    let src = &fm.data[ch * plane..(ch + 1) * plane];
                    for ((d, &i), &ok) in row.iter_mut().zip(idx).zip(val) {
                        *d = if ok { src[i as usize] } else { 0.0 };
                    }
                }
            }
        });
    Ok(())
}

/// Dispatches to one strategy. `lut` is required for [`Strategy::Lut`].
pub fn gather_into(
    strategy: Strategy,
    scene: &Scene,
    pyramid: &FeaturePyramid,
    lut: Option<&Lut>,
    options: &GatherOptions,
    out: &mut UnfoldedFeatures,
) -> Result<()> {
    match strategy {
        Strategy::Im2col => gather_im2col_into(scene, pyramid, options, out),
        Strategy::Sample => gather_sample_into(scene, pyramid, out),
        Strategy::Lut => {
            let lut = lut.ok_or_else(|| Error::invalid("gather", "LUT strategy needs a LUT"))?;
            gather_lut_into(pyramid, lut, out)
        }
    }
}

pub fn gather(
    strategy: Strategy,
    scene: &Scene,
    pyramid: &FeaturePyramid,
    lut: Option<&Lut>,
    options: &GatherOptions,
) -> Result<UnfoldedFeatures> {
    let mut out = alloc_for_scene(scene, pyramid);
    gather_into(strategy, scene, pyramid, lut, options, &mut out)?;
    Ok(out)
}
