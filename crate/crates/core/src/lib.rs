//! Geometry-guided kernel feature gathering for camera-to-BEV transformation.
//!
//! Each BEV grid cell is projected into every camera view and feature scale,
//! rounded to a prior pixel, and a small kernel region around that pixel is
//! unfolded into the features the cell's query attends over.
//!
//! * [`geometry`]: pinhole projection and rigid transforms.
//! * [`grid`]: BEV grid and kernel layouts (full, cross, dilated).
//! * [`lut`]: the precomputed query → pixel-index table and its `GKTL` file.
//! * [`gather`]: im2col, sample and LUT unfolding, bit-identical to each other.
//! * [`attention`]: single-head cross-attention producing BEV features.
//! * [`deviation`]: camera-deviation sampling and the deviated projection chain.
//! * [`bench`]: strategy timing and robustness statistics.
//!
//! The `examples/` directory has one runnable program per capability; the
//! `bevkernel` binary wires the same pieces into a command line.

pub mod attention;
pub mod bench;
pub mod cli;
mod codec;
pub mod config;
pub mod deviation;
pub mod error;
pub mod gather;
pub mod geometry;
pub mod grid;
pub mod lut;
pub mod scene;
pub mod synthetic;
pub mod tensor;

pub use attention::{
    attend, attention_map, init_embeddings, init_weights, AttendOptions, AttentionWeights,
    BevFeatureMap, QueryEmbeddings,
};
pub use config::ConfigFile;
pub use deviation::{
    deviated_extrinsics, rotation_matrix, sample_deviation, translation_matrix, DeviationConfig,
    DeviationSample,
};
pub use error::{Error, FormatError, Result};
pub use gather::{
    gather, gather_im2col, gather_lut, gather_sample, GatherOptions, Strategy, UnfoldedFeatures,
};
pub use geometry::{
    project_point, round_pixel, CameraExtrinsics, CameraIntrinsics, CameraRig, CameraView,
    PixelCoord,
};
pub use grid::{BevGridSpec, KernelLayout, KernelSpec};
pub use lut::{build_lut, Lut};
pub use scene::Scene;
pub use tensor::{FeatureMap, FeaturePyramid};
