//! Multi-view multi-scale feature maps and the `GKTF` tensor file.
//!
//! # Binary layout (`GKTF`, version 1, little-endian)
//!
//! ```text
//! magic       "GKTF"
//! version     u16
//! num_views   u32
//! num_scales  u32
//! channels    u32
//! then for each (view, scale), view-major:
//!     H u32, W u32, H·W·C f32 in [C][H][W] order
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{dim, to_u32, Reader, Writer};
use crate::error::{Error, FormatError, Result};
use crate::geometry::CameraRig;

pub const TENSOR_MAGIC: [u8; 4] = *b"GKTF";
pub const TENSOR_VERSION: u16 = 1;

/// One channel-major `[C][H][W]` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("feature map", "dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "feature map data has {} values, expected {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "feature map",
                format!("non-finite value at {i}"),
            ));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            vec![value; channels * height * width],
        )
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn at(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[c * self.plane_len() + row * self.width + col]
    }
}

/// Dense (view, scale) grid of feature maps sharing one channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    num_views: usize,
    num_scales: usize,
    channels: usize,
    maps: Vec<FeatureMap>,
}

impl FeaturePyramid {
    /// `maps` is view-major: index `view * num_scales + scale`.
    pub fn new(num_views: usize, num_scales: usize, maps: Vec<FeatureMap>) -> Result<Self> {
        if num_views == 0 || num_scales == 0 {
            return Err(Error::invalid(
                "feature pyramid",
                "needs at least one view and scale",
            ));
        }
        if maps.len() != num_views * num_scales {
            return Err(Error::ShapeMismatch(format!(
                "{} maps for {} views x {} scales",
                maps.len(),
                num_views,
                num_scales
            )));
        }
        let channels = maps[0].channels;
        if maps.iter().any(|m| m.channels != channels) {
            return Err(Error::ShapeMismatch(
                "maps disagree on channel count".into(),
            ));
        }
        Ok(FeaturePyramid {
            num_views,
            num_scales,
            channels,
            maps,
        })
    }

    /// Uniform random features in [-1, 1), sized for `rig`.
    pub fn random(rig: &CameraRig, channels: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let maps = rig
            .feature_sizes()
            .into_iter()
            .map(|(h, w)| {
                let data = (0..channels * h * w)
                    .map(|_| rng.random_range(-1.0f32..1.0))
                    .collect();
                FeatureMap::new(channels, h, w, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rig.num_views(), rig.num_scales(), maps)
    }

    /// Constant-valued features sized for `rig`.
    pub fn constant(rig: &CameraRig, channels: usize, value: f32) -> Result<Self> {
        let maps = rig
            .feature_sizes()
            .into_iter()
            .map(|(h, w)| FeatureMap::filled(channels, h, w, value))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rig.num_views(), rig.num_scales(), maps)
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

    pub fn map(&self, view: usize, scale: usize) -> &FeatureMap {
        &self.maps[view * self.num_scales + scale]
    }

    pub fn map_mut(&mut self, view: usize, scale: usize) -> &mut FeatureMap {
        &mut self.maps[view * self.num_scales + scale]
    }

    pub fn maps(&self) -> &[FeatureMap] {
        &self.maps
    }

    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.maps.iter().map(|m| (m.height, m.width)).collect()
    }

    /// Errors unless view/scale counts and every map's (H, W) match `expected`.
    pub fn check_dims(
        &self,
        num_views: usize,
        num_scales: usize,
        expected: &[(usize, usize)],
    ) -> Result<()> {
        if self.num_views != num_views || self.num_scales != num_scales {
            return Err(Error::ShapeMismatch(format!(
                "pyramid has {}x{} (views x scales), expected {}x{}",
                self.num_views, self.num_scales, num_views, num_scales
            )));
        }
        let got = self.dims();
        if got != expected {
            return Err(Error::ShapeMismatch(format!(
                "pyramid map dims {got:?} differ from expected {expected:?}"
            )));
        }
        Ok(())
    }

    pub fn check_rig(&self, rig: &CameraRig) -> Result<()> {
        self.check_dims(rig.num_views(), rig.num_scales(), &rig.feature_sizes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(&TENSOR_MAGIC, TENSOR_VERSION);
        w.u32(to_u32(self.num_views, "views"));
        w.u32(to_u32(self.num_scales, "scales"));
        w.u32(to_u32(self.channels, "channels"));
        for m in &self.maps {
            w.u32(to_u32(m.height, "height"));
            w.u32(to_u32(m.width, "width"));
            w.f32s(&m.data);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::with_header(bytes, &TENSOR_MAGIC, TENSOR_VERSION)?;
        let num_views = dim(r.u32()?, "num_views")?;
        let num_scales = dim(r.u32()?, "num_scales")?;
        let channels = dim(r.u32()?, "channels")?;
        let count = num_views
            .checked_mul(num_scales)
            .ok_or_else(|| FormatError::Inconsistent("map count overflows".into()))?;
        let mut maps = Vec::new();
        for _ in 0..count {
            let h = dim(r.u32()?, "height")?;
            let w = dim(r.u32()?, "width")?;
            let n = [channels, h, w]
                .iter()
                .try_fold(1usize, |a, &x| a.checked_mul(x))
                .ok_or_else(|| FormatError::Inconsistent("map size overflows".into()))?;
            let data = r.f32s(n)?;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(FormatError::Inconsistent("non-finite feature value".into()));
            }
            maps.push(FeatureMap {
                channels,
                height: h,
                width: w,
                data,
            });
        }
        r.finish()?;
        Ok(FeaturePyramid {
            num_views,
            num_scales,
            channels,
            maps,
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

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FeaturePyramid {
        let maps = vec![
            FeatureMap::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            FeatureMap::new(2, 2, 1, vec![-1.0, -2.0, 0.5, 0.25]).unwrap(),
        ];
        FeaturePyramid::new(1, 2, maps).unwrap()
    }

    #[test]
    fn layout_is_channel_major() {
        let p = small();
        let m = p.map(0, 0);
        assert_eq!(m.at(0, 0, 1), 2.0);
        assert_eq!(m.at(1, 0, 0), 3.0);
    }

    #[test]
    fn header_bytes_are_documented_layout() {
        let bytes = small().to_bytes();
        assert_eq!(&bytes[..4], b"GKTF");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[14..18].try_into().unwrap()), 2);
        // first map: H=1, W=2, then the first value 1.0f32
        assert_eq!(u32::from_le_bytes(bytes[18..22].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[22..26].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[26..30].try_into().unwrap()), 1.0);
        assert_eq!(bytes.len(), 18 + 2 * (8 + 16));
    }

    #[test]
    fn decode_errors() {
        let bytes = small().to_bytes();
        assert_eq!(FeaturePyramid::from_bytes(&bytes).unwrap(), small());
        let mut bad = bytes.clone();
        bad[1] = 0;
        assert!(matches!(
            FeaturePyramid::from_bytes(&bad),
            Err(FormatError::BadMagic { .. })
        ));
        assert!(matches!(
            FeaturePyramid::from_bytes(&bytes[..bytes.len() - 3]),
            Err(FormatError::Truncated { .. })
        ));
        let mut nan = bytes.clone();
        let at = bytes.len() - 4;
        nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            FeaturePyramid::from_bytes(&nan),
            Err(FormatError::Inconsistent(_))
        ));
    }

    #[test]
    fn constructor_invariants() {
        assert!(FeatureMap::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(FeatureMap::new(1, 1, 1, vec![f32::INFINITY]).is_err());
        let a = FeatureMap::filled(1, 1, 1, 0.0).unwrap();
        let b = FeatureMap::filled(2, 1, 1, 0.0).unwrap();
        assert!(FeaturePyramid::new(1, 2, vec![a.clone(), b]).is_err());
        assert!(FeaturePyramid::new(2, 1, vec![a]).is_err());
    }
}
