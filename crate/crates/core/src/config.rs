//! Rig / grid / kernel config files (TOML).
//!
//! ```toml
//! scale_strides = [8, 16]
//!
//! [[views]]
//! name = "front"
//! intrinsics = [300.0, 300.0, 240.0, 112.0, 0.0]   # fx, fy, cx, cy, skew
//! extrinsics = [ 0.0, -1.0,  0.0, 0.0,             # 4x4 ego→camera, row-major
//!                0.0,  0.0, -1.0, 1.5,
//!                1.0,  0.0,  0.0, -1.0,
//!                0.0,  0.0,  0.0, 1.0 ]
//! image_size = [224, 480]                           # height, width
//!
//! [grid]                                            # optional in a rig file
//! rows = 25
//! cols = 25
//! extent = [-50.0, 50.0, -50.0, 50.0]               # x_min, x_max, y_min, y_max
//! height_z = 0.0
//!
//! [kernel]                                          # optional
//! k_h = 7
//! k_w = 3
//! layout = "full"                                   # full | cross | dilated
//! dilation = 1
//! ```
//!
//! A grid file holds just the `[grid]` (and optionally `[kernel]`) tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraExtrinsics, CameraIntrinsics, CameraRig, CameraView};
use crate::grid::{BevGridSpec, KernelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewConfig {
    pub name: String,
    pub intrinsics: [f64; 5],
    pub extrinsics: Vec<f64>,
    pub image_size: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_strides: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub views: Vec<ViewConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<BevGridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelSpec>,
}

impl ViewConfig {
    pub fn from_view(view: &CameraView) -> Self {
        let k = &view.intrinsics;
        ViewConfig {
            name: view.name.clone(),
            intrinsics: [k.fx, k.fy, k.cx, k.cy, k.skew],
            extrinsics: view.extrinsics.to_row_major().to_vec(),
            image_size: [view.image_size.0, view.image_size.1],
        }
    }

    fn to_view(&self, index: usize) -> Result<CameraView> {
        let field =
            |f: &str, e: Error| Error::Config(format!("views[{index}].{f} ({}): {e}", self.name));
        let [fx, fy, cx, cy, skew] = self.intrinsics;
        let k = CameraIntrinsics::new(fx, fy, cx, cy, skew).map_err(|e| field("intrinsics", e))?;
        let e = CameraExtrinsics::from_row_major(&self.extrinsics)
            .map_err(|e| field("extrinsics", e))?;
        CameraView::new(
            self.name.clone(),
            k,
            e,
            (self.image_size[0], self.image_size[1]),
        )
        .map_err(|e| field("image_size", e))
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn from_rig(rig: &CameraRig) -> Self {
        ConfigFile {
            scale_strides: Some(rig.scale_strides().to_vec()),
            views: rig.views().iter().map(ViewConfig::from_view).collect(),
            grid: None,
            kernel: None,
        }
    }

    pub fn rig(&self) -> Result<CameraRig> {
        if self.views.is_empty() {
            return Err(Error::Config(
                "views: at least one [[views]] entry is required".into(),
            ));
        }
        let strides = self
            .scale_strides
            .clone()
            .ok_or_else(|| Error::Config("scale_strides: missing".into()))?;
        let views = self
            .views
            .iter()
            .enumerate()
            .map(|(i, v)| v.to_view(i))
            .collect::<Result<Vec<_>>>()?;
        CameraRig::new(views, strides).map_err(|e| Error::Config(format!("scale_strides: {e}")))
    }

    pub fn grid(&self) -> Result<BevGridSpec> {
        let g = self
            .grid
            .ok_or_else(|| Error::Config("grid: missing [grid] table".into()))?;
        g.validate()
            .map_err(|e| Error::Config(format!("grid: {e}")))?;
        Ok(g)
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        let k = self
            .kernel
            .ok_or_else(|| Error::Config("kernel: missing [kernel] table".into()))?;
        k.validate()
            .map_err(|e| Error::Config(format!("kernel: {e}")))?;
        Ok(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
scale_strides = [8, 16]

[[views]]
name = "front"
intrinsics = [300.0, 300.0, 240.0, 112.0, 0.0]
extrinsics = [0.0, -1.0, 0.0, 0.0,
              0.0, 0.0, -1.0, 1.5,
              1.0, 0.0, 0.0, -1.0,
              0.0, 0.0, 0.0, 1.0]
image_size = [224, 480]

[grid]
rows = 25
cols = 25
extent = [-50.0, 50.0, -50.0, 50.0]
height_z = 0.0

[kernel]
k_h = 7
k_w = 3
layout = "full"
"#;

    #[test]
    fn parses_documented_schema() {
        let cfg = ConfigFile::parse(SAMPLE).unwrap();
        let rig = cfg.rig().unwrap();
        assert_eq!(rig.num_views(), 1);
        assert_eq!(rig.feature_sizes(), vec![(28, 60), (14, 30)]);
        assert_eq!(cfg.grid().unwrap().rows, 25);
        assert_eq!(cfg.kernel().unwrap(), KernelSpec::full(7, 3).unwrap());
        let again = ConfigFile::parse(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn syntax_errors_report_line() {
        let broken = SAMPLE.replace("rows = 25", "rows = = 25");
        let msg = ConfigFile::parse(&broken).unwrap_err().to_string();
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        let bad_fx = SAMPLE.replace("[300.0, 300.0", "[-1.0, 300.0");
        let msg = ConfigFile::parse(&bad_fx)
            .unwrap()
            .rig()
            .unwrap_err()
            .to_string();
        assert!(msg.contains("views[0].intrinsics"), "{msg}");

        let short = SAMPLE.replace("0.0, 0.0, 0.0, 1.0]", "0.0, 0.0, 1.0]");
        let msg = ConfigFile::parse(&short)
            .unwrap()
            .rig()
            .unwrap_err()
            .to_string();
        assert!(msg.contains("views[0].extrinsics"), "{msg}");

        let bad_kernel = SAMPLE.replace("k_h = 7", "k_h = 4");
        let msg = ConfigFile::parse(&bad_kernel)
            .unwrap()
            .kernel()
            .unwrap_err()
            .to_string();
        assert!(msg.contains("kernel"), "{msg}");

        let unknown = SAMPLE.replace("height_z", "height");
        let msg = ConfigFile::parse(&unknown).unwrap_err().to_string();
        assert!(msg.contains("line"), "{msg}");
    }
}
