//! Pinhole camera model and homogeneous-matrix helpers.
//!
//! Points live in the ego frame (meters). Extrinsics map ego-frame points into
//! the camera frame (x right, y down, z forward). Intrinsics are always stored
//! at full image resolution; a feature scale with stride `s` sees pixel
//! coordinates divided by `s`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 4x4 matrix.
pub type Mat4 = [[f64; 4]; 4];

/// Ego-frame point in meters.
pub type Point3 = [f64; 3];

/// Projections with camera-frame depth at or below this are culled (meters).
pub const DEPTH_EPSILON: f64 = 1e-3;

const ORTHO_TOL: f64 = 1e-6;

pub const IDENTITY: Mat4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// Standard matrix product `a · b`.
pub fn compose(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Inverse of a rigid transform `[R | t]`, i.e. `[Rᵀ | −Rᵀt]`.
pub fn invert_rigid(m: &Mat4) -> Mat4 {
    let mut out = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    for i in 0..3 {
        out[i][3] = -(0..3).map(|k| m[k][i] * m[k][3]).sum::<f64>();
    }
    out
}

/// Applies the top three rows of `m` to the homogeneous point `[p, 1]`.
pub fn transform_point(m: &Mat4, p: &Point3) -> Point3 {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2] + m[i][3];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            skew,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.skew];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("intrinsics", "all values must be finite"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid(
                "intrinsics",
                format!(
                    "focal lengths must be positive (fx={}, fy={})",
                    self.fx, self.fy
                ),
            ));
        }
        Ok(())
    }
}

/// Rigid ego→camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    matrix: Mat4,
}

impl CameraExtrinsics {
    pub fn new(matrix: Mat4) -> Result<Self> {
        validate_rigid(&matrix)?;
        Ok(CameraExtrinsics { matrix })
    }

    pub fn identity() -> Self {
        CameraExtrinsics { matrix: IDENTITY }
    }

    /// Builds `[R | t]` from a rotation block and translation.
    pub fn from_rotation_translation(
        rotation: [[f64; 3]; 3],
        translation: [f64; 3],
    ) -> Result<Self> {
        let mut m = IDENTITY;
        for i in 0..3 {
            m[i][..3].copy_from_slice(&rotation[i]);
            m[i][3] = translation[i];
        }
        Self::new(m)
    }

    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::invalid(
                "extrinsics",
                format!("expected 16 values, got {}", values.len()),
            ));
        }
        let mut m = [[0.0; 4]; 4];
        for (i, v) in values.iter().enumerate() {
            m[i / 4][i % 4] = *v;
        }
        Self::new(m)
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.matrix
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.matrix[i / 4][i % 4];
        }
        out
    }
}

fn validate_rigid(m: &Mat4) -> Result<()> {
    if !m.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::invalid("extrinsics", "all values must be finite"));
    }
    if m[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(Error::invalid(
            "extrinsics",
            format!("bottom row must be [0, 0, 0, 1], got {:?}", m[3]),
        ));
    }
    let residual = orthonormality_residual(m);
    if residual >= ORTHO_TOL {
        return Err(Error::invalid(
            "extrinsics",
            format!("rotation block is not orthonormal (‖RᵀR − I‖∞ = {residual:e})"),
        ));
    }
    let det = rotation_determinant(m);
    if (det - 1.0).abs() > ORTHO_TOL {
        return Err(Error::invalid(
            "extrinsics",
            format!("rotation determinant {det} is not 1"),
        ));
    }
    Ok(())
}

/// Max-abs entry of `RᵀR − I` for the upper-left 3x3 block.
pub fn orthonormality_residual(m: &Mat4) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}

pub fn rotation_determinant(m: &Mat4) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// One camera of the rig.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
    /// (height, width) at full resolution.
    pub image_size: (usize, usize),
}

impl CameraView {
    pub fn new(
        name: impl Into<String>,
        intrinsics: CameraIntrinsics,
        extrinsics: CameraExtrinsics,
        image_size: (usize, usize),
    ) -> Result<Self> {
        let view = CameraView {
            name: name.into(),
            intrinsics,
            extrinsics,
            image_size,
        };
        view.validate()?;
        Ok(view)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::invalid(
                "camera view",
                format!("{}: image_size components must be positive", self.name),
            ));
        }
        Ok(())
    }

    /// Feature-map (height, width) at the given stride: `ceil(image_size / stride)`.
    pub fn feature_size(&self, stride: usize) -> (usize, usize) {
        (
            self.image_size.0.div_ceil(stride),
            self.image_size.1.div_ceil(stride),
        )
    }

    /// Same camera with different extrinsics.
    pub fn with_extrinsics(&self, extrinsics: CameraExtrinsics) -> Self {
        CameraView {
            extrinsics,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    views: Vec<CameraView>,
    scale_strides: Vec<usize>,
}

impl CameraRig {
    pub fn new(views: Vec<CameraView>, scale_strides: Vec<usize>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::invalid(
                "camera rig",
                "at least one view is required",
            ));
        }
        if scale_strides.is_empty() {
            return Err(Error::invalid(
                "camera rig",
                "at least one scale stride is required",
            ));
        }
        if scale_strides[0] == 0 || scale_strides.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "camera rig",
                format!(
                    "scale_strides must be positive and strictly increasing, got {scale_strides:?}"
                ),
            ));
        }
        for v in &views {
            v.validate()?;
        }
        Ok(CameraRig {
            views,
            scale_strides,
        })
    }

    pub fn views(&self) -> &[CameraView] {
        &self.views
    }

    pub fn scale_strides(&self) -> &[usize] {
        &self.scale_strides
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn num_scales(&self) -> usize {
        self.scale_strides.len()
    }

    /// Feature-map dims for every (view, scale), view-major.
    pub fn feature_sizes(&self) -> Vec<(usize, usize)> {
        self.views
            .iter()
            .flat_map(|v| self.scale_strides.iter().map(move |&s| v.feature_size(s)))
            .collect()
    }

    /// Same rig with every view's extrinsics replaced.
    pub fn with_extrinsics(&self, extrinsics: &[CameraExtrinsics]) -> Result<Self> {
        if extrinsics.len() != self.views.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} extrinsics for a {}-view rig",
                extrinsics.len(),
                self.views.len()
            )));
        }
        Ok(CameraRig {
            views: self
                .views
                .iter()
                .zip(extrinsics)
                .map(|(v, e)| v.with_extrinsics(*e))
                .collect(),
            scale_strides: self.scale_strides.clone(),
        })
    }
}

/// Continuous pixel coordinate at some feature scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub valid: bool,
}

/// Projects an ego-frame point into `view` at the given feature stride.
///
/// Points with camera-frame depth `<= DEPTH_EPSILON` come back with
/// `valid == false`; their `u`/`v` are NaN.
pub fn project_point(point: &Point3, view: &CameraView, stride: usize) -> PixelCoord {
    debug_assert!(stride >= 1);
    let p = transform_point(view.extrinsics.matrix(), point);
    if p[2].is_nan() || p[2] <= DEPTH_EPSILON {
        return PixelCoord {
            u: f64::NAN,
            v: f64::NAN,
            depth: p[2],
            valid: false,
        };
    }
    let k = &view.intrinsics;
    let x = p[0] / p[2];
    let y = p[1] / p[2];
    let u_full = k.fx * x + k.skew * y + k.cx;
    let v_full = k.fy * y + k.cy;
    let s = stride as f64;
    PixelCoord {
        u: u_full / s,
        v: v_full / s,
        depth: p[2],
        valid: true,
    }
}

/// Integer pixel (row, col) after rounding half away from zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RoundedPixel {
    pub row: i64,
    pub col: i64,
    pub valid: bool,
}

pub fn round_pixel(coord: &PixelCoord) -> RoundedPixel {
    if !coord.valid {
        return RoundedPixel {
            row: 0,
            col: 0,
            valid: false,
        };
    }
    // f64::round rounds half away from zero.
    RoundedPixel {
        row: coord.v.round() as i64,
        col: coord.u.round() as i64,
        valid: true,
    }
}
