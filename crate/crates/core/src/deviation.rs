//! Camera-deviation simulation.
//!
//! A deviation is a translation `T` and a rotation `R = R_x · R_y · R_z`
//! applied in the camera frame, so the deviated ego→camera transform is
//! `R · T · Rt`. All six parameters are independent zero-mean normals, drawn
//! per view and per sample.
//!
//! Draws are reproducible across platforms: each `(seed, draw_index)` pair
//! selects its own ChaCha8 stream (seed as key, draw index as stream id), and
//! normals come from the Marsaglia polar method on top of 53-bit uniforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose, CameraExtrinsics, Mat4, IDENTITY};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationConfig {
    /// Std-dev of Δx, Δy, Δz in meters.
    pub sigma_t: f64,
    /// Std-dev of θx, θy, θz in radians.
    pub sigma_r: f64,
    pub seed: u64,
}

impl DeviationConfig {
    pub fn new(sigma_t: f64, sigma_r: f64, seed: u64) -> Result<Self> {
        let c = DeviationConfig {
            sigma_t,
            sigma_r,
            seed,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_t >= 0.0 && self.sigma_t.is_finite())
            || !(self.sigma_r >= 0.0 && self.sigma_r.is_finite())
        {
            return Err(Error::invalid(
                "deviation config",
                format!(
                    "sigmas must be finite and >= 0 (sigma_t={}, sigma_r={})",
                    self.sigma_t, self.sigma_r
                ),
            ));
        }
        Ok(())
    }
}

/// Deviation of one camera.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewDeviation {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_z: f64,
}

impl ViewDeviation {
    pub fn is_zero(&self) -> bool {
        *self == ViewDeviation::default()
    }

    /// `R · T` for this deviation.
    pub fn matrix(&self) -> Mat4 {
        compose(
            &rotation_matrix(self.theta_x, self.theta_y, self.theta_z),
            &translation_matrix(self.dx, self.dy, self.dz),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSample {
    pub views: Vec<ViewDeviation>,
}

impl DeviationSample {
    pub fn zero(num_views: usize) -> Self {
        DeviationSample {
            views: vec![ViewDeviation::default(); num_views],
        }
    }
}

/// Standard normal via the Marsaglia polar method.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let a = 2.0 * rng.random::<f64>() - 1.0;
        let b = 2.0 * rng.random::<f64>() - 1.0;
        let s = a * a + b * b;
        if s > 0.0 && s < 1.0 {
            return a * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// Draws the deviation for sample `draw_index`. Per view, the order is
/// dx, dy, dz, θx, θy, θz.
pub fn sample_deviation(
    config: &DeviationConfig,
    num_views: usize,
    draw_index: u64,
) -> DeviationSample {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(draw_index);
    let views = (0..num_views)
        .map(|_| {
            let mut n = || standard_normal(&mut rng);
            let (nx, ny, nz) = (n(), n(), n());
            let (rx, ry, rz) = (n(), n(), n());
            ViewDeviation {
                dx: config.sigma_t * nx,
                dy: config.sigma_t * ny,
                dz: config.sigma_t * nz,
                theta_x: config.sigma_r * rx,
                theta_y: config.sigma_r * ry,
                theta_z: config.sigma_r * rz,
            }
        })
        .collect();
    DeviationSample { views }
}

/// Identity with last column `[dx, dy, dz, 1]`.
pub fn translation_matrix(dx: f64, dy: f64, dz: f64) -> Mat4 {
    let mut m = IDENTITY;
    m[0][3] = dx;
    m[1][3] = dy;
    m[2][3] = dz;
    m
}

pub fn rotation_x(theta: f64) -> Mat4 {
    let (s, c) = theta.sin_cos();
    [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, c, s, 0.0],
        [0.0, -s, c, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

pub fn rotation_y(theta: f64) -> Mat4 {
    let (s, c) = theta.sin_cos();
    [
        [c, 0.0, -s, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [s, 0.0, c, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

pub fn rotation_z(theta: f64) -> Mat4 {
    let (s, c) = theta.sin_cos();
    [
        [c, s, 0.0, 0.0],
        [-s, c, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

/// `R_x(θx) · R_y(θy) · R_z(θz)`.
pub fn rotation_matrix(theta_x: f64, theta_y: f64, theta_z: f64) -> Mat4 {
    compose(
        &compose(&rotation_x(theta_x), &rotation_y(theta_y)),
        &rotation_z(theta_z),
    )
}

/// Deviated ego→camera transform `R · T · Rt`.
pub fn deviated_extrinsics(
    view: &CameraExtrinsics,
    deviation: &ViewDeviation,
) -> Result<CameraExtrinsics> {
    if deviation.is_zero() {
        return Ok(*view);
    }
    let m = compose(&deviation.matrix(), view.matrix());
    CameraExtrinsics::new(m)
        .map_err(|e| Error::Internal(format!("deviated extrinsics lost rigidity: {e}")))
}

/// Applies one draw to every view of a rig.
pub fn deviate_rig(
    rig: &crate::geometry::CameraRig,
    sample: &DeviationSample,
) -> Result<crate::geometry::CameraRig> {
    if sample.views.len() != rig.num_views() {
        return Err(Error::ShapeMismatch(format!(
            "deviation sample has {} views, rig has {}",
            sample.views.len(),
            rig.num_views()
        )));
    }
    let extrinsics = rig
        .views()
        .iter()
        .zip(&sample.views)
        .map(|(v, d)| deviated_extrinsics(&v.extrinsics, d))
        .collect::<Result<Vec<_>>>()?;
    rig.with_extrinsics(&extrinsics)
}
