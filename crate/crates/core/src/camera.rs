//! Pinhole intrinsics.
//!
//! Pixel convention: `u` grows rightward, `v` downward, pixel centers sit on
//! integer coordinates. Depth is the camera-frame `z` coordinate, not ray length.

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    /// Centered camera with square pixels.
    pub fn centered(f: f64, width: usize, height: usize) -> Self {
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("camera intrinsics out of range: {self:?}")))
        }
    }

    pub fn project(&self, p: &Point3<f64>) -> Result<Point2<f64>> {
        if p.z <= 0.0 {
            return Err(Error::NonPositiveDepth(p.z));
        }
        Ok(Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn backproject(&self, uv: &Point2<f64>, z: f64) -> Result<Point3<f64>> {
        if z <= 0.0 {
            return Err(Error::NonPositiveDepth(z));
        }
        Ok(Point3::new((uv.x - self.cx) * z / self.fx, (uv.y - self.cy) * z / self.fy, z))
    }

    /// Intrinsics for an image resampled by `factor` (0.5 halves the resolution).
    ///
    /// Keeps the integer-center convention: pixel `u` maps to `(u + 0.5) * factor - 0.5`.
    pub fn scaled(&self, factor: f64, width: usize, height: usize) -> Self {
        Self {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: (self.cx + 0.5) * factor - 0.5,
            cy: (self.cy + 0.5) * factor - 0.5,
            width,
            height,
        }
    }

    pub fn contains(&self, uv: &Point2<f64>) -> bool {
        uv.x >= 0.0 && uv.y >= 0.0 && uv.x <= (self.width - 1) as f64 && uv.y <= (self.height - 1) as f64
    }
}
