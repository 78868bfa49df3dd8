//! Circular cone-beam geometry.
//!
//! The source rotates about the z axis at distance `sid_mm` from the
//! isocentre. At angle `theta` the source sits at `sid * (cos, sin, 0)` and
//! the flat detector faces it through the isocentre; detector columns run
//! along `(-sin, cos, 0)` and rows along `+z`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeBeamGeometry {
    pub sid_mm: f64,
    pub sdd_mm: f64,
    /// Detector columns.
    pub nu: usize,
    /// Detector rows.
    pub nv: usize,
    pub pitch_mm: f64,
    pub angles: Vec<f64>,
    /// Flat-field photons per pixel.
    pub i0: f64,
}

impl ConeBeamGeometry {
    /// Full circle sampled at `n_views` equally spaced angles.
    pub fn circular(
        sid_mm: f64,
        sdd_mm: f64,
        (nu, nv): (usize, usize),
        pitch_mm: f64,
        n_views: usize,
        i0: f64,
    ) -> Result<Self> {
        let angles = (0..n_views).map(|i| 2.0 * PI * i as f64 / n_views as f64).collect();
        let g = ConeBeamGeometry { sid_mm, sdd_mm, nu, nv, pitch_mm, angles, i0 };
        g.validate()?;
        Ok(g)
    }

    /// 128x128 detector, 1.6 mm pitch, 90 views, SID 500 mm, SDD 1000 mm,
    /// 1e5 photons per pixel.
    pub fn desk_default() -> Self {
        Self::circular(500.0, 1000.0, (128, 128), 1.6, 90, 1e5).expect("valid default geometry")
    }

    /// 512x512 detector at 0.8 mm, 360 views.
    pub fn full_scale() -> Self {
        Self::circular(500.0, 1000.0, (512, 512), 0.8, 360, 1.25e10 / (512.0 * 512.0))
            .expect("valid full-scale geometry")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sid_mm > 0.0 && self.sdd_mm > self.sid_mm) {
            return Err(Error::config("geometry requires SDD > SID > 0"));
        }
        if !(self.pitch_mm > 0.0) || self.nu == 0 || self.nv == 0 {
            return Err(Error::config("detector pitch and size must be positive"));
        }
        if !(self.i0 > 0.0) {
            return Err(Error::config("flat-field flux must be positive"));
        }
        if self.angles.is_empty() {
            return Err(Error::config("no view angles"));
        }
        for w in self.angles.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::config("view angles must be strictly increasing"));
            }
        }
        if self.angles[0] < 0.0 || *self.angles.last().unwrap() >= 2.0 * PI {
            return Err(Error::config("view angles must lie in [0, 2pi)"));
        }
        Ok(())
    }

    pub fn n_views(&self) -> usize {
        self.angles.len()
    }

    /// Detector coordinate (mm) of column `iu` relative to the central ray.
    pub fn u_mm(&self, iu: f64) -> f64 {
        (iu - (self.nu as f64 - 1.0) / 2.0) * self.pitch_mm
    }

    pub fn v_mm(&self, iv: f64) -> f64 {
        (iv - (self.nv as f64 - 1.0) / 2.0) * self.pitch_mm
    }

    pub fn source(&self, theta: f64) -> [f64; 3] {
        [self.sid_mm * theta.cos(), self.sid_mm * theta.sin(), 0.0]
    }

    /// World position of the centre of detector pixel `(iu, iv)` at `theta`.
    pub fn pixel(&self, theta: f64, iu: usize, iv: usize) -> [f64; 3] {
        let (s, c) = theta.sin_cos();
        let back = self.sdd_mm - self.sid_mm;
        let u = self.u_mm(iu as f64);
        let v = self.v_mm(iv as f64);
        [-back * c - u * s, -back * s + u * c, v]
    }

    /// Radius of the cylinder at the isocentre seen by every view.
    pub fn fov_radius_mm(&self) -> f64 {
        let half = self.nu as f64 * self.pitch_mm / 2.0;
        self.sid_mm * (half / self.sdd_mm).atan().sin()
    }

    /// Smallest angular span that counts as full coverage for FDK.
    pub fn angular_coverage(&self) -> f64 {
        let n = self.angles.len();
        if n < 2 {
            return 0.0;
        }
        let step = (self.angles[n - 1] - self.angles[0]) / (n - 1) as f64;
        self.angles[n - 1] - self.angles[0] + step
    }
}
