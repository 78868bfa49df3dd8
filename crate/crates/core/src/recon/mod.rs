//! Projection post-processing and FDK reconstruction.

mod fdk;

pub use fdk::{fdk_reconstruct, ramp_filter_row, RampFilter};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ProjectionStack, Volume};
use crate::error::{Error, Result};

/// Relative floor applied to intensities before taking logarithms.
pub const INTENSITY_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconGrid {
    pub dims: [usize; 3],
    pub voxel_mm: f64,
    /// World position of the grid centre.
    #[serde(default)]
    pub origin_mm: [f64; 3],
}

impl ReconGrid {
    pub fn new(dims: [usize; 3], voxel_mm: f64) -> Result<Self> {
        let g = ReconGrid { dims, voxel_mm, origin_mm: [0.0; 3] };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) || !(self.voxel_mm > 0.0) {
            return Err(Error::config("reconstruction grid needs positive dims and voxel size"));
        }
        Ok(())
    }

    /// World coordinate of voxel centre `i` along `axis`.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        (i as f64 - (self.dims[axis] as f64 - 1.0) / 2.0) * self.voxel_mm + self.origin_mm[axis]
    }
}

impl Default for ReconGrid {
    fn default() -> Self {
        ReconGrid { dims: [64, 64, 64], voxel_mm: 1.5, origin_mm: [0.0; 3] }
    }
}

/// Line integrals `-ln(clamp(I / I0, floor, 1))`.
pub fn log_transform(stack: &ProjectionStack, i0: f64) -> Result<ProjectionStack> {
    if !(i0 > 0.0) {
        return Err(Error::config("flat-field flux must be positive"));
    }
    Ok(stack.map(|v| {
        let r = (v as f64 / i0).clamp(INTENSITY_FLOOR, 1.0);
        // NaN input maps to the floor
        let r = if r.is_nan() { INTENSITY_FLOOR } else { r };
        -(r.ln()) as f32
    }))
}

/// Per-view 2-D median filter with edge replication.
pub fn median_denoise(stack: &ProjectionStack, window: usize) -> Result<ProjectionStack> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::config(format!("median window must be odd and >= 1, got {window}")));
    }
    if window == 1 {
        return Ok(stack.clone());
    }
    let (rows, cols) = (stack.rows, stack.cols);
    let r = (window / 2) as i64;
    let mut out = stack.clone();
    out.data.par_chunks_mut(rows * cols).zip(stack.data.par_chunks(rows * cols)).for_each(|(dst, src)| {
        let mut buf = Vec::with_capacity(window * window);
        for y in 0..rows as i64 {
            for x in 0..cols as i64 {
                buf.clear();
                for dy in -r..=r {
                    let yy = (y + dy).clamp(0, rows as i64 - 1) as usize;
                    for dx in -r..=r {
                        let xx = (x + dx).clamp(0, cols as i64 - 1) as usize;
                        buf.push(src[yy * cols + xx]);
                    }
                }
                let mid = buf.len() / 2;
                let (_, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
                dst[y as usize * cols + x as usize] = *m;
            }
        }
    });
    Ok(out)
}

/// `HU = 1000 (mu - mu_water) / mu_water`.
pub fn mu_to_hu(volume: &Volume, mu_water: f64) -> Result<Volume> {
    if !(mu_water > 0.0) {
        return Err(Error::config("water attenuation must be positive"));
    }
    Ok(volume.map(|m| (1000.0 * (m as f64 - mu_water) / mu_water) as f32))
}
