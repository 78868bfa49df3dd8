//! Feldkamp-Davis-Kress reconstruction for a full circular orbit.
//!
//! Projections are rescaled onto a virtual detector through the isocentre,
//! cosine weighted, ramp filtered row by row and backprojected voxel by
//! voxel with the usual `(SID / (SID - s))^2` distance weight.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::ReconGrid;
use crate::data::{ProjectionStack, Volume};
use crate::error::{Error, Result};
use crate::geometry::ConeBeamGeometry;

/// Ram-Lak filter applied by FFT convolution on a zero-padded row.
pub struct RampFilter {
    len: usize,
    padded: usize,
    tau: f64,
    response: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl RampFilter {
    /// Filter for rows of `len` samples spaced `tau` apart.
    pub fn new(len: usize, tau: f64) -> Self {
        let padded = (2 * len).next_power_of_two();
        // band-limited spatial kernel, wrapped for circular convolution
        let mut h = vec![Complex::new(0.0, 0.0); padded];
        for (i, slot) in h.iter_mut().enumerate() {
            let n = if i <= padded / 2 { i as i64 } else { i as i64 - padded as i64 };
            let v = if n == 0 {
                1.0 / (4.0 * tau * tau)
            } else if n % 2 != 0 {
                -1.0 / ((n * n) as f64 * PI * PI * tau * tau)
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(padded);
        let inverse = planner.plan_fft_inverse(padded);
        forward.process(&mut h);
        let response = h.iter().map(|c| c.re).collect();
        RampFilter { len, padded, tau, response, forward, inverse }
    }

    pub fn padded_len(&self) -> usize {
        self.padded
    }

    /// `tau * (row * h)` evaluated at the row's own samples.
    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        assert_eq!(row.len(), self.len, "ramp filter row length");
        let mut buf: Vec<Complex<f64>> = row.iter().map(|&v| Complex::new(v, 0.0)).collect();
        buf.resize(self.padded, Complex::new(0.0, 0.0));
        self.forward.process(&mut buf);
        for (b, &r) in buf.iter_mut().zip(&self.response) {
            *b *= r;
        }
        self.inverse.process(&mut buf);
        let scale = self.tau / self.padded as f64;
        buf[..self.len].iter().map(|c| c.re * scale).collect()
    }
}

/// One-off ramp filtering of a row with sample spacing `tau`.
pub fn ramp_filter_row(row: &[f64], tau: f64) -> Vec<f64> {
    RampFilter::new(row.len(), tau).apply(row)
}

/// Reconstruct attenuation (mm^-1) from line integrals.
pub fn fdk_reconstruct(g: &ProjectionStack, geometry: &ConeBeamGeometry, grid: &ReconGrid) -> Result<Volume> {
    geometry.validate()?;
    grid.validate()?;
    if g.n_views != geometry.n_views() || g.rows != geometry.nv || g.cols != geometry.nu {
        return Err(Error::dim(format!(
            "projection stack {}x{}x{} does not match geometry {}x{}x{}",
            g.n_views,
            g.rows,
            g.cols,
            geometry.n_views(),
            geometry.nv,
            geometry.nu
        )));
    }
    let coverage = geometry.angular_coverage();
    if coverage < 2.0 * PI * (1.0 - 1e-9) {
        return Err(Error::config(format!(
            "FDK needs a full circular orbit, got {:.1} degrees",
            coverage.to_degrees()
        )));
    }

    let sid = geometry.sid_mm;
    let tau = geometry.pitch_mm * sid / geometry.sdd_mm;
    let (nu, nv) = (geometry.nu, geometry.nv);
    let cu = (nu as f64 - 1.0) / 2.0;
    let cv = (nv as f64 - 1.0) / 2.0;

    let filter = RampFilter::new(nu, tau);
    let filtered: Vec<Vec<f32>> = g
        .views()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|view| {
            let mut out = Vec::with_capacity(nu * nv);
            let mut row = vec![0.0; nu];
            for iv in 0..nv {
                let b = (iv as f64 - cv) * tau;
                for (iu, r) in row.iter_mut().enumerate() {
                    let a = (iu as f64 - cu) * tau;
                    *r = view[iv * nu + iu] as f64 * sid / (sid * sid + a * a + b * b).sqrt();
                }
                out.extend(filter.apply(&row).into_iter().map(|v| v as f32));
            }
            out
        })
        .collect();

    let trig: Vec<(f64, f64)> = geometry.angles.iter().map(|t| t.sin_cos()).collect();
    let weight = 0.5 * coverage / geometry.n_views() as f64;
    let [nx, ny, nz] = grid.dims;
    let xs: Vec<f64> = (0..nx).map(|i| grid.coord(0, i)).collect();
    let ys: Vec<f64> = (0..ny).map(|i| grid.coord(1, i)).collect();

    let mut data = vec![0.0f32; nx * ny * nz];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(iz, slice)| {
        let z = grid.coord(2, iz);
        let mut acc = vec![0.0f64; nx * ny];
        for (view, &(s, c)) in filtered.iter().zip(&trig) {
            for (iy, &y) in ys.iter().enumerate() {
                for (ix, &x) in xs.iter().enumerate() {
                    let t = -x * s + y * c;
                    let depth = x * c + y * s;
                    let mag = sid / (sid - depth);
                    let fu = t * mag / tau + cu;
                    let fv = z * mag / tau + cv;
                    acc[iy * nx + ix] += mag * mag * bilinear(view, nu, nv, fu, fv);
                }
            }
        }
        for (d, a) in slice.iter_mut().zip(acc) {
            *d = (a * weight) as f32;
        }
    });
    Volume::new(nx, ny, nz, grid.voxel_mm, data)
}

/// Bilinear sample of a `rows x cols` image at fractional `(col, row)`,
/// zero outside the sampled area.
fn bilinear(img: &[f32], cols: usize, rows: usize, fu: f64, fv: f64) -> f64 {
    if !(fu >= 0.0 && fv >= 0.0 && fu <= (cols - 1) as f64 && fv <= (rows - 1) as f64) {
        return 0.0;
    }
    let u0 = (fu.floor() as usize).min(cols.saturating_sub(2));
    let v0 = (fv.floor() as usize).min(rows.saturating_sub(2));
    let u1 = (u0 + 1).min(cols - 1);
    let v1 = (v0 + 1).min(rows - 1);
    let du = fu - u0 as f64;
    let dv = fv - v0 as f64;
    let p = |v: usize, u: usize| img[v * cols + u] as f64;
    (1.0 - dv) * ((1.0 - du) * p(v0, u0) + du * p(v0, u1)) + dv * ((1.0 - du) * p(v1, u0) + du * p(v1, u1))
}
