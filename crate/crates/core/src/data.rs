//! Projection stacks and voxel volumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ConeBeamGeometry;

/// Detector images indexed `[view][row][col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionStack {
    pub n_views: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
    pub geometry: Option<ConeBeamGeometry>,
}

impl ProjectionStack {
    pub fn new(n_views: usize, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_views * rows * cols {
            return Err(Error::dim(format!(
                "stack {n_views}x{rows}x{cols} needs {} values, got {}",
                n_views * rows * cols,
                data.len()
            )));
        }
        Ok(ProjectionStack { n_views, rows, cols, data, geometry: None })
    }

    pub fn filled(n_views: usize, rows: usize, cols: usize, value: f32) -> Self {
        ProjectionStack { n_views, rows, cols, data: vec![value; n_views * rows * cols], geometry: None }
    }

    /// Empty (zero) stack shaped by the detector of `geometry`.
    pub fn for_geometry(geometry: &ConeBeamGeometry) -> Self {
        let mut s = Self::filled(geometry.n_views(), geometry.nv, geometry.nu, 0.0);
        s.geometry = Some(geometry.clone());
        s
    }

    pub fn with_geometry(mut self, geometry: Option<ConeBeamGeometry>) -> Self {
        self.geometry = geometry;
        self
    }

    pub fn view_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn view(&self, i: usize) -> &[f32] {
        &self.data[i * self.view_len()..(i + 1) * self.view_len()]
    }

    pub fn view_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.view_len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn views(&self) -> std::slice::Chunks<'_, f32> {
        self.data.chunks(self.view_len())
    }

    pub fn same_shape(&self, other: &ProjectionStack) -> bool {
        (self.n_views, self.rows, self.cols) == (other.n_views, other.rows, other.cols)
    }

    pub fn check_aligned(&self, other: &ProjectionStack) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "stacks misaligned: {}x{}x{} vs {}x{}x{}",
                self.n_views, self.rows, self.cols, other.n_views, other.rows, other.cols
            )))
        }
    }

    /// Elementwise combination of two aligned stacks; keeps `self`'s geometry.
    pub fn zip_map(&self, other: &ProjectionStack, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        self.check_aligned(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(ProjectionStack { data, geometry: self.geometry.clone(), ..*self })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        ProjectionStack { data: self.data.iter().map(|&v| f(v)).collect(), geometry: self.geometry.clone(), ..*self }
    }
}

/// Voxel grid indexed `[z][y][x]`, centred on the isocentre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub voxel_mm: f64,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn new(nx: usize, ny: usize, nz: usize, voxel_mm: f64, data: Vec<f32>) -> Result<Self> {
        if data.len() != nx * ny * nz {
            return Err(Error::dim(format!("volume {nx}x{ny}x{nz} needs {} values, got {}", nx * ny * nz, data.len())));
        }
        if !(voxel_mm > 0.0) {
            return Err(Error::config("voxel size must be positive"));
        }
        Ok(Volume { nx, ny, nz, voxel_mm, data })
    }

    pub fn zeros(nx: usize, ny: usize, nz: usize, voxel_mm: f64) -> Self {
        Volume { nx, ny, nz, voxel_mm, data: vec![0.0; nx * ny * nz] }
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.nx * self.ny;
        &self.data[z * n..(z + 1) * n]
    }

    pub fn same_shape(&self, other: &Volume) -> bool {
        (self.nx, self.ny, self.nz) == (other.nx, other.ny, other.nz)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Volume { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }
}
