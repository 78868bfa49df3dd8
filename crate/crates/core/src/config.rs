//! Versioned run configuration.
//!
//! Only `version` and `seed` are required; every section falls back to the
//! defaults documented on its fields. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ConeBeamGeometry;
use crate::metrics::{RoiSpec, HU_DATA_RANGE};
use crate::net::UNetConfig;
use crate::physics::{MaterialTable, ScatterModelParams};
use crate::recon::ReconGrid;
use crate::train::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Root of every random stream in the run.
    pub seed: u64,
    #[serde(default)]
    pub phantom: PhantomConfig,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub scatter: ScatterModelParams,
    #[serde(default = "desk_network")]
    pub network: UNetConfig,
    #[serde(default = "desk_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub recon: ReconConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    /// Voxels along x, y, z (default 64^3).
    pub dims: [usize; 3],
    /// Default 1.5 mm.
    pub voxel_mm: f64,
    /// Default: 60 keV air / soft tissue / bone.
    pub materials: MaterialTable,
    /// Phantoms used for training (default 8).
    pub train_count: usize,
    /// Held-out phantoms (default 1).
    pub validation_count: usize,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: [64, 64, 64],
            voxel_mm: 1.5,
            materials: MaterialTable::default(),
            train_count: 8,
            validation_count: 1,
        }
    }
}

/// Circular orbit; defaults are the desk geometry (128x128 at 1.6 mm,
/// 90 views, SID 500 mm, SDD 1000 mm, 1e5 photons).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub sid_mm: f64,
    pub sdd_mm: f64,
    pub nu: usize,
    pub nv: usize,
    pub pitch_mm: f64,
    pub n_views: usize,
    pub i0: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let g = ConeBeamGeometry::desk_default();
        GeometryConfig {
            sid_mm: g.sid_mm,
            sdd_mm: g.sdd_mm,
            nu: g.nu,
            nv: g.nv,
            pitch_mm: g.pitch_mm,
            n_views: g.n_views(),
            i0: g.i0,
        }
    }
}

impl GeometryConfig {
    pub fn build(&self) -> Result<ConeBeamGeometry> {
        ConeBeamGeometry::circular(self.sid_mm, self.sdd_mm, (self.nu, self.nv), self.pitch_mm, self.n_views, self.i0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    /// Default 64^3 at 1.5 mm, centred.
    pub grid: ReconGrid,
    /// Median window applied before the log (default 3).
    pub denoise_window: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig { grid: ReconGrid::default(), denoise_window: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// PSNR range for HU volumes (default 2000).
    pub hu_data_range: f64,
    /// Default: one disk of radius 4 voxels at the centre of the central slice.
    pub rois: Option<Vec<RoiSpec>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { hu_data_range: HU_DATA_RANGE, rois: None }
    }
}

impl EvalConfig {
    pub fn rois_for(&self, grid: &ReconGrid) -> Vec<RoiSpec> {
        self.rois.clone().unwrap_or_else(|| vec![central_roi(grid)])
    }
}

pub fn central_roi(grid: &ReconGrid) -> RoiSpec {
    let [nx, ny, nz] = grid.dims;
    RoiSpec { slice: nz / 2, center: [(nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0], radius: 4.0 }
}

/// Network used by the desk-scale runs: native 128x128 input, four levels
/// of 4/8/16/32 channels.
pub fn desk_network() -> UNetConfig {
    UNetConfig { depth: 4, channels: vec![4, 8, 16, 32], input_size: 128, ..UNetConfig::default() }
}

/// Optimiser settings used by the desk-scale runs: learning rate 2e-3,
/// halved at iteration 3000 and every 12000 iterations after that.
pub fn desk_train() -> TrainConfig {
    TrainConfig { learning_rate: 2e-3, decay_every: Some(12_000), ..TrainConfig::default() }
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed,
            phantom: PhantomConfig::default(),
            geometry: GeometryConfig::default(),
            scatter: ScatterModelParams::default(),
            network: desk_network(),
            train: desk_train(),
            recon: ReconConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "config version {} not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.phantom.train_count == 0 {
            return Err(Error::config("need at least one training phantom"));
        }
        self.phantom.materials.validate()?;
        self.geometry.build()?;
        self.scatter.validate()?;
        self.network.validate()?;
        self.train.validate()?;
        self.recon.grid.validate()?;
        if self.recon.denoise_window % 2 == 0 {
            return Err(Error::config("denoise window must be odd"));
        }
        if !(self.eval.hu_data_range > 0.0) {
            return Err(Error::config("HU data range must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
        Self::from_json(&text)
    }

    /// Seed of phantom `index` (training phantoms first, then validation).
    pub fn phantom_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, 1, index as u64)
    }

    pub fn noise_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, 2, index as u64)
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, 3, 0)
    }
}

/// SplitMix64 mix of `(seed, domain, index)`.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    let mut z = seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
