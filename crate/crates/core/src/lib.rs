//! Scatter correction for cone-beam CT with a Gaussian-RBF
//! Kolmogorov-Arnold U-Net, plus the simulation, reconstruction and
//! evaluation pipeline around it.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod gkan;
pub mod io;
pub mod metrics;
pub mod net;
pub mod physics;
pub mod recon;
pub mod resample;
pub mod tensor;
pub mod train;

pub use config::RunConfig;
pub use data::{ProjectionStack, Volume};
pub use error::{Error, Result};
pub use geometry::ConeBeamGeometry;
pub use net::{GKanUNetModel, UNetConfig};
pub use tensor::{Real, Tensor};
