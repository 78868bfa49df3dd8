//! Phantoms, projection, scatter synthesis and photon noise.

pub mod klein_nishina;
pub mod materials;
pub mod noise;
pub mod phantom;
pub mod projector;
pub mod scatter;

pub use klein_nishina::{klein_nishina_sigma, reduced_energy, thomson, ELECTRON_RADIUS_M, ELECTRON_REST_KEV};
pub use materials::{Material, MaterialLabel, MaterialTable};
pub use noise::add_poisson_noise;
pub use phantom::{make_cylinder_phantom, make_head_phantom, Phantom};
pub use projector::{forward_project, line_integral};
pub use scatter::{
    calibrate_amplitude, high_frequency_fraction, measured, point_scatter_kernel, spr, synthesize_scatter,
    PointScatterKernel, ScatterModelParams, ScatterTail, SprStats,
};
