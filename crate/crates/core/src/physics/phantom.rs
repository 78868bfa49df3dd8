//! Randomised head phantoms made of nested ellipsoids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::materials::{MaterialLabel, MaterialTable};
use crate::data::Volume;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub voxel_mm: f64,
    pub energy_kev: f64,
    pub labels: Vec<MaterialLabel>,
    /// g/cm^3
    pub density: Vec<f32>,
    /// mm^-1
    pub mu: Vec<f32>,
}

impl Phantom {
    pub fn from_labels(
        (nx, ny, nz): (usize, usize, usize),
        voxel_mm: f64,
        labels: Vec<MaterialLabel>,
        table: &MaterialTable,
    ) -> Result<Self> {
        if labels.len() != nx * ny * nz {
            return Err(Error::dim("label count does not match phantom dims"));
        }
        table.validate()?;
        let density = labels.iter().map(|&l| table.get(l).density as f32).collect();
        let mu = labels.iter().map(|&l| table.get(l).mu as f32).collect();
        Ok(Phantom { nx, ny, nz, voxel_mm, energy_kev: table.energy_kev, labels, density, mu })
    }

    /// Phantom with explicit attenuation values and no material labels
    /// (labels are set to soft tissue wherever `mu > 0`).
    pub fn from_mu(volume: &Volume, energy_kev: f64) -> Self {
        let labels =
            volume.data.iter().map(|&m| if m > 0.0 { MaterialLabel::SoftTissue } else { MaterialLabel::Air }).collect();
        Phantom {
            nx: volume.nx,
            ny: volume.ny,
            nz: volume.nz,
            voxel_mm: volume.voxel_mm,
            energy_kev,
            labels,
            density: vec![0.0; volume.data.len()],
            mu: volume.data.clone(),
        }
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    pub fn mu_volume(&self) -> Volume {
        Volume { nx: self.nx, ny: self.ny, nz: self.nz, voxel_mm: self.voxel_mm, data: self.mu.clone() }
    }

    pub fn half_extent_mm(&self) -> [f64; 3] {
        [
            self.nx as f64 * self.voxel_mm / 2.0,
            self.ny as f64 * self.voxel_mm / 2.0,
            self.nz as f64 * self.voxel_mm / 2.0,
        ]
    }

    /// World coordinate (mm) of a voxel centre along an axis of length `n`.
    pub fn coord(&self, i: usize, n: usize) -> f64 {
        (i as f64 - (n as f64 - 1.0) / 2.0) * self.voxel_mm
    }

    pub fn fraction(&self, label: MaterialLabel) -> f64 {
        self.labels.iter().filter(|&&l| l == label).count() as f64 / self.labels.len() as f64
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    axes: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).map(|i| ((p[i] - self.center[i]) / self.axes[i]).powi(2)).sum::<f64>() <= 1.0
    }
}

/// Head phantom: soft-tissue ellipsoid, closed elliptical skull shell,
/// soft-tissue interior and 2-5 small bone or air inserts kept away from
/// the central axis.
pub fn make_head_phantom(
    seed: u64,
    (nx, ny, nz): (usize, usize, usize),
    voxel_mm: f64,
    table: &MaterialTable,
) -> Result<Phantom> {
    if nx < 32 || ny < 32 || nz < 32 {
        return Err(Error::config(format!("phantom dims {nx}x{ny}x{nz} below 32^3")));
    }
    if !(voxel_mm > 0.0) {
        return Err(Error::config("voxel size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = [nx as f64 * voxel_mm / 2.0, ny as f64 * voxel_mm / 2.0, nz as f64 * voxel_mm / 2.0];
    let outer = [
        half[0] * rng.random_range(0.74..0.82),
        half[1] * rng.random_range(0.80..0.88),
        half[2] * rng.random_range(0.72..0.84),
    ];
    let min_outer = outer.iter().cloned().fold(f64::INFINITY, f64::min);
    let skin = (0.04 * min_outer).max(voxel_mm);
    let skull = (rng.random_range(0.09..0.12) * min_outer).max(2.2 * voxel_mm);
    let skull_outer = outer.map(|a| a - skin);
    let inner = skull_outer.map(|a| a - skull);
    let min_inner = inner.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_inner <= 4.0 * voxel_mm {
        return Err(Error::config("voxels too coarse for a head phantom"));
    }

    let n_inserts = rng.random_range(2..=5);
    let inserts: Vec<(Ellipsoid, MaterialLabel)> = (0..n_inserts)
        .map(|_| {
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let rho = rng.random_range(0.45..0.65);
            let zeta = rng.random_range(-0.5..0.5);
            let size = [(); 3].map(|_| rng.random_range(0.08..0.18) * min_inner);
            let label = if rng.random_bool(0.5) { MaterialLabel::Bone } else { MaterialLabel::Air };
            let center = [rho * phi.cos() * inner[0], rho * phi.sin() * inner[1], zeta * inner[2]];
            (Ellipsoid { center, axes: size }, label)
        })
        .collect();

    let head = Ellipsoid { center: [0.0; 3], axes: outer };
    let skull_out = Ellipsoid { center: [0.0; 3], axes: skull_outer };
    let brain = Ellipsoid { center: [0.0; 3], axes: inner };
    let c = |i: usize, n: usize| (i as f64 - (n as f64 - 1.0) / 2.0) * voxel_mm;
    let mut labels = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [c(x, nx), c(y, ny), c(z, nz)];
                let mut label = MaterialLabel::Air;
                if head.contains(p) {
                    label = MaterialLabel::SoftTissue;
                    if skull_out.contains(p) && !brain.contains(p) {
                        label = MaterialLabel::Bone;
                    }
                    if brain.contains(p) {
                        for (e, l) in &inserts {
                            if e.contains(p) {
                                label = *l;
                            }
                        }
                    }
                }
                labels.push(label);
            }
        }
    }
    Phantom::from_labels((nx, ny, nz), voxel_mm, labels, table)
}

/// Homogeneous cylinder along z (radius and height in mm) centred in the grid.
pub fn make_cylinder_phantom(
    (nx, ny, nz): (usize, usize, usize),
    voxel_mm: f64,
    radius_mm: f64,
    height_mm: f64,
    table: &MaterialTable,
) -> Result<Phantom> {
    let c = |i: usize, n: usize| (i as f64 - (n as f64 - 1.0) / 2.0) * voxel_mm;
    let mut labels = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let (px, py, pz) = (c(x, nx), c(y, ny), c(z, nz));
                let inside = px * px + py * py <= radius_mm * radius_mm && pz.abs() <= height_mm / 2.0;
                labels.push(if inside { MaterialLabel::SoftTissue } else { MaterialLabel::Air });
            }
        }
    }
    Phantom::from_labels((nx, ny, nz), voxel_mm, labels, table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn bone_ring_closed(p: &Phantom, z: usize) -> bool {
        // 4-connected flood fill through non-bone voxels from the slice centre
        let (nx, ny) = (p.nx, p.ny);
        let mut seen = vec![false; nx * ny];
        let start = (nx / 2, ny / 2);
        let mut queue = VecDeque::from([start]);
        seen[start.1 * nx + start.0] = true;
        while let Some((x, y)) = queue.pop_front() {
            if x == 0 || y == 0 || x == nx - 1 || y == ny - 1 {
                return false;
            }
            for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let (qx, qy) = ((x as i64 + dx) as usize, (y as i64 + dy) as usize);
                let i = qy * nx + qx;
                if !seen[i] && p.labels[p.index(qx, qy, z)] != MaterialLabel::Bone {
                    seen[i] = true;
                    queue.push_back((qx, qy));
                }
            }
        }
        true
    }

    #[test]
    fn deterministic_per_seed() {
        let t = MaterialTable::default();
        let a = make_head_phantom(3, (32, 32, 32), 3.0, &t).unwrap();
        let b = make_head_phantom(3, (32, 32, 32), 3.0, &t).unwrap();
        let c = make_head_phantom(4, (32, 32, 32), 3.0, &t).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.labels, c.labels);
    }

    #[test]
    fn material_fractions_and_closed_skull() {
        let t = MaterialTable::default();
        for seed in 0..6 {
            for &(n, vs) in &[(32usize, 3.0), (64, 1.5)] {
                let p = make_head_phantom(seed, (n, n, n), vs, &t).unwrap();
                assert!(p.fraction(MaterialLabel::Air) > 0.0);
                assert!(p.fraction(MaterialLabel::SoftTissue) > p.fraction(MaterialLabel::Bone));
                assert!(bone_ring_closed(&p, n / 2), "seed {seed} n {n}");
            }
        }
    }

    #[test]
    fn mu_follows_table() {
        let t = MaterialTable::default();
        let p = make_head_phantom(1, (32, 32, 32), 3.0, &t).unwrap();
        for (l, m) in p.labels.iter().zip(&p.mu) {
            assert_eq!(*m, t.get(*l).mu as f32);
            assert!(*m >= 0.0);
        }
    }

    #[test]
    fn rejects_small_grid() {
        assert!(make_head_phantom(0, (16, 32, 32), 3.0, &MaterialTable::default()).is_err());
    }
}
