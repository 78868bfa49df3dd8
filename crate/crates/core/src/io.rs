//! Raw little-endian `f32` tensors with JSON sidecars.
//!
//! A tensor `name` is stored as `name.f32` (row-major data) next to
//! `name.json`:
//!
//! ```json
//! {"shape": [90, 128, 128], "dtype": "f32", "kind": "projections",
//!  "geometry": {...}, "units": "photons"}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ProjectionStack, Volume};
use crate::error::{Error, Result};
use crate::geometry::ConeBeamGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Projections,
    Volume,
    Scatter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub kind: TensorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<ConeBeamGeometry>,
    pub units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxel_mm: Option<f64>,
}

/// `(blob, sidecar)` paths for a tensor path with or without extension.
pub fn tensor_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let p = path.as_ref();
    (p.with_extension("f32"), p.with_extension("json"))
}

pub fn write_tensor(path: impl AsRef<Path>, sidecar: &Sidecar, data: &[f32]) -> Result<()> {
    if sidecar.shape.iter().product::<usize>() != data.len() {
        return Err(Error::dim("sidecar shape does not match tensor length"));
    }
    let (blob, meta) = tensor_paths(path);
    if let Some(dir) = blob.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(blob, bytes)?;
    fs::write(meta, serde_json::to_string_pretty(sidecar)? + "\n")?;
    Ok(())
}

/// Read and validate a tensor; the byte length is checked against the
/// sidecar shape before decoding.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<(Sidecar, Vec<f32>)> {
    let (blob, meta) = tensor_paths(path);
    let text = fs::read_to_string(&meta).map_err(|e| Error::Data(format!("{}: {e}", meta.display())))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", meta.display())))?;
    if sidecar.dtype != "f32" {
        return Err(Error::Data(format!("unsupported dtype {:?}", sidecar.dtype)));
    }
    let n: usize = sidecar.shape.iter().product();
    let bytes = fs::read(&blob).map_err(|e| Error::Data(format!("{}: {e}", blob.display())))?;
    if bytes.len() != 4 * n {
        return Err(Error::Data(format!(
            "{}: {} bytes but shape {:?} needs {}",
            blob.display(),
            bytes.len(),
            sidecar.shape,
            4 * n
        )));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((sidecar, data))
}

pub fn write_stack(path: impl AsRef<Path>, stack: &ProjectionStack, kind: TensorKind) -> Result<()> {
    let sidecar = Sidecar {
        shape: vec![stack.n_views, stack.rows, stack.cols],
        dtype: "f32".into(),
        kind,
        geometry: stack.geometry.clone(),
        units: "photons".into(),
        voxel_mm: None,
    };
    write_tensor(path, &sidecar, &stack.data)
}

/// Read a projection or scatter stack.
pub fn read_stack(path: impl AsRef<Path>) -> Result<(ProjectionStack, TensorKind)> {
    let (s, data) = read_tensor(path)?;
    if s.kind == TensorKind::Volume || s.shape.len() != 3 {
        return Err(Error::Data(format!("expected a projection stack, found {:?} {:?}", s.kind, s.shape)));
    }
    if let Some(g) = &s.geometry {
        if g.n_views() != s.shape[0] || g.nv != s.shape[1] || g.nu != s.shape[2] {
            return Err(Error::Data("sidecar geometry does not match the stack shape".into()));
        }
    }
    let stack = ProjectionStack::new(s.shape[0], s.shape[1], s.shape[2], data)?.with_geometry(s.geometry);
    Ok((stack, s.kind))
}

pub fn write_volume(path: impl AsRef<Path>, volume: &Volume, units: &str) -> Result<()> {
    let sidecar = Sidecar {
        shape: vec![volume.nz, volume.ny, volume.nx],
        dtype: "f32".into(),
        kind: TensorKind::Volume,
        geometry: None,
        units: units.into(),
        voxel_mm: Some(volume.voxel_mm),
    };
    write_tensor(path, &sidecar, &volume.data)
}

/// Read a volume and its units.
pub fn read_volume(path: impl AsRef<Path>) -> Result<(Volume, String)> {
    let (s, data) = read_tensor(path)?;
    if s.kind != TensorKind::Volume || s.shape.len() != 3 {
        return Err(Error::Data(format!("expected a volume, found {:?} {:?}", s.kind, s.shape)));
    }
    let voxel = s.voxel_mm.ok_or_else(|| Error::Data("volume sidecar lacks voxel_mm".into()))?;
    Ok((Volume::new(s.shape[2], s.shape[1], s.shape[0], voxel, data)?, s.units))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_round_trip_and_length_check() {
        let dir = tempfile::tempdir().unwrap();
        let g = ConeBeamGeometry::circular(200.0, 400.0, (3, 2), 1.0, 4, 10.0).unwrap();
        let mut s = ProjectionStack::for_geometry(&g);
        s.data.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32 * 0.5);
        let p = dir.path().join("im");
        write_stack(&p, &s, TensorKind::Projections).unwrap();
        let (back, kind) = read_stack(&p).unwrap();
        assert_eq!(back, s);
        assert_eq!(kind, TensorKind::Projections);
        fs::write(p.with_extension("f32"), [0u8; 10]).unwrap();
        assert!(matches!(read_stack(&p), Err(Error::Data(_))));
    }

    #[test]
    fn volume_round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::new(2, 3, 4, 1.5, (0..24).map(|i| i as f32).collect()).unwrap();
        let p = dir.path().join("vol.f32");
        write_volume(&p, &v, "HU").unwrap();
        let (back, units) = read_volume(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(units, "HU");
        assert!(read_stack(&p).is_err());
    }

    #[test]
    fn unknown_sidecar_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        fs::write(p.with_extension("json"), r#"{"shape":[1],"dtype":"f32","kind":"volume","units":"HU","extra":1}"#)
            .unwrap();
        fs::write(p.with_extension("f32"), [0u8; 4]).unwrap();
        assert!(matches!(read_tensor(&p), Err(Error::Data(_))));
    }
}
