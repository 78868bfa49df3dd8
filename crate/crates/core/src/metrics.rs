//! Image-quality metrics and evaluation reports.
//!
//! Standard deviations are population deviations (divide by `n`) throughout.
//! Non-finite values (the PSNR of identical images) are serialised as the
//! strings `"inf"`, `"-inf"` and `"nan"`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ProjectionStack, Volume};
use crate::error::{Error, Result};

/// HU window used as the PSNR data range for volumes.
pub const HU_DATA_RANGE: f64 = 2000.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_len(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dim(format!("metric inputs have lengths {} and {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    check_len(a, b)?;
    Ok(a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64)
}

pub fn rmse(a: &[f32], b: &[f32]) -> Result<f64> {
    Ok(mse(a, b)?.sqrt())
}

/// `10 log10(range^2 / MSE)`; `+inf` when the inputs are identical.
pub fn psnr(a: &[f32], b: &[f32], data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::config("PSNR data range must be positive"));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / m).log10())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w: Vec<f64> =
        (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-mode filtering of a `h x w` image with a 1-D window.
fn filter_valid(img: &[f64], (h, w): (usize, usize), k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every full 11x11 Gaussian window (sigma 1.5).
pub fn ssim(a: &[f32], b: &[f32], (h, w): (usize, usize), data_range: f64) -> Result<f64> {
    check_len(a, b)?;
    if a.len() != h * w {
        return Err(Error::dim("SSIM image dims do not match data"));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!("SSIM needs images of at least 11x11, got {h}x{w}")));
    }
    if !(data_range > 0.0) {
        return Err(Error::config("SSIM data range must be positive"));
    }
    let k = gaussian_window();
    let x: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let dims = (h, w);
    let mx = filter_valid(&x, dims, &k);
    let my = filter_valid(&y, dims, &k);
    let sxx = filter_valid(&xx, dims, &k);
    let syy = filter_valid(&yy, dims, &k);
    let sxy = filter_valid(&xy, dims, &k);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Population mean and standard deviation. Identical values (including
/// infinities) have zero spread.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Circular region on one axial slice, in voxel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiSpec {
    pub slice: usize,
    pub center: [f64; 2],
    pub radius: f64,
}

impl RoiSpec {
    pub fn validate(&self, volume: &Volume) -> Result<()> {
        let [cx, cy] = self.center;
        let r = self.radius;
        let inside = self.slice < volume.nz
            && r >= 0.0
            && cx - r >= 0.0
            && cy - r >= 0.0
            && cx + r <= (volume.nx - 1) as f64
            && cy + r <= (volume.ny - 1) as f64;
        if !inside {
            return Err(Error::Data(format!(
                "ROI {self:?} not inside the {}x{}x{} volume",
                volume.nx, volume.ny, volume.nz
            )));
        }
        Ok(())
    }

    /// Voxel values inside the disk.
    pub fn values(&self, volume: &Volume) -> Result<Vec<f64>> {
        self.validate(volume)?;
        let [cx, cy] = self.center;
        let mut out = Vec::new();
        for y in 0..volume.ny {
            for x in 0..volume.nx {
                if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= self.radius * self.radius {
                    out.push(volume.get(x, y, self.slice) as f64);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiStats {
    pub mean: f64,
    pub std: f64,
    /// `mean - reference_mean`.
    pub error: f64,
}

pub fn roi_stats(volume: &Volume, roi: &RoiSpec, reference_mean: f64) -> Result<RoiStats> {
    let (mean, std) = mean_std(&roi.values(volume)?);
    Ok(RoiStats { mean, std, error: mean - reference_mean })
}

mod marker {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad metric marker {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub index: usize,
    #[serde(with = "marker")]
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    #[serde(with = "marker")]
    pub mean: f64,
    #[serde(with = "marker")]
    pub std: f64,
}

impl MeanStd {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        let (mean, std) = mean_std(&v);
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub psnr: MeanStd,
    pub ssim: MeanStd,
    pub rmse: MeanStd,
}

/// Whole-array metrics over every element at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMetrics {
    #[serde(with = "marker")]
    pub psnr: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiReport {
    pub roi: RoiSpec,
    pub mean: f64,
    pub std: f64,
    pub reference_mean: f64,
    pub reference_std: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `"projections"` (one entry per view) or `"volume"` (one per axial slice).
    pub kind: String,
    pub data_range: f64,
    pub per_view: Vec<ImageMetrics>,
    pub aggregates: Aggregates,
    pub global: GlobalMetrics,
    pub roi: Vec<RoiReport>,
}

fn per_image(pred: &[f32], reference: &[f32], dims: (usize, usize), data_range: f64) -> Result<Vec<ImageMetrics>> {
    let n = dims.0 * dims.1;
    pred.par_chunks(n)
        .zip(reference.par_chunks(n))
        .enumerate()
        .map(|(index, (p, r))| {
            Ok(ImageMetrics {
                index,
                psnr: psnr(p, r, data_range)?,
                ssim: ssim(p, r, dims, data_range)?,
                rmse: rmse(p, r)?,
            })
        })
        .collect()
}

fn aggregate(items: &[ImageMetrics]) -> Aggregates {
    Aggregates {
        psnr: MeanStd::of(items.iter().map(|m| m.psnr)),
        ssim: MeanStd::of(items.iter().map(|m| m.ssim)),
        rmse: MeanStd::of(items.iter().map(|m| m.rmse)),
    }
}

/// Per-view metrics for projection or scatter stacks. The data range
/// defaults to the reference maximum.
pub fn evaluate_stacks(
    pred: &ProjectionStack,
    reference: &ProjectionStack,
    data_range: Option<f64>,
) -> Result<EvalReport> {
    pred.check_aligned(reference)?;
    let range = match data_range {
        Some(r) => r,
        None => reference.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64,
    };
    if !(range > 0.0) {
        return Err(Error::Data("reference stack has no positive maximum for the PSNR range".into()));
    }
    let per_view = per_image(&pred.data, &reference.data, (pred.rows, pred.cols), range)?;
    Ok(EvalReport {
        kind: "projections".into(),
        data_range: range,
        aggregates: aggregate(&per_view),
        per_view,
        global: GlobalMetrics {
            psnr: psnr(&pred.data, &reference.data, range)?,
            rmse: rmse(&pred.data, &reference.data)?,
        },
        roi: Vec::new(),
    })
}

/// Slice-wise metrics and ROI statistics for HU volumes.
pub fn evaluate_volumes(pred: &Volume, reference: &Volume, rois: &[RoiSpec], data_range: f64) -> Result<EvalReport> {
    if !pred.same_shape(reference) {
        return Err(Error::dim("predicted and reference volumes differ in shape"));
    }
    let per_view = per_image(&pred.data, &reference.data, (pred.ny, pred.nx), data_range)?;
    let roi = rois
        .iter()
        .map(|r| {
            let (reference_mean, reference_std) = mean_std(&r.values(reference)?);
            let s = roi_stats(pred, r, reference_mean)?;
            Ok(RoiReport { roi: *r, mean: s.mean, std: s.std, reference_mean, reference_std, error: s.error })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        kind: "volume".into(),
        data_range,
        aggregates: aggregate(&per_view),
        per_view,
        global: GlobalMetrics {
            psnr: psnr(&pred.data, &reference.data, data_range)?,
            rmse: rmse(&pred.data, &reference.data)?,
        },
        roi,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Aligned plain-text summary.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let unit = if self.kind == "volume" { "slice" } else { "view" };
        let _ = writeln!(out, "{:<8} {:>10} {:>8} {:>12}", unit, "PSNR dB", "SSIM", "RMSE");
        for m in &self.per_view {
            let _ = writeln!(out, "{:<8} {:>10.3} {:>8.4} {:>12.4}", m.index, m.psnr, m.ssim, m.rmse);
        }
        let a = &self.aggregates;
        let _ = writeln!(
            out,
            "{:<8} {:>10} {:>8} {:>12}",
            "mean",
            format!("{:.3}", a.psnr.mean),
            format!("{:.4}", a.ssim.mean),
            format!("{:.4}", a.rmse.mean)
        );
        let _ = writeln!(
            out,
            "{:<8} {:>10} {:>8} {:>12}",
            "std",
            format!("{:.3}", a.psnr.std),
            format!("{:.4}", a.ssim.std),
            format!("{:.4}", a.rmse.std)
        );
        let _ = writeln!(out, "global PSNR {:.3} dB, RMSE {:.4}", self.global.psnr, self.global.rmse);
        if !self.roi.is_empty() {
            let _ = writeln!(out, "{:<18} {:>18} {:>18} {:>10}", "ROI", "mean +- std", "reference", "error");
            for r in &self.roi {
                let _ = writeln!(
                    out,
                    "{:<18} {:>18} {:>18} {:>10.3}",
                    format!("z{} ({:.0},{:.0}) r{:.0}", r.roi.slice, r.roi.center[0], r.roi.center[1], r.roi.radius),
                    format!("{:.3} +- {:.3}", r.mean, r.std),
                    format!("{:.3} +- {:.3}", r.reference_mean, r.reference_std),
                    r.error
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let a = vec![1.0f32; 20];
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b: Vec<f32> = a.iter().map(|v| v + 0.5).collect();
        assert!((psnr(&a, &b, 5.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &b[..10], 1.0).is_err());
    }

    #[test]
    fn rmse_constant_difference() {
        let a = vec![2.0f32; 9];
        let b = vec![-1.0f32; 9];
        assert!((rmse(&a, &b).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a: Vec<f32> = (0..144).map(|i| (i % 7) as f32).collect();
        assert!((ssim(&a, &a, (12, 12), 6.0).unwrap() - 1.0).abs() < 1e-12);
        let zero = vec![0.0f32; 144];
        let one = vec![1.0f32; 144];
        // closed form for constants: (c1) / (1 + c1)
        let c1 = 1e-4;
        assert!((ssim(&zero, &one, (12, 12), 1.0).unwrap() - c1 / (1.0 + c1)).abs() < 1e-12);
        assert!(ssim(&a[..100], &a[..100], (10, 10), 1.0).is_err());
    }

    #[test]
    fn roi_two_valued_half_disk() {
        let mut v = Volume::zeros(9, 9, 1, 1.0);
        for y in 0..9 {
            for x in 5..9 {
                let i = v.index(x, y, 0);
                v.data[i] = 2.0;
            }
        }
        // centred between columns 4 and 5 so each half holds the same voxel count
        let roi = RoiSpec { slice: 0, center: [4.5, 4.0], radius: 3.0 };
        let s = roi_stats(&v, &roi, 0.5).unwrap();
        assert!((s.mean - 1.0).abs() < 1e-12);
        assert!((s.std - 1.0).abs() < 1e-12);
        assert!((s.error - 0.5).abs() < 1e-12);
        assert!(roi_stats(&v, &RoiSpec { slice: 0, center: [1.0, 4.0], radius: 3.0 }, 0.0).is_err());
    }

    #[test]
    fn marker_round_trip() {
        let m = ImageMetrics { index: 0, psnr: f64::INFINITY, ssim: 1.0, rmse: 0.0 };
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"inf\""));
        assert_eq!(serde_json::from_str::<ImageMetrics>(&s).unwrap(), m);
    }
}
