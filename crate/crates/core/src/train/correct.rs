use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ProjectionStack;
use crate::error::{Error, Result};
use crate::net::{infer_native, GKanUNetModel};
use crate::physics::scatter::{convolve_separable, point_scatter_kernel};
use crate::recon::{median_denoise, INTENSITY_FLOOR};

/// Median window used on the scatter-corrected primary.
pub const CORRECTION_WINDOW: usize = 3;

/// Scatter estimate and corrected primary `(I_s_hat, I_p_hat)` from a model.
pub fn correct(
    measured: &ProjectionStack,
    i0: f64,
    model: &GKanUNetModel<f32>,
) -> Result<(ProjectionStack, ProjectionStack)> {
    let scatter = infer_native(model, measured, i0)?;
    let primary = correct_with_scatter(measured, &scatter, i0, CORRECTION_WINDOW)?;
    Ok((scatter, primary))
}

/// `max(median(I_m - I_s_hat), floor * I_0)`.
pub fn correct_with_scatter(
    measured: &ProjectionStack,
    scatter: &ProjectionStack,
    i0: f64,
    window: usize,
) -> Result<ProjectionStack> {
    let residual = measured.zip_map(scatter, |m, s| m - s)?;
    let floor = (INTENSITY_FLOOR * i0) as f32;
    Ok(median_denoise(&residual, window)?.map(|v| v.max(floor)))
}

/// Single-Gaussian kernel superposition: `(a I_m p_hat^k) * G(sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SksParams {
    pub sigma_mm: f64,
    pub amplitude: f64,
    pub exponent: f64,
}

impl Default for SksParams {
    fn default() -> Self {
        SksParams { sigma_mm: 20.0, amplitude: 0.3, exponent: 1.5 }
    }
}

const SKS_SUPPORT_SIGMAS: f64 = 4.0;

pub fn sks_baseline(measured: &ProjectionStack, i0: f64, params: &SksParams, pitch_mm: f64) -> Result<ProjectionStack> {
    if !(i0 > 0.0) || !(params.sigma_mm > 0.0) || !(params.amplitude >= 0.0) || !(params.exponent >= 0.0) {
        return Err(Error::config("SKS requires I_0 > 0, sigma > 0, a >= 0, k >= 0"));
    }
    let kernel = point_scatter_kernel(params.sigma_mm, pitch_mm, SKS_SUPPORT_SIGMAS * params.sigma_mm)?;
    let dims = (measured.rows, measured.cols);
    let views: Vec<Vec<f32>> = measured
        .views()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|view| {
            let source: Vec<f64> = view
                .iter()
                .map(|&m| {
                    let r = (m as f64 / i0).clamp(INTENSITY_FLOOR, 1.0);
                    let p = -r.ln();
                    params.amplitude * m as f64 * p.powf(params.exponent)
                })
                .collect();
            convolve_separable(&source, dims, &kernel).into_iter().map(|v| v as f32).collect()
        })
        .collect();
    Ok(ProjectionStack::new(measured.n_views, measured.rows, measured.cols, views.concat())?
        .with_geometry(measured.geometry.clone()))
}

/// Closed-form amplitude and residual MSE of a unit-amplitude estimate.
fn best_amplitude(unit: &[&ProjectionStack], truth: &[&ProjectionStack]) -> (f64, f64) {
    let (mut st, mut ss, mut tt, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (u, t) in unit.iter().zip(truth) {
        for (&a, &b) in u.data.iter().zip(&t.data) {
            let (a, b) = (a as f64, b as f64);
            st += a * b;
            ss += a * a;
            tt += b * b;
        }
        n += t.data.len();
    }
    let a = if ss > 0.0 { (st / ss).max(0.0) } else { 0.0 };
    (a, (tt - 2.0 * a * st + a * a * ss) / n as f64)
}

/// Fit `(sigma, k)` by coordinate search with the amplitude solved in
/// closed form at every trial, minimising scatter MSE in photons.
pub fn fit_sks(
    measured: &[&ProjectionStack],
    scatter: &[&ProjectionStack],
    i0: f64,
    pitch_mm: f64,
    start: SksParams,
) -> Result<SksParams> {
    if measured.is_empty() || measured.len() != scatter.len() {
        return Err(Error::config("SKS fit needs matching non-empty stack lists"));
    }
    for (m, s) in measured.iter().zip(scatter) {
        m.check_aligned(s)?;
    }
    let eval = |sigma: f64, k: f64| -> Result<(f64, f64)> {
        let unit = SksParams { sigma_mm: sigma, amplitude: 1.0, exponent: k };
        let est: Vec<ProjectionStack> =
            measured.iter().map(|m| sks_baseline(m, i0, &unit, pitch_mm)).collect::<Result<_>>()?;
        let refs: Vec<&ProjectionStack> = est.iter().collect();
        Ok(best_amplitude(&refs, scatter))
    };
    let (mut sigma, mut k) = (start.sigma_mm, start.exponent);
    let (mut a, mut best) = eval(sigma, k)?;
    let (mut log_step, mut k_step) = (0.4f64, 0.5f64);
    for _ in 0..40 {
        let mut improved = false;
        for f in [log_step.exp(), (-log_step).exp()] {
            let s = sigma * f;
            let (aa, e) = eval(s, k)?;
            if e < best {
                (sigma, a, best, improved) = (s, aa, e, true);
                break;
            }
        }
        for d in [k_step, -k_step] {
            let kk = k + d;
            if kk < 0.0 {
                continue;
            }
            let (aa, e) = eval(sigma, kk)?;
            if e < best {
                (k, a, best, improved) = (kk, aa, e, true);
                break;
            }
        }
        if !improved {
            log_step /= 2.0;
            k_step /= 2.0;
            if log_step < 0.01 {
                break;
            }
        }
    }
    Ok(SksParams { sigma_mm: sigma, amplitude: a, exponent: k })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitude_and_air_give_zero() {
        let m = ProjectionStack::filled(1, 9, 9, 40.0);
        let p = SksParams { amplitude: 0.0, ..Default::default() };
        assert!(sks_baseline(&m, 100.0, &p, 1.0).unwrap().data.iter().all(|&v| v == 0.0));
        let air = ProjectionStack::filled(1, 9, 9, 100.0);
        assert!(sks_baseline(&air, 100.0, &SksParams::default(), 1.0).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn correction_floors_negative_residuals() {
        let m = ProjectionStack::filled(1, 5, 5, 10.0);
        let s = ProjectionStack::filled(1, 5, 5, 50.0);
        let p = correct_with_scatter(&m, &s, 1000.0, 3).unwrap();
        assert!(p.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn zero_scatter_correction_is_denoise() {
        let mut m = ProjectionStack::filled(2, 6, 6, 500.0);
        m.data[7] = 900.0;
        let z = ProjectionStack::filled(2, 6, 6, 0.0);
        assert_eq!(correct_with_scatter(&m, &z, 1000.0, 3).unwrap(), median_denoise(&m, 3).unwrap());
    }
}
