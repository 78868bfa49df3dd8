//! Analytic scatter synthesis on the detector.
//!
//! The scatter source at each pixel is `a * I_p * p^k` with `p` the primary
//! line integral; the detector scatter is that source convolved with a
//! unit-sum isotropic Gaussian, optionally blended with a wider tail
//! Gaussian. Both kernels are separable, so convolution runs as a row pass
//! followed by a column pass with zero boundary.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::data::ProjectionStack;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterTail {
    pub sigma_mm: f64,
    /// Fraction of the kernel mass in the tail, in `[0, 1]`.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScatterModelParams {
    /// Width of the main kernel on the detector plane.
    pub sigma_mm: f64,
    pub amplitude: f64,
    pub exponent: f64,
    pub tail: Option<ScatterTail>,
    /// Kernel support radius as a multiple of each kernel's sigma.
    pub support_sigmas: f64,
}

impl Default for ScatterModelParams {
    fn default() -> Self {
        ScatterModelParams {
            sigma_mm: 20.0,
            amplitude: DEFAULT_AMPLITUDE,
            exponent: 1.5,
            tail: Some(ScatterTail { sigma_mm: 60.0, weight: 0.3 }),
            support_sigmas: 4.0,
        }
    }
}

/// Amplitude that puts the mean per-phantom peak SPR of the default head
/// set (64^3 at 1.5 mm, desk geometry) at 1.0.
pub const DEFAULT_AMPLITUDE: f64 = 0.30;

impl ScatterModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_mm > 0.0) || !(self.amplitude >= 0.0) || !(self.exponent >= 0.0) {
            return Err(Error::config("scatter model requires sigma > 0, a >= 0, k >= 0"));
        }
        if let Some(t) = self.tail {
            if !(t.sigma_mm > 0.0) || !(0.0..=1.0).contains(&t.weight) {
                return Err(Error::config("scatter tail requires sigma > 0 and weight in [0,1]"));
            }
        }
        if self.support_sigmas < 3.0 {
            return Err(Error::config("kernel support must cover at least 3 sigma"));
        }
        Ok(())
    }
}

/// Discrete isotropic Gaussian on the detector grid, normalised to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PointScatterKernel {
    pub radius: usize,
    /// Unit-sum 1-D factor of length `2 * radius + 1`.
    pub profile: Vec<f64>,
}

impl PointScatterKernel {
    pub fn size(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn at(&self, i: i64, j: i64) -> f64 {
        let r = self.radius as i64;
        if i.abs() > r || j.abs() > r {
            return 0.0;
        }
        self.profile[(i + r) as usize] * self.profile[(j + r) as usize]
    }

    /// Dense `size x size` kernel, row-major.
    pub fn dense(&self) -> Vec<f64> {
        let n = self.size();
        let mut out = Vec::with_capacity(n * n);
        for a in &self.profile {
            for b in &self.profile {
                out.push(a * b);
            }
        }
        out
    }
}

/// Gaussian `exp(-r^2 / (2 sigma^2))` sampled at pixel centres within
/// `support_mm` (square support), normalised to sum to one.
pub fn point_scatter_kernel(sigma_mm: f64, pitch_mm: f64, support_mm: f64) -> Result<PointScatterKernel> {
    if !(sigma_mm > 0.0) || !(pitch_mm > 0.0) {
        return Err(Error::config("kernel sigma and pitch must be positive"));
    }
    if support_mm < 3.0 * sigma_mm {
        return Err(Error::config(format!(
            "kernel support {support_mm} mm smaller than 3 sigma ({} mm)",
            3.0 * sigma_mm
        )));
    }
    let radius = (support_mm / pitch_mm).floor() as usize;
    let mut profile: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = (i as f64 - radius as f64) * pitch_mm;
            (-d * d / (2.0 * sigma_mm * sigma_mm)).exp()
        })
        .collect();
    let s: f64 = profile.iter().sum();
    profile.iter_mut().for_each(|v| *v /= s);
    Ok(PointScatterKernel { radius, profile })
}

/// Separable zero-boundary convolution of one `rows x cols` plane.
pub fn convolve_separable(src: &[f64], (rows, cols): (usize, usize), kernel: &PointScatterKernel) -> Vec<f64> {
    let r = kernel.radius as i64;
    let k = &kernel.profile;
    let mut tmp = vec![0.0; rows * cols];
    for y in 0..rows {
        let row = &src[y * cols..(y + 1) * cols];
        let out = &mut tmp[y * cols..(y + 1) * cols];
        for (x, o) in out.iter_mut().enumerate() {
            let lo = (x as i64 - r).max(0) as usize;
            let hi = ((x as i64 + r) as usize).min(cols - 1);
            let mut acc = 0.0;
            for (xi, &v) in row.iter().enumerate().take(hi + 1).skip(lo) {
                acc += v * k[(xi as i64 - x as i64 + r) as usize];
            }
            *o = acc;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for y in 0..rows {
        let lo = (y as i64 - r).max(0) as usize;
        let hi = ((y as i64 + r) as usize).min(rows - 1);
        let dst = &mut out[y * cols..(y + 1) * cols];
        for yi in lo..=hi {
            let w = k[(yi as i64 - y as i64 + r) as usize];
            let srow = &tmp[yi * cols..(yi + 1) * cols];
            for (d, &s) in dst.iter_mut().zip(srow) {
                *d += w * s;
            }
        }
    }
    out
}

/// Kernels for a scatter model: `(main, Some((tail, tail_weight)))`.
pub fn model_kernels(
    params: &ScatterModelParams,
    pitch_mm: f64,
) -> Result<(PointScatterKernel, Option<(PointScatterKernel, f64)>)> {
    params.validate()?;
    let main = point_scatter_kernel(params.sigma_mm, pitch_mm, params.support_sigmas * params.sigma_mm)?;
    let tail = match params.tail {
        Some(t) if t.weight > 0.0 => {
            Some((point_scatter_kernel(t.sigma_mm, pitch_mm, params.support_sigmas * t.sigma_mm)?, t.weight))
        }
        _ => None,
    };
    Ok((main, tail))
}

/// Convolve a source plane with the blended kernel `(1-w) K_main + w K_tail`.
pub fn blend_convolve(
    source: &[f64],
    dims: (usize, usize),
    main: &PointScatterKernel,
    tail: Option<&(PointScatterKernel, f64)>,
) -> Vec<f64> {
    let mut out = convolve_separable(source, dims, main);
    if let Some((tk, w)) = tail {
        let wide = convolve_separable(source, dims, tk);
        for (o, t) in out.iter_mut().zip(wide) {
            *o = (1.0 - w) * *o + w * t;
        }
    }
    out
}

/// Scatter photons for a primary stack.
pub fn synthesize_scatter(
    primary: &ProjectionStack,
    i0: f64,
    params: &ScatterModelParams,
    pitch_mm: f64,
) -> Result<ProjectionStack> {
    if !(i0 > 0.0) {
        return Err(Error::config("flat-field flux must be positive"));
    }
    if let Some(bad) = primary.data.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("primary intensity must be positive, found {bad}")));
    }
    let (main, tail) = model_kernels(params, pitch_mm)?;
    let dims = (primary.rows, primary.cols);
    let (a, k) = (params.amplitude, params.exponent);
    let views: Vec<Vec<f32>> = primary
        .views()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|view| {
            let source: Vec<f64> = view
                .iter()
                .map(|&ip| {
                    let ip = ip as f64;
                    let p = (-(ip / i0).ln()).max(0.0);
                    a * ip * p.powf(k)
                })
                .collect();
            blend_convolve(&source, dims, &main, tail.as_ref()).into_iter().map(|v| v as f32).collect()
        })
        .collect();
    Ok(ProjectionStack::new(primary.n_views, primary.rows, primary.cols, views.concat())?
        .with_geometry(primary.geometry.clone()))
}

/// Pointwise `I_m = I_p + I_s`.
pub fn measured(primary: &ProjectionStack, scatter: &ProjectionStack) -> Result<ProjectionStack> {
    primary.zip_map(scatter, |p, s| p + s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SprStats {
    pub peak: f64,
    pub mean: f64,
}

/// Line-integral threshold above which a pixel counts as object shadow.
pub const SHADOW_THRESHOLD: f64 = 0.05;

/// Peak and mean scatter-to-primary ratio over the object shadow
/// (`-ln(I_p / I_0) > 0.05`); the whole detector when there is no shadow.
pub fn spr(scatter: &ProjectionStack, primary: &ProjectionStack, i0: f64) -> Result<SprStats> {
    scatter.check_aligned(primary)?;
    let ratio = |(s, p): (&f32, &f32)| *s as f64 / *p as f64;
    let shadow: Vec<f64> = scatter
        .data
        .iter()
        .zip(&primary.data)
        .filter(|(_, p)| -((**p as f64) / i0).ln() > SHADOW_THRESHOLD)
        .map(ratio)
        .collect();
    let values = if shadow.is_empty() { scatter.data.iter().zip(&primary.data).map(ratio).collect() } else { shadow };
    let peak = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(SprStats { peak, mean })
}

/// Amplitude giving a mean per-stack peak SPR of `target`. Scatter is
/// linear in the amplitude, so one unit-amplitude synthesis per stack
/// suffices.
pub fn calibrate_amplitude(
    primaries: &[&ProjectionStack],
    i0: f64,
    params: &ScatterModelParams,
    pitch_mm: f64,
    target_peak_spr: f64,
) -> Result<f64> {
    if primaries.is_empty() || !(target_peak_spr > 0.0) {
        return Err(Error::config("calibration needs stacks and a positive target"));
    }
    let unit = ScatterModelParams { amplitude: 1.0, ..*params };
    let mut total = 0.0;
    for p in primaries {
        let s = synthesize_scatter(p, i0, &unit, pitch_mm)?;
        total += spr(&s, p, i0)?.peak;
    }
    Ok(target_peak_spr / (total / primaries.len() as f64))
}

/// Fraction of a plane's spectral energy (including DC) at radial
/// frequencies above `cutoff` times Nyquist.
pub fn high_frequency_fraction(plane: &[f32], (rows, cols): (usize, usize), cutoff: f64) -> f64 {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(cols);
    let col_fft = planner.plan_fft_forward(rows);
    let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    for row in buf.chunks_mut(cols) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); rows];
    for x in 0..cols {
        for y in 0..rows {
            column[y] = buf[y * cols + x];
        }
        col_fft.process(&mut column);
        for y in 0..rows {
            buf[y * cols + x] = column[y];
        }
    }
    let freq = |k: usize, n: usize| {
        let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        k / n as f64
    };
    let limit = cutoff * 0.5;
    let (mut high, mut total) = (0.0, 0.0);
    for y in 0..rows {
        for x in 0..cols {
            let e = buf[y * cols + x].norm_sqr();
            total += e;
            if freq(y, rows).hypot(freq(x, cols)) > limit {
                high += e;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        high / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalised_and_isotropic() {
        let k = point_scatter_kernel(5.0, 1.6, 20.0).unwrap();
        let s: f64 = k.dense().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let r = k.radius as i64;
        for i in -r..=r {
            for j in -r..=r {
                assert_eq!(k.at(i, j), k.at(j, i));
                assert_eq!(k.at(i, j), k.at(-i, j));
            }
        }
    }

    #[test]
    fn kernel_support_must_cover_three_sigma() {
        assert!(point_scatter_kernel(10.0, 1.0, 29.0).is_err());
        assert!(point_scatter_kernel(10.0, 1.0, 30.0).is_ok());
        assert!(point_scatter_kernel(0.0, 1.0, 30.0).is_err());
    }

    #[test]
    fn air_projection_has_no_scatter() {
        let p = ProjectionStack::filled(2, 8, 8, 1000.0);
        let s = synthesize_scatter(&p, 1000.0, &ScatterModelParams::default(), 1.6).unwrap();
        assert!(s.data.iter().all(|&v| v == 0.0));
        let p = ProjectionStack::filled(1, 8, 8, 200.0);
        let zero = ScatterModelParams { amplitude: 0.0, ..Default::default() };
        assert!(synthesize_scatter(&p, 1000.0, &zero, 1.6).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nonpositive_primary_is_a_domain_error() {
        let mut p = ProjectionStack::filled(1, 4, 4, 10.0);
        p.data[3] = 0.0;
        assert!(matches!(synthesize_scatter(&p, 100.0, &ScatterModelParams::default(), 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn spectral_fraction_extremes() {
        let flat = vec![2.0f32; 64];
        assert_eq!(high_frequency_fraction(&flat, (8, 8), 0.25), 0.0);
        let checker: Vec<f32> = (0..64).map(|i| if (i / 8 + i % 8) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((high_frequency_fraction(&checker, (8, 8), 0.25) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spr_trivial_cases() {
        let p = ProjectionStack::filled(1, 4, 4, 50.0);
        let zero = ProjectionStack::filled(1, 4, 4, 0.0);
        assert_eq!(spr(&zero, &p, 100.0).unwrap(), SprStats { peak: 0.0, mean: 0.0 });
        assert_eq!(spr(&p, &p, 100.0).unwrap(), SprStats { peak: 1.0, mean: 1.0 });
    }
}
