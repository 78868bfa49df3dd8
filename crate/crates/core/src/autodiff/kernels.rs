//! Slice-level forward and backward kernels used by the tape.

use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Valid output index range `[lo, hi)` along one axis for kernel tap `k`.
    fn valid(&self, k: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        // input index = o * stride + k - pad must lie in [0, in_len)
        let s = self.stride;
        let lo = if k >= self.pad { 0 } else { (self.pad - k).div_ceil(s) };
        let hi = if in_len + self.pad <= k { 0 } else { ((in_len + self.pad - k - 1) / s + 1).min(out_len) };
        (lo, hi.max(lo))
    }
}

/// Unfold `x[c_in,h,w]` into `cols[c_in*kh*kw, oh*ow]`.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let n = g.col_cols();
    cols.fill(T::zero());
    for ci in 0..g.c_in {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid(ky, g.h, g.oh);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi) = g.valid(kx, g.w, g.ow);
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.pad;
                        out_row[ox_lo..ox_hi].copy_from_slice(&src_row[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            out_row[ox] = src_row[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate `cols` back into `dx[c_in,h,w]`.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let n = g.col_cols();
    for ci in 0..g.c_in {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid(ky, g.h, g.oh);
            for kx in 0..g.kw {
                let (ox_lo, ox_hi) = g.valid(kx, g.w, g.ow);
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst_row = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let col_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    if g.stride == 1 {
                        let ix0 = ox_lo + kx - g.pad;
                        let d = &mut dst_row[ix0..ix0 + (ox_hi - ox_lo)];
                        for (d, &c) in d.iter_mut().zip(&col_row[ox_lo..ox_hi]) {
                            *d = *d + c;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst_row[ox * g.stride + kx - g.pad] = dst_row[ox * g.stride + kx - g.pad] + col_row[ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Linear interpolation taps for half-pixel-centred resampling
/// (corners not aligned): `(i0, i1, frac)` per output sample.
pub(crate) fn bilinear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn typed_taps<T: Real>(out_len: usize, in_len: usize) -> Vec<(usize, usize, T)> {
    bilinear_taps(out_len, in_len).into_iter().map(|(a, b, f)| (a, b, T::from_f64_lossy(f))).collect()
}

/// Bilinear resize of a stack of `c` planes from `h x w` to `oh x ow`.
pub(crate) fn resize_bilinear<T: Real>(x: &[T], c: usize, (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<T> {
    let ty = typed_taps::<T>(oh, h);
    let tx = typed_taps::<T>(ow, w);
    let mut out = vec![T::zero(); c * oh * ow];
    let mut rows = vec![T::zero(); h * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for (r, dst) in src.chunks_exact(w).zip(rows.chunks_exact_mut(ow)) {
            for (d, &(x0, x1, lx)) in dst.iter_mut().zip(&tx) {
                *d = r[x0] + (r[x1] - r[x0]) * lx;
            }
        }
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (drow, &(y0, y1, ly)) in dst.chunks_exact_mut(ow).zip(&ty) {
            let top = &rows[y0 * ow..(y0 + 1) * ow];
            let bot = &rows[y1 * ow..(y1 + 1) * ow];
            for ((d, &t), &b) in drow.iter_mut().zip(top).zip(bot) {
                *d = t + (b - t) * ly;
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`].
pub(crate) fn resize_bilinear_adjoint<T: Real>(
    dy: &[T],
    c: usize,
    (h, w): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<T> {
    let ty = typed_taps::<T>(oh, h);
    let tx = typed_taps::<T>(ow, w);
    let mut dx = vec![T::zero(); c * h * w];
    let mut rows = vec![T::zero(); h * ow];
    for ch in 0..c {
        rows.fill(T::zero());
        let g = &dy[ch * oh * ow..(ch + 1) * oh * ow];
        for (grow, &(y0, y1, ly)) in g.chunks_exact(ow).zip(&ty) {
            let keep = T::one() - ly;
            for (i, &v) in grow.iter().enumerate() {
                rows[y0 * ow + i] = rows[y0 * ow + i] + v * keep;
                rows[y1 * ow + i] = rows[y1 * ow + i] + v * ly;
            }
        }
        let d = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (drow, r) in d.chunks_exact_mut(w).zip(rows.chunks_exact(ow)) {
            for (&v, &(x0, x1, lx)) in r.iter().zip(&tx) {
                drow[x0] = drow[x0] + v * (T::one() - lx);
                drow[x1] = drow[x1] + v * lx;
            }
        }
    }
    dx
}

/// Mean over non-overlapping `f x f` blocks; `h` and `w` must be multiples of `f`.
pub(crate) fn block_mean<T: Real>(x: &[T], c: usize, (h, w): (usize, usize), f: usize) -> Vec<T> {
    let (oh, ow) = (h / f, w / f);
    let norm = T::from_f64_lossy(1.0 / (f * f) as f64);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            let drow = &mut dst[(y / f) * ow..(y / f + 1) * ow];
            for (x, &v) in row.iter().enumerate() {
                drow[x / f] = drow[x / f] + v;
            }
        }
        for v in dst.iter_mut() {
            *v = *v * norm;
        }
    }
    out
}

/// All Gaussian basis values `exp(-(x - mu_j)^2 / sigma^2)` of a uniform
/// grid. Only the nearest centre and two ratios need an exponential; the
/// rest follow from `g_{j+1} / g_j = exp((2 d_j D - D^2) / sigma^2)`.
pub(crate) fn rbf_row<T: Real>(x: T, grid: &crate::gkan::RbfGrid, out: &mut [T]) {
    let n = out.len();
    let mu0 = T::from_f64_lossy(grid.centers()[0]);
    let delta = T::from_f64_lossy(grid.spacing());
    let inv_s2 = T::from_f64_lossy(1.0 / (grid.sigma() * grid.sigma()));
    let pos = ((x - mu0) / delta).round().to_f64().unwrap_or(0.0);
    let j = if pos.is_nan() { 0 } else { pos.clamp(0.0, (n - 1) as f64) as usize };
    let d = x - T::from_f64_lossy(grid.centers()[j]);
    let gj = (-(d * d) * inv_s2).exp();
    out[j] = gj;
    let two = T::from_f64_lossy(2.0);
    let step = (-two * delta * delta * inv_s2).exp();
    let mut g = gj;
    let mut ratio = ((two * d * delta - delta * delta) * inv_s2).exp();
    for o in out.iter_mut().skip(j + 1) {
        g = g * ratio;
        ratio = ratio * step;
        *o = g;
    }
    let mut g = gj;
    let mut ratio = ((-two * d * delta - delta * delta) * inv_s2).exp();
    for o in out[..j].iter_mut().rev() {
        g = g * ratio;
        ratio = ratio * step;
        *o = g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gkan::{rbf_basis, RbfGrid};

    #[test]
    fn rbf_row_matches_direct_evaluation() {
        let grid = RbfGrid::default();
        let mut row = vec![0.0f64; grid.len()];
        for i in -400..=400 {
            let x = i as f64 * 0.01;
            rbf_row(x, &grid, &mut row);
            for (a, b) in row.iter().zip(rbf_basis(x, &grid)) {
                assert!((a - b).abs() <= 1e-11 * b + 1e-300, "x {x}: {a} vs {b}");
            }
        }
        let mut row32 = vec![0.0f32; grid.len()];
        for i in -300..=300 {
            let x = i as f32 * 0.01;
            rbf_row(x, &grid, &mut row32);
            for (a, b) in row32.iter().zip(rbf_basis(x as f64, &grid)) {
                assert!((*a as f64 - b).abs() <= 1e-5 * b + 1e-9, "x {x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn resize_adjoint_identity() {
        // <R x, y> == <x, R^T y>
        let (c, h, w, oh, ow) = (2, 5, 6, 10, 12);
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        let y: Vec<f64> = (0..c * oh * ow).map(|i| ((i * 13 % 7) as f64) - 3.0).collect();
        let rx = resize_bilinear(&x, c, (h, w), (oh, ow));
        let ry = resize_bilinear_adjoint(&y, c, (h, w), (oh, ow));
        let a: f64 = rx.iter().zip(&y).map(|(p, q)| p * q).sum();
        let b: f64 = x.iter().zip(&ry).map(|(p, q)| p * q).sum();
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
}
