//! Whole-image resampling between detector and network resolutions.

use crate::autodiff::kernels;
use crate::tensor::Real;

/// Resize one plane. Integer shrink factors use block averaging (which is
/// what half-pixel bilinear reduces to at factor 2); everything else is
/// bilinear with half-pixel centres. Equal sizes copy.
pub fn resize_plane<T: Real>(src: &[T], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<T> {
    assert_eq!(src.len(), h * w, "plane size mismatch");
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    if oh <= h && ow <= w && h % oh == 0 && w % ow == 0 {
        return block_mean(src, (h, w), (h / oh, w / ow));
    }
    kernels::resize_bilinear(src, 1, (h, w), (oh, ow))
}

/// Bilinear resize with half-pixel centres, no special cases.
pub fn bilinear_plane<T: Real>(src: &[T], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<T> {
    assert_eq!(src.len(), h * w, "plane size mismatch");
    kernels::resize_bilinear(src, 1, (h, w), (oh, ow))
}

/// Mean over `fy x fx` blocks.
pub fn block_mean<T: Real>(src: &[T], (h, w): (usize, usize), (fy, fx): (usize, usize)) -> Vec<T> {
    let (oh, ow) = (h / fy, w / fx);
    let mut acc = vec![0.0f64; oh * ow];
    for y in 0..oh * fy {
        let row = &src[y * w..y * w + ow * fx];
        let arow = &mut acc[(y / fy) * ow..(y / fy + 1) * ow];
        for (x, v) in row.iter().enumerate() {
            arow[x / fx] += v.to_f64().unwrap();
        }
    }
    let norm = 1.0 / (fy * fx) as f64;
    acc.into_iter().map(|v| T::from_f64_lossy(v * norm)).collect()
}
