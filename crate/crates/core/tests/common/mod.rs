//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use gkan_core::autodiff::{max_relative_error, Tape};
use gkan_core::gkan::{gauss_rbf_map, RbfGrid};
use gkan_core::net::{GKanUNetModel, UNetConfig};
use gkan_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, random_vec(rng, n, lo, hi)).unwrap()
}

/// `max_i |a_i - b_i| / max(|b_i|, floor)`.
pub fn max_rel(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / y.abs().max(floor)).fold(0.0, f64::max)
}

/// Cross-correlation with zero padding, one loop per index.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_loops(
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    k: &[f64],
    (co, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for c in 0..ci {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x[(c * h + iy as usize) * w + ix as usize] * k[((o * ci + c) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    (out, oh, ow)
}

pub fn centers(n: usize, half_range: f64) -> Vec<f64> {
    (0..n).map(|j| -half_range + 2.0 * half_range * j as f64 / (n - 1) as f64).collect()
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn phi(x: f64, w1: f64, w2: f64, weights: &[f64], centers: &[f64], sigma: f64) -> f64 {
    let mut bf = 0.0;
    for (w, mu) in weights.iter().zip(centers) {
        bf += w * (-(x - mu) * (x - mu) / (sigma * sigma)).exp();
    }
    w1 * silu(x) + w2 * bf
}

/// Per-pixel RBF expansion followed by the shared linear map.
pub fn gauss_rbf_loops(
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    weights: &[f64],
    co: usize,
    centers: &[f64],
    sigma: f64,
) -> Vec<f64> {
    let nc = centers.len();
    let mut out = vec![0.0; co * h * w];
    for p in 0..h * w {
        for o in 0..co {
            let mut acc = 0.0;
            for c in 0..ci {
                let v = x[c * h * w + p];
                for (j, mu) in centers.iter().enumerate() {
                    acc += weights[o * ci * nc + c * nc + j] * (-(v - mu) * (v - mu) / (sigma * sigma)).exp();
                }
            }
            out[o * h * w + p] = acc;
        }
    }
    out
}

pub fn mse_loop(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s / a.len() as f64
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Total Compton cross-section (units of r_e^2) by integrating the
/// differential Klein-Nishina cross-section over the sphere.
pub fn klein_nishina_quadrature(eps: f64) -> f64 {
    let diff = |t: f64| {
        let p = 1.0 / (1.0 + eps * (1.0 - t.cos()));
        0.5 * p * p * (p + 1.0 / p - t.sin().powi(2)) * t.sin()
    };
    2.0 * PI * simpson(diff, 0.0, PI, 20_000)
}

/// SSIM averaged over every full 11x11 window, computed window by window.
pub fn ssim_windows(a: &[f64], b: &[f64], (h, w): (usize, usize), range: f64) -> f64 {
    let n = 11;
    let mut g = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let k = g[i][j] / total;
                    mx += k * a[(y0 + i) * w + x0 + j];
                    my += k * b[(y0 + i) * w + x0 + j];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let k = g[i][j] / total;
                    let (p, q) = (a[(y0 + i) * w + x0 + j] - mx, b[(y0 + i) * w + x0 + j] - my);
                    vx += k * p * p;
                    vy += k * q * q;
                    cxy += k * p * q;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Bilinear sample with half-pixel centres and edge clamping.
pub fn bilinear_sample(src: &[f64], (h, w): (usize, usize), (oh, ow): (usize, usize)) -> Vec<f64> {
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let sy = ((oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
            let sx = ((ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out[oy * ow + ox] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

pub fn conv_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let ci = r.random_range(1..=4);
    let co = r.random_range(1..=4);
    let h = r.random_range(3..=16);
    let w = r.random_range(3..=16);
    let sizes: Vec<usize> = [1, 3, 5].into_iter().filter(|&k| k <= h.min(w)).collect();
    let kh = sizes[r.random_range(0..sizes.len())];
    let kw = kh;
    let stride = r.random_range(1..=2);
    let pad = r.random_range(0..=kh / 2);
    let x = random_tensor(&mut r, &[ci, h, w], -1.0, 1.0);
    let k = random_tensor(&mut r, &[co, ci, kh, kw], -1.0, 1.0);
    let mut tape = Tape::new();
    let (xv, kv) = (tape.leaf(x.clone()), tape.leaf(k.clone()));
    let y = tape.conv2d(xv, kv, stride, pad).unwrap();
    let (want, oh, ow) = conv2d_loops(x.data(), (ci, h, w), k.data(), (co, kh, kw), stride, pad);
    assert_eq!(tape.value(y).shape(), &[co, oh, ow]);
    max_rel(tape.value(y).data(), &want, 1.0)
}

pub fn rbf_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (ci, co) = (r.random_range(1..4), r.random_range(1..4));
    let (h, w) = (r.random_range(1..6), r.random_range(1..6));
    let nc = r.random_range(2..9);
    let grid = RbfGrid::with_spacing_sigma(nc).unwrap();
    let x = random_tensor(&mut r, &[ci, h, w], -1.2, 1.2);
    let wt = random_tensor(&mut r, &[co, ci * nc], -1.0, 1.0);
    let mut tape = Tape::new();
    let (xv, wv) = (tape.leaf(x.clone()), tape.leaf(wt.clone()));
    let y = gauss_rbf_map(&mut tape, xv, wv, &grid).unwrap();
    let want = gauss_rbf_loops(x.data(), (ci, h, w), wt.data(), co, &centers(nc, 1.0), grid.sigma());
    max_rel(tape.value(y).data(), &want, 1.0)
}

pub fn tiny(input_size: usize) -> UNetConfig {
    UNetConfig { depth: 2, channels: vec![2, 3], input_size, rbf_centers: 4, ..UNetConfig::default() }
}

/// Gradient of `<w, forward(x)>` with respect to every parameter and the
/// input, against central differences.
pub fn unet_grad_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let model = GKanUNetModel::<f64>::build(&tiny(8), seed).unwrap();
    let x = random_tensor(&mut r, &[1, 8, 8], 0.0, 1.0);
    let probe = random_vec(&mut r, 64, -1.0, 1.0);
    let value = |m: &GKanUNetModel<f64>, x: &Tensor<f64>| -> f64 {
        m.forward(x).unwrap().data().iter().zip(&probe).map(|(a, b)| a * b).sum()
    };
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let (out, leaves) = model.forward_tape(&mut tape, xv).unwrap();
    let s = tape.weighted_sum(out, probe.clone()).unwrap();
    tape.backward(s).unwrap();
    let mut analytic: Vec<f64> = tape.grad(xv).unwrap().to_vec();
    for l in &leaves {
        analytic.extend_from_slice(tape.grad(*l).unwrap());
    }

    let eps = 1e-5;
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let o = xp.data()[i];
        xp.data_mut()[i] = o + eps;
        let fp = value(&model, &xp);
        xp.data_mut()[i] = o - eps;
        let fm = value(&model, &xp);
        xp.data_mut()[i] = o;
        numeric.push((fp - fm) / (2.0 * eps));
    }
    let mut m = model.clone();
    for p in 0..m.params().len() {
        for i in 0..m.params()[p].len() {
            let o = m.params()[p].data()[i];
            m.params_mut()[p].data_mut()[i] = o + eps;
            let fp = value(&m, &x);
            m.params_mut()[p].data_mut()[i] = o - eps;
            let fm = value(&m, &x);
            m.params_mut()[p].data_mut()[i] = o;
            numeric.push((fp - fm) / (2.0 * eps));
        }
    }
    max_relative_error(&analytic, &numeric).unwrap()
}
