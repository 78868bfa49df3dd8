//! Tape-based reverse-mode differentiation.
//!
//! Every forward call appends a node holding its output and whatever it
//! saved for the backward pass. [`Tape::backward`] walks the nodes in
//! reverse and writes gradients into each reached node's tensor.

mod gradcheck;
pub(crate) mod kernels;

pub use gradcheck::{grad_check, grad_check_fn, max_relative_error};

use crate::error::{Error, Result};
use crate::gkan::RbfGrid;
use crate::tensor::{Real, Tensor};
use kernels::ConvGeom;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, geom: ConvGeom, cols: Vec<T> },
    Silu { x: Var },
    Sigmoid { x: Var },
    AvgPool2 { x: Var },
    Upsample2 { x: Var },
    Add { a: Var, b: Var },
    Scale { a: Var, s: T },
    Concat { a: Var, b: Var },
    ChannelBias { x: Var, bias: Var },
    GaussRbf { x: Var, weights: Var, grid: RbfGrid, expanded: Vec<T> },
    Mse { pred: Var, target: Var },
    L1 { pred: Var, target: Var },
    WeightedSum { x: Var, weights: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recorded computation graph. Nodes only ever reference earlier nodes, so
/// the graph is acyclic by construction.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient written by the last [`Tape::backward`] call, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<T>> {
        self.nodes[v.0].value.take_grad()
    }

    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite output from {}", op_name(&op))));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Cross-correlation of `input[c_in,h,w]` with `kernel[c_out,c_in,kh,kw]`
    /// under zero padding.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (c_in, h, w) = self.value(input).chw()?;
        let kshape = self.value(kernel).shape().to_vec();
        let [c_out, kc, kh, kw] = kshape[..] else {
            return Err(Error::dim(format!("kernel must be 4-d, got {kshape:?}")));
        };
        if kc != c_in {
            return Err(Error::dim(format!("kernel expects {kc} input channels, got {c_in}")));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::dim(format!("kernel size {kh}x{kw} must be odd")));
        }
        if stride == 0 {
            return Err(Error::dim("stride must be >= 1"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::dim("kernel larger than padded input"));
        }
        if cfg!(debug_assertions) && !self.value(input).is_finite() {
            return Err(Error::Numeric("non-finite conv2d input".into()));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom { c_in, h, w, kh, kw, stride, pad, oh, ow };
        let mut cols = vec![T::zero(); geom.col_rows() * geom.col_cols()];
        kernels::im2col(self.value(input).data(), &geom, &mut cols);
        let mut out = vec![T::zero(); c_out * oh * ow];
        T::gemm(
            c_out,
            geom.col_rows(),
            geom.col_cols(),
            T::one(),
            self.value(kernel).data(),
            false,
            &cols,
            false,
            T::zero(),
            &mut out,
        );
        let value = Tensor::new(&[c_out, oh, ow], out)?;
        self.push(value, Op::Conv2d { input, kernel, geom, cols })
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * kernels::logistic(v)).collect();
        let value = Tensor::new(xv.shape(), data)?;
        self.push(value, Op::Silu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| kernels::logistic(v)).collect();
        let value = Tensor::new(xv.shape(), data)?;
        self.push(value, Op::Sigmoid { x })
    }

    /// 2x2 mean pooling.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(format!("cannot 2x-downsample odd size {h}x{w}")));
        }
        let out = kernels::block_mean(self.value(x).data(), c, (h, w), 2);
        let value = Tensor::new(&[c, h / 2, w / 2], out)?;
        self.push(value, Op::AvgPool2 { x })
    }

    /// 2x bilinear upsampling with half-pixel centres.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let out = kernels::resize_bilinear(self.value(x).data(), c, (h, w), (2 * h, 2 * w));
        let value = Tensor::new(&[c, 2 * h, 2 * w], out)?;
        self.push(value, Op::Upsample2 { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(format!("add: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape(), data)?;
        self.push(value, Op::Add { a, b })
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x * s).collect();
        let value = Tensor::new(av.shape(), data)?;
        self.push(value, Op::Scale { a, s })
    }

    /// Stack two `[c,h,w]` maps along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::dim(format!("concat: spatial {ha}x{wa} vs {hb}x{wb}")));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new(&[ca + cb, ha, wa], data)?;
        self.push(value, Op::Concat { a, b })
    }

    /// Adds `bias[c]` to every pixel of channel `c`.
    pub fn channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if self.value(bias).len() != c {
            return Err(Error::dim("bias length must equal channel count"));
        }
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for (ch, plane) in data.chunks_mut(h * w).enumerate() {
            for v in plane {
                *v = *v + b[ch];
            }
        }
        let value = Tensor::new(&[c, h, w], data)?;
        self.push(value, Op::ChannelBias { x, bias })
    }

    /// Pixelwise Gaussian-RBF expansion of each channel followed by a shared
    /// linear map `weights[c_out, c_in * n_centers]`.
    pub fn gauss_rbf(&mut self, x: Var, weights: Var, grid: &RbfGrid) -> Result<Var> {
        let (c_in, h, w) = self.value(x).chw()?;
        let nc = grid.len();
        let wshape = self.value(weights).shape().to_vec();
        let [c_out, cols] = wshape[..] else {
            return Err(Error::dim(format!("rbf weights must be 2-d, got {wshape:?}")));
        };
        if cols != c_in * nc {
            return Err(Error::dim(format!("rbf weights have {cols} columns, expected {c_in}*{nc}")));
        }
        let hw = h * w;
        let mut expanded = vec![T::zero(); c_in * nc * hw];
        let xd = self.value(x).data();
        let mut basis = vec![T::zero(); nc];
        for ci in 0..c_in {
            let plane = &xd[ci * hw..(ci + 1) * hw];
            for (p, &v) in plane.iter().enumerate() {
                kernels::rbf_row(v, grid, &mut basis);
                for (j, &b) in basis.iter().enumerate() {
                    expanded[(ci * nc + j) * hw + p] = b;
                }
            }
        }
        let mut out = vec![T::zero(); c_out * hw];
        T::gemm(
            c_out,
            c_in * nc,
            hw,
            T::one(),
            self.value(weights).data(),
            false,
            &expanded,
            false,
            T::zero(),
            &mut out,
        );
        let value = Tensor::new(&[c_out, h, w], out)?;
        self.push(value, Op::GaussRbf { x, weights, grid: grid.clone(), expanded })
    }

    /// Mean squared error, a scalar node.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::dim(format!("loss: {:?} vs {:?}", p.shape(), t.shape())));
        }
        let n = T::from_usize(p.len()).unwrap();
        let s: T = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        self.push(Tensor::scalar(s / n), Op::Mse { pred, target })
    }

    /// Mean absolute error, a scalar node.
    pub fn l1(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::dim(format!("loss: {:?} vs {:?}", p.shape(), t.shape())));
        }
        let n = T::from_usize(p.len()).unwrap();
        let s: T = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b).abs()).sum();
        self.push(Tensor::scalar(s / n), Op::L1 { pred, target })
    }

    /// `sum_i x_i * weights_i` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        if weights.len() != self.value(x).len() {
            return Err(Error::dim("weighted_sum: length mismatch"));
        }
        let s: T = self.value(x).data().iter().zip(&weights).map(|(&a, &b)| a * b).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum { x, weights })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        self.weighted_sum(x, vec![T::one(); n])
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::dim("backward root must be a scalar"));
        }
        self.backward_with_seed(root, vec![T::one()])
    }

    /// Reverse pass seeded with an explicit output cotangent.
    pub fn backward_with_seed(&mut self, root: Var, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.value(root).len() {
            return Err(Error::dim("seed length must match root"));
        }
        for node in &mut self.nodes {
            node.value.take_grad();
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let Some(g) = g {
                if cfg!(debug_assertions) && g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric("non-finite gradient".into()));
                }
                node.value.set_grad(g)?;
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, geom, cols } => {
                let kv = self.value(*kernel);
                let c_out = kv.shape()[0];
                let (rows, n) = (geom.col_rows(), geom.col_cols());
                let mut dk = vec![T::zero(); c_out * rows];
                T::gemm(c_out, n, rows, T::one(), g, false, cols, true, T::zero(), &mut dk);
                accumulate(grads, *kernel, dk);
                let mut dcols = vec![T::zero(); rows * n];
                T::gemm(rows, c_out, n, T::one(), kv.data(), true, g, false, T::zero(), &mut dcols);
                let mut dx = vec![T::zero(); geom.c_in * geom.h * geom.w];
                kernels::col2im(&dcols, geom, &mut dx);
                accumulate(grads, *input, dx);
            }
            Op::Silu { x } => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gy)| {
                        let s = kernels::logistic(v);
                        gy * s * (T::one() + v * (T::one() - s))
                    })
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let dx = node.value.data().iter().zip(g).map(|(&y, &gy)| gy * y * (T::one() - y)).collect();
                accumulate(grads, *x, dx);
            }
            Op::AvgPool2 { x } => {
                let (c, h, w) = self.value(*x).chw()?;
                let (oh, ow) = (h / 2, w / 2);
                let q = T::from_f64_lossy(0.25);
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            dx[(ch * h + y) * w + xx] = g[(ch * oh + y / 2) * ow + xx / 2] * q;
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Upsample2 { x } => {
                let (c, h, w) = self.value(*x).chw()?;
                let dx = kernels::resize_bilinear_adjoint(g, c, (h, w), (2 * h, 2 * w));
                accumulate(grads, *x, dx);
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, g.to_vec());
                accumulate(grads, *b, g.to_vec());
            }
            Op::Scale { a, s } => {
                accumulate(grads, *a, g.iter().map(|&v| v * *s).collect());
            }
            Op::Concat { a, b } => {
                let na = self.value(*a).len();
                accumulate(grads, *a, g[..na].to_vec());
                accumulate(grads, *b, g[na..].to_vec());
            }
            Op::ChannelBias { x, bias } => {
                let c = self.value(*bias).len();
                let hw = g.len() / c;
                let db = g.chunks(hw).map(|p| p.iter().copied().sum()).collect();
                accumulate(grads, *bias, db);
                accumulate(grads, *x, g.to_vec());
            }
            Op::GaussRbf { x, weights, grid, expanded } => {
                let (c_in, h, w) = self.value(*x).chw()?;
                let hw = h * w;
                let nc = grid.len();
                let wv = self.value(*weights);
                let c_out = wv.shape()[0];
                let k = c_in * nc;
                let mut dw = vec![T::zero(); c_out * k];
                T::gemm(c_out, hw, k, T::one(), g, false, expanded, true, T::zero(), &mut dw);
                accumulate(grads, *weights, dw);
                let mut de = vec![T::zero(); k * hw];
                T::gemm(k, c_out, hw, T::one(), wv.data(), true, g, false, T::zero(), &mut de);
                let two_inv_s2 = T::from_f64_lossy(2.0 / (grid.sigma() * grid.sigma()));
                let xd = self.value(*x).data();
                let mut dx = vec![T::zero(); c_in * hw];
                for ci in 0..c_in {
                    let plane = &xd[ci * hw..(ci + 1) * hw];
                    let dplane = &mut dx[ci * hw..(ci + 1) * hw];
                    for (j, &mu) in grid.centers().iter().enumerate() {
                        let mu = T::from_f64_lossy(mu);
                        let r = (ci * nc + j) * hw;
                        let e = &expanded[r..r + hw];
                        let d = &de[r..r + hw];
                        for p in 0..hw {
                            dplane[p] = dplane[p] - d[p] * e[p] * two_inv_s2 * (plane[p] - mu);
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let scale = g[0] * T::from_f64_lossy(2.0 / p.len() as f64);
                let dp: Vec<T> = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * scale).collect();
                let dt = dp.iter().map(|&v| -v).collect();
                accumulate(grads, *pred, dp);
                accumulate(grads, *target, dt);
            }
            Op::L1 { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let scale = g[0] * T::from_f64_lossy(1.0 / p.len() as f64);
                let dp: Vec<T> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| {
                        let d = a - b;
                        if d > T::zero() {
                            scale
                        } else if d < T::zero() {
                            -scale
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let dt = dp.iter().map(|&v| -v).collect();
                accumulate(grads, *pred, dp);
                accumulate(grads, *target, dt);
            }
            Op::WeightedSum { x, weights } => {
                accumulate(grads, *x, weights.iter().map(|&w| w * g[0]).collect());
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>) {
    match &mut grads[v.0] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a = *a + b;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::Silu { .. } => "silu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::AvgPool2 { .. } => "avg_pool2",
        Op::Upsample2 { .. } => "upsample2",
        Op::Add { .. } => "add",
        Op::Scale { .. } => "scale",
        Op::Concat { .. } => "concat",
        Op::ChannelBias { .. } => "channel_bias",
        Op::GaussRbf { .. } => "gauss_rbf",
        Op::Mse { .. } => "mse",
        Op::L1 { .. } => "l1",
        Op::WeightedSum { .. } => "weighted_sum",
    }
}
