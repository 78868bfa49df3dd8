//! Gaussian-RBF Kolmogorov-Arnold layers.
//!
//! Each KAN edge carries the learnable univariate function
//!
//! ```text
//! phi(x) = w1 * silu(x) + w2 * sum_j w_j * exp(-(x - mu_j)^2 / sigma^2)
//! ```
//!
//! with the centres `mu_j` and the shared scale `sigma` fixed at
//! construction. Note the exponent divides by `sigma^2`, not `2 sigma^2`.
//!
//! On feature maps the same idea becomes a two-path block: a convolution of
//! the SiLU-activated input plus a pixelwise RBF expansion of the channel
//! vector followed by a shared linear projection.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Fixed Gaussian centres evenly spaced on `[-r, r]` with a shared scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfGrid {
    centers: Vec<f64>,
    sigma: f64,
    half_range: f64,
}

impl RbfGrid {
    pub fn new(n_centers: usize, half_range: f64, sigma: f64) -> Result<Self> {
        if n_centers < 2 {
            return Err(Error::config("RBF grid needs at least 2 centres"));
        }
        if !(half_range > 0.0) || !(sigma > 0.0) {
            return Err(Error::config("RBF half-range and sigma must be positive"));
        }
        let step = 2.0 * half_range / (n_centers - 1) as f64;
        let centers = (0..n_centers).map(|j| -half_range + step * j as f64).collect();
        Ok(RbfGrid { centers, sigma, half_range })
    }

    /// `n_centers` centres on `[-1, 1]` with sigma equal to the centre spacing.
    pub fn with_spacing_sigma(n_centers: usize) -> Result<Self> {
        if n_centers < 2 {
            return Err(Error::config("RBF grid needs at least 2 centres"));
        }
        Self::new(n_centers, 1.0, 2.0 / (n_centers - 1) as f64)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn half_range(&self) -> f64 {
        self.half_range
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_range / (self.centers.len() - 1) as f64
    }
}

impl Default for RbfGrid {
    fn default() -> Self {
        Self::with_spacing_sigma(8).expect("valid default grid")
    }
}

/// `exp(-(x - mu_j)^2 / sigma^2)` for every centre.
pub fn rbf_basis(x: f64, grid: &RbfGrid) -> Vec<f64> {
    let inv = 1.0 / (grid.sigma * grid.sigma);
    grid.centers.iter().map(|&mu| (-(x - mu) * (x - mu) * inv).exp()).collect()
}

pub fn silu(x: f64) -> f64 {
    x * crate::autodiff::kernels::logistic(x)
}

pub fn silu_derivative(x: f64) -> f64 {
    let s = crate::autodiff::kernels::logistic(x);
    s * (1.0 + x * (1.0 - s))
}

/// Learnable parameters of one KAN edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanEdgeParams {
    pub w1: f64,
    pub w2: f64,
    pub weights: Vec<f64>,
}

impl KanEdgeParams {
    /// Initial edge: `w1 = 1`, `w2 = 0.1`, zero RBF weights.
    pub fn initial(n_centers: usize) -> Self {
        KanEdgeParams { w1: 1.0, w2: 0.1, weights: vec![0.0; n_centers] }
    }

    pub fn zeroed(n_centers: usize) -> Self {
        KanEdgeParams { w1: 0.0, w2: 0.0, weights: vec![0.0; n_centers] }
    }
}

/// Gradient of [`kan_phi`] with respect to its input and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KanPhiGrad {
    pub dx: f64,
    pub dw1: f64,
    pub dw2: f64,
    pub dweights: Vec<f64>,
}

pub fn kan_phi(x: f64, edge: &KanEdgeParams, grid: &RbfGrid) -> f64 {
    debug_assert_eq!(edge.weights.len(), grid.len());
    let bf: f64 = rbf_basis(x, grid).iter().zip(&edge.weights).map(|(b, w)| b * w).sum();
    edge.w1 * silu(x) + edge.w2 * bf
}

pub fn kan_phi_grad(x: f64, edge: &KanEdgeParams, grid: &RbfGrid) -> KanPhiGrad {
    let basis = rbf_basis(x, grid);
    let inv = 1.0 / (grid.sigma * grid.sigma);
    let mut bf = 0.0;
    let mut dbf = 0.0;
    for ((&b, &w), &mu) in basis.iter().zip(&edge.weights).zip(&grid.centers) {
        bf += w * b;
        dbf += w * b * (-2.0 * (x - mu) * inv);
    }
    KanPhiGrad {
        dx: edge.w1 * silu_derivative(x) + edge.w2 * dbf,
        dw1: silu(x),
        dw2: bf,
        dweights: basis.iter().map(|b| edge.w2 * b).collect(),
    }
}

/// Edge functions of a KAN layer, stored row-major as `[d_out][d_in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanLayerParams {
    pub d_in: usize,
    pub d_out: usize,
    pub edges: Vec<KanEdgeParams>,
}

impl KanLayerParams {
    pub fn new(d_in: usize, d_out: usize, edges: Vec<KanEdgeParams>) -> Result<Self> {
        if edges.len() != d_in * d_out {
            return Err(Error::dim(format!("{} edges for a {d_out}x{d_in} layer", edges.len())));
        }
        Ok(KanLayerParams { d_in, d_out, edges })
    }

    pub fn edge(&self, out: usize, inp: usize) -> &KanEdgeParams {
        &self.edges[out * self.d_in + inp]
    }
}

/// Output `k` is `sum_i phi_{k,i}(x_i)`.
pub fn kan_layer(x: &[f64], params: &KanLayerParams, grid: &RbfGrid) -> Result<Vec<f64>> {
    if x.len() != params.d_in {
        return Err(Error::dim(format!("kan_layer: input {} vs d_in {}", x.len(), params.d_in)));
    }
    if params.edges.iter().any(|e| e.weights.len() != grid.len()) {
        return Err(Error::dim("edge weight count does not match grid"));
    }
    Ok((0..params.d_out)
        .map(|k| x.iter().enumerate().map(|(i, &xi)| kan_phi(xi, params.edge(k, i), grid)).sum())
        .collect())
}

/// Vector-Jacobian product of [`kan_layer`]: gradients of `<dy, f(x)>` with
/// respect to `x` and to every edge.
pub fn kan_layer_vjp(
    x: &[f64],
    params: &KanLayerParams,
    grid: &RbfGrid,
    dy: &[f64],
) -> Result<(Vec<f64>, Vec<KanPhiGrad>)> {
    if x.len() != params.d_in || dy.len() != params.d_out {
        return Err(Error::dim("kan_layer_vjp: dimension mismatch"));
    }
    let mut dx = vec![0.0; params.d_in];
    let mut edges = Vec::with_capacity(params.edges.len());
    for (k, &g) in dy.iter().enumerate() {
        for (i, &xi) in x.iter().enumerate() {
            let mut e = kan_phi_grad(xi, params.edge(k, i), grid);
            dx[i] += g * e.dx;
            e.dx *= g;
            e.dw1 *= g;
            e.dw2 *= g;
            e.dweights.iter_mut().for_each(|w| *w *= g);
            edges.push(e);
        }
    }
    Ok((dx, edges))
}

/// Pixelwise RBF map on a feature tensor; see [`Tape::gauss_rbf`].
pub fn gauss_rbf_map<T: Real>(tape: &mut Tape<T>, features: Var, weights: Var, grid: &RbfGrid) -> Result<Var> {
    tape.gauss_rbf(features, weights, grid)
}

/// Learnable tensors of one two-path KAN block.
#[derive(Debug, Clone, PartialEq)]
pub struct KanBlockParams<T> {
    /// `[c_out, c_in, k, k]`
    pub conv: Tensor<T>,
    /// `[c_out, c_in * n_centers]`
    pub rbf: Tensor<T>,
}

/// `Conv(SiLU(F)) + GaussRBF(F)` with same-padding.
pub fn kan_block<T: Real>(
    tape: &mut Tape<T>,
    features: Var,
    conv_kernel: Var,
    rbf_weights: Var,
    grid: &RbfGrid,
) -> Result<Var> {
    let kshape = tape.value(conv_kernel).shape().to_vec();
    if kshape.len() != 4 || kshape[2] != kshape[3] || kshape[2] % 2 == 0 {
        return Err(Error::dim(format!("kan_block needs a square odd kernel, got {kshape:?}")));
    }
    if tape.value(rbf_weights).shape().first() != Some(&kshape[0]) {
        return Err(Error::dim("conv and rbf paths disagree on output channels"));
    }
    let pad = (kshape[2] - 1) / 2;
    let act = tape.silu(features)?;
    let p1 = tape.conv2d(act, conv_kernel, 1, pad)?;
    let p2 = tape.gauss_rbf(features, rbf_weights, grid)?;
    tape.add(p1, p2)
}
