//! U-shaped encoder/decoder built from two-path KAN blocks.
//!
//! Level `l` of the encoder runs one KAN block at resolution `S / 2^l`
//! (after 2x2 mean pooling for `l > 0`). Each decoder level upsamples the
//! coarser features bilinearly, concatenates the encoder skip, fuses the
//! channels with a 1x1 adapter and applies one KAN block. A 1x1 head with
//! bias and a logistic squashing produces the scatter fraction in `(0, 1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::ProjectionStack;
use crate::error::{Error, Result};
use crate::gkan::{kan_block, RbfGrid};
use crate::resample::{bilinear_plane, resize_plane};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub depth: usize,
    pub channels: Vec<usize>,
    pub input_size: usize,
    pub kernel_size: usize,
    pub rbf_centers: usize,
    pub rbf_half_range: f64,
    /// Defaults to the centre spacing when absent.
    pub rbf_sigma: Option<f64>,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            depth: 4,
            channels: vec![16, 32, 64, 128],
            input_size: 128,
            kernel_size: 3,
            rbf_centers: 8,
            rbf_half_range: 1.0,
            rbf_sigma: None,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("network depth must be >= 1"));
        }
        if self.channels.len() != self.depth {
            return Err(Error::config(format!("{} channel counts for depth {}", self.channels.len(), self.depth)));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::config("channel counts must be positive"));
        }
        let f = 1usize << (self.depth - 1);
        if self.input_size == 0 || self.input_size % f != 0 {
            return Err(Error::config(format!("input size {} not divisible by {f}", self.input_size)));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::config("kernel size must be odd"));
        }
        self.grid()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<RbfGrid> {
        match self.rbf_sigma {
            Some(s) => RbfGrid::new(self.rbf_centers, self.rbf_half_range, s),
            None => {
                if self.rbf_centers < 2 {
                    return Err(Error::config("RBF grid needs at least 2 centres"));
                }
                let spacing = 2.0 * self.rbf_half_range / (self.rbf_centers - 1) as f64;
                RbfGrid::new(self.rbf_centers, self.rbf_half_range, spacing)
            }
        }
    }

    /// Name and shape of every learnable tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = &self.channels;
        let k = self.kernel_size;
        let nc = self.rbf_centers;
        let mut out = Vec::new();
        for l in 0..self.depth {
            let c_in = if l == 0 { 1 } else { c[l - 1] };
            out.push((format!("enc{l}.conv"), vec![c[l], c_in, k, k]));
            out.push((format!("enc{l}.rbf"), vec![c[l], c_in * nc]));
        }
        for l in (0..self.depth - 1).rev() {
            out.push((format!("dec{l}.adapter"), vec![c[l], c[l] + c[l + 1], 1, 1]));
            out.push((format!("dec{l}.conv"), vec![c[l], c[l], k, k]));
            out.push((format!("dec{l}.rbf"), vec![c[l], c[l] * nc]));
        }
        out.push(("head.weight".into(), vec![1, c[0], 1, 1]));
        out.push(("head.bias".into(), vec![1]));
        out
    }
}

/// Learnable tensors plus the fixed hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GKanUNetModel<T> {
    config: UNetConfig,
    grid: RbfGrid,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

impl<T: Real> GKanUNetModel<T> {
    /// Deterministic initialisation from `seed`.
    ///
    /// Convolutions and adapters draw from `U(-b, b)` with
    /// `b = sqrt(3 / fan_in)`; RBF weights from `0.1 * U(-1, 1) / sqrt(fan_in)`;
    /// the head bias starts at zero.
    pub fn build(config: &UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in config.param_shapes() {
            let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
            let bound = if name.ends_with(".rbf") {
                0.1 / (fan_in as f64).sqrt()
            } else if name == "head.bias" {
                0.0
            } else {
                (3.0 / fan_in as f64).sqrt()
            };
            let t = Tensor::from_fn(&shape, |_| {
                if bound == 0.0 {
                    T::zero()
                } else {
                    T::from_f64_lossy(rng.random_range(-bound..bound))
                }
            });
            names.push(name);
            params.push(t);
        }
        Ok(GKanUNetModel { config: config.clone(), grid: config.grid()?, names, params })
    }

    /// Assemble a model from explicit tensors (e.g. a loaded checkpoint).
    pub fn from_params(config: &UNetConfig, params: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::dim(format!("expected {} parameter tensors, got {}", shapes.len(), params.len())));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            if p.shape() != &shape[..] {
                return Err(Error::dim(format!("{name}: expected {shape:?}, got {:?}", p.shape())));
            }
        }
        Ok(GKanUNetModel {
            config: config.clone(),
            grid: config.grid()?,
            names: shapes.into_iter().map(|(n, _)| n).collect(),
            params,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn grid(&self) -> &RbfGrid {
        &self.grid
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> GKanUNetModel<U> {
        GKanUNetModel {
            config: self.config.clone(),
            grid: self.grid.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|p| p.cast()).collect(),
        }
    }

    /// Record the forward pass on `tape`. Returns the output node and the
    /// leaf node of every parameter (same order as [`Self::params`]).
    pub fn forward_tape(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Vec<Var>)> {
        let s = self.config.input_size;
        if tape.value(x).shape() != [1, s, s] {
            return Err(Error::dim(format!("network expects [1,{s},{s}], got {:?}", tape.value(x).shape())));
        }
        let leaves: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let depth = self.config.depth;
        let mut next = leaves.iter().copied();
        let mut take = || next.next().expect("parameter layout");

        let mut skips = Vec::with_capacity(depth);
        let mut h = x;
        for l in 0..depth {
            if l > 0 {
                h = tape.avg_pool2(h)?;
            }
            let (conv, rbf) = (take(), take());
            h = kan_block(tape, h, conv, rbf, &self.grid)?;
            skips.push(h);
        }
        for l in (0..depth - 1).rev() {
            let (adapter, conv, rbf) = (take(), take(), take());
            let up = tape.upsample2(h)?;
            let cat = tape.concat(up, skips[l])?;
            let fused = tape.conv2d(cat, adapter, 1, 0)?;
            h = kan_block(tape, fused, conv, rbf, &self.grid)?;
        }
        let (hw, hb) = (take(), take());
        let logits = tape.conv2d(h, hw, 1, 0)?;
        let logits = tape.channel_bias(logits, hb)?;
        let out = tape.sigmoid(logits)?;
        Ok((out, leaves))
    }

    /// Scatter-fraction map for one normalised `[1, S, S]` input.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let (out, _) = self.forward_tape(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }
}

/// Scatter estimate in photons at the native detector resolution.
///
/// Per view: `clamp(I_m / I_0, 0, 1)`, resample to the network size,
/// predict the scatter fraction, resample back bilinearly, multiply by `I_m`.
pub fn infer_native(model: &GKanUNetModel<f32>, measured: &ProjectionStack, i0: f64) -> Result<ProjectionStack> {
    if !(i0 > 0.0) {
        return Err(Error::config("flat-field flux must be positive"));
    }
    let s = model.config().input_size;
    let (rows, cols) = (measured.rows, measured.cols);
    let views: Vec<Result<Vec<f32>>> = measured
        .views()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|view| {
            let fraction = predict_fraction(model, view, (rows, cols), i0)?;
            let native = bilinear_plane(&fraction, (s, s), (rows, cols));
            Ok(native.iter().zip(view).map(|(&f, &m)| f * m).collect())
        })
        .collect();
    let mut data = Vec::with_capacity(measured.data.len());
    for v in views {
        data.extend(v?);
    }
    Ok(ProjectionStack::new(measured.n_views, rows, cols, data)?.with_geometry(measured.geometry.clone()))
}

/// Network-resolution normalised input for one view.
pub fn network_input(view: &[f32], (rows, cols): (usize, usize), i0: f64, size: usize) -> Vec<f32> {
    let ratio: Vec<f32> = view.iter().map(|&m| (m as f64 / i0).clamp(0.0, 1.0) as f32).collect();
    resize_plane(&ratio, (rows, cols), (size, size))
}

/// Network-resolution scatter fraction for one native view.
pub fn predict_fraction(model: &GKanUNetModel<f32>, view: &[f32], dims: (usize, usize), i0: f64) -> Result<Vec<f32>> {
    let s = model.config().input_size;
    let input = Tensor::new(&[1, s, s], network_input(view, dims, i0, s))?;
    Ok(model.forward(&input)?.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> UNetConfig {
        UNetConfig { depth: 2, channels: vec![3, 4], input_size: 8, ..UNetConfig::default() }
    }

    #[test]
    fn config_validation() {
        UNetConfig::default().validate().unwrap();
        let mut c = tiny();
        c.channels = vec![3];
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.input_size = 9;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.kernel_size = 2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn same_seed_same_model() {
        let a = GKanUNetModel::<f32>::build(&tiny(), 7).unwrap();
        let b = GKanUNetModel::<f32>::build(&tiny(), 7).unwrap();
        let c = GKanUNetModel::<f32>::build(&tiny(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn depth_one_has_single_block() {
        let cfg = UNetConfig { depth: 1, channels: vec![4], input_size: 6, ..UNetConfig::default() };
        let m = GKanUNetModel::<f64>::build(&cfg, 0).unwrap();
        assert_eq!(m.names(), &["enc0.conv", "enc0.rbf", "head.weight", "head.bias"].map(String::from));
        let y = m.forward(&Tensor::full(&[1, 6, 6], 0.5)).unwrap();
        assert_eq!(y.shape(), &[1, 6, 6]);
    }

    #[test]
    fn forward_rejects_wrong_resolution() {
        let m = GKanUNetModel::<f32>::build(&tiny(), 0).unwrap();
        assert!(m.forward(&Tensor::zeros(&[1, 16, 16])).is_err());
    }

    #[test]
    fn infer_rejects_nonpositive_flux() {
        let m = GKanUNetModel::<f32>::build(&tiny(), 0).unwrap();
        let s = ProjectionStack::filled(1, 8, 8, 1.0);
        assert!(matches!(infer_native(&m, &s, 0.0), Err(Error::Config(_))));
    }
}
