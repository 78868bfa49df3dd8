//! Training pairs, the scatter-fraction objective, AdamW optimisation,
//! projection correction and the kernel-superposition baseline.

mod checkpoint;
mod correct;

pub use checkpoint::Checkpoint;
pub use correct::{correct, correct_with_scatter, fit_sks, sks_baseline, SksParams, CORRECTION_WINDOW};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::ProjectionStack;
use crate::error::{Error, Result};
use crate::net::{network_input, GKanUNetModel};
use crate::resample::resize_plane;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Multiplier applied to the learning rate at `decay_at`.
    pub decay_factor: f64,
    pub decay_at: usize,
    /// Apply the decay again every this many iterations after `decay_at`.
    pub decay_every: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
            decay_factor: 0.5,
            decay_at: 3000,
            decay_every: None,
            epochs: 100,
            batch_size: 1,
            seed: 0,
            loss: LossKind::Mse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates_ok = self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0
            && self.decay_factor > 0.0;
        if !rates_ok {
            return Err(Error::config("invalid optimiser rates"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.decay_every == Some(0) {
            return Err(Error::config("decay interval must be positive"));
        }
        Ok(())
    }

    /// Learning rate in effect for the step that produces iteration `it + 1`.
    pub fn lr_at(&self, it: usize) -> f64 {
        if it < self.decay_at {
            return self.learning_rate;
        }
        let steps = match self.decay_every {
            Some(every) => 1 + (it - self.decay_at) / every,
            None => 1,
        };
        self.learning_rate * self.decay_factor.powi(steps as i32)
    }
}

/// One view at network resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    /// `min(I_m / I_0, 1)`, `size x size`.
    pub input: Vec<f32>,
    /// `I_s / I_m`, `size x size`.
    pub target: Vec<f32>,
    pub size: usize,
    /// Index of the view within its stack.
    pub view: usize,
}

/// Network-resolution pairs for every view of an aligned `(I_m, I_s)` pair.
pub fn make_pairs(
    measured: &ProjectionStack,
    scatter: &ProjectionStack,
    i0: f64,
    size: usize,
) -> Result<Vec<TrainingPair>> {
    measured.check_aligned(scatter)?;
    if !(i0 > 0.0) {
        return Err(Error::config("flat-field flux must be positive"));
    }
    if let Some(bad) = measured.data.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("measured intensity must be positive, found {bad}")));
    }
    let dims = (measured.rows, measured.cols);
    Ok(measured
        .views()
        .zip(scatter.views())
        .enumerate()
        .map(|(view, (m, s))| {
            let fraction: Vec<f32> = m.iter().zip(s).map(|(&m, &s)| s / m).collect();
            TrainingPair {
                input: network_input(m, dims, i0, size),
                target: resize_plane(&fraction, dims, (size, size)),
                size,
                view,
            }
        })
        .collect())
}

/// Pixel-mean loss averaged over the batch.
pub fn loss(pred: &[f32], target: &[f32], kind: LossKind) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::dim(format!("loss inputs have lengths {} and {}", pred.len(), target.len())));
    }
    let n = pred.len() as f64;
    let per: f64 = match kind {
        LossKind::Mse => pred.iter().zip(target).map(|(&p, &t)| (p as f64 - t as f64).powi(2)).sum(),
        LossKind::L1 => pred.iter().zip(target).map(|(&p, &t)| (p as f64 - t as f64).abs()).sum(),
    };
    Ok(per / n)
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: usize,
}

impl AdamW {
    pub fn new(shapes: impl Iterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = shapes.collect();
        AdamW {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor<f32>], grads: &[Vec<f32>], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let decay = (1.0 - lr * cfg.weight_decay) as f32;
        let (b1f, b2f) = (b1 as f32, b2 as f32);
        let step = (lr / c1) as f32;
        let inv_c2 = (1.0 / c2) as f32;
        let eps = cfg.epsilon as f32;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1f * *m + (1.0 - b1f) * g;
                *v = b2f * *v + (1.0 - b2f) * g * g;
                *w = *w * decay - step * *m / ((*v * inv_c2).sqrt() + eps);
            }
        }
    }
}

/// Loss and parameter gradients of one pair.
pub fn pair_gradients(model: &GKanUNetModel<f32>, pair: &TrainingPair, kind: LossKind) -> Result<(f64, Vec<Vec<f32>>)> {
    let s = pair.size;
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(&[1, s, s], pair.input.clone())?);
    let (out, leaves) = model.forward_tape(&mut tape, x)?;
    let t = tape.leaf(Tensor::new(&[1, s, s], pair.target.clone())?);
    let l = match kind {
        LossKind::Mse => tape.mse(out, t)?,
        LossKind::L1 => tape.l1(out, t)?,
    };
    let value = tape.value(l).data()[0] as f64;
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    tape.backward(l)?;
    let grads = leaves
        .iter()
        .zip(model.params())
        .map(|(&v, p)| tape.take_grad(v).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();
    Ok((value, grads))
}

/// Optimisation state over a fixed model.
pub struct Trainer {
    pub model: GKanUNetModel<f32>,
    pub config: TrainConfig,
    pub optimizer: AdamW,
    pub loss_history: Vec<f32>,
}

impl Trainer {
    pub fn new(model: GKanUNetModel<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(model.params().iter().map(|p| p.len()));
        Ok(Trainer { model, config, optimizer, loss_history: Vec::new() })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.train.validate()?;
        Ok(Trainer {
            optimizer: AdamW { m: ckpt.adam_m, v: ckpt.adam_v, t: ckpt.iteration },
            model: ckpt.model,
            config: ckpt.train,
            loss_history: ckpt.loss_history,
        })
    }

    pub fn iteration(&self) -> usize {
        self.optimizer.t
    }

    /// One optimiser step on a batch; returns the batch-mean loss.
    pub fn step(&mut self, batch: &[&TrainingPair]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::config("empty batch"));
        }
        let iteration = self.iteration();
        let kind = self.config.loss;
        let model = &self.model;
        let results: Vec<(f64, Vec<Vec<f32>>)> =
            batch.par_iter().map(|p| pair_gradients(model, p, kind)).collect::<Result<_>>().map_err(|e| match e {
                Error::Numeric(_) => Error::Diverged { iteration, loss: f64::NAN },
                other => other,
            })?;
        let inv = 1.0 / batch.len() as f32;
        let mut loss = 0.0;
        let mut grads: Vec<Vec<f32>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        for (l, g) in &results {
            if !l.is_finite() {
                return Err(Error::Diverged { iteration, loss: *l });
            }
            loss += l;
            for (acc, gi) in grads.iter_mut().zip(g) {
                for (a, &v) in acc.iter_mut().zip(gi) {
                    *a += v * inv;
                }
            }
        }
        let loss = loss / batch.len() as f64;
        let lr = self.config.lr_at(iteration);
        self.optimizer.step(self.model.params_mut(), &grads, lr, &self.config);
        self.loss_history.push(loss as f32);
        Ok(loss)
    }

    /// Deterministic permutation of `0..n` for `epoch`.
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// One pass over `pairs`; returns the mean step loss.
    pub fn epoch(&mut self, pairs: &[TrainingPair], epoch: usize) -> Result<f64> {
        if pairs.is_empty() {
            return Err(Error::config("no training pairs"));
        }
        let order = self.epoch_order(pairs.len(), epoch);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            total += self.step(&batch)?;
            steps += 1;
        }
        Ok(total / steps as f64)
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        Checkpoint {
            iteration: self.optimizer.t,
            adam_m: self.optimizer.m,
            adam_v: self.optimizer.v,
            model: self.model,
            train: self.config,
            loss_history: self.loss_history,
        }
    }
}

/// Train for `config.epochs` epochs, reporting each epoch's mean loss.
pub fn train_with_progress(
    model: GKanUNetModel<f32>,
    pairs: &[TrainingPair],
    config: &TrainConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<Checkpoint> {
    if pairs.is_empty() {
        return Err(Error::config("no training pairs"));
    }
    let size = model.config().input_size;
    if let Some(p) = pairs.iter().find(|p| p.size != size) {
        return Err(Error::dim(format!("pair size {} does not match network input {size}", p.size)));
    }
    let mut trainer = Trainer::new(model, config.clone())?;
    for epoch in 0..config.epochs {
        let mean = trainer.epoch(pairs, epoch)?;
        progress(epoch, mean);
    }
    Ok(trainer.into_checkpoint())
}

pub fn train(model: GKanUNetModel<f32>, pairs: &[TrainingPair], config: &TrainConfig) -> Result<Checkpoint> {
    train_with_progress(model, pairs, config, |_, _| {})
}
