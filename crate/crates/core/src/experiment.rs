//! Desk-scale end-to-end experiment: simulate head phantoms, train the
//! network, correct the held-out phantom and compare against the
//! kernel-superposition baseline and the scatter-free reference.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{ProjectionStack, Volume};
use crate::error::{Error, Result};
use crate::geometry::ConeBeamGeometry;
use crate::metrics::{evaluate_stacks, evaluate_volumes, rmse, EvalReport, RoiSpec};
use crate::net::GKanUNetModel;
use crate::physics::scatter::{measured, spr, synthesize_scatter};
use crate::physics::{add_poisson_noise, forward_project, make_head_phantom, MaterialLabel, Phantom};
use crate::recon::{fdk_reconstruct, log_transform, median_denoise, mu_to_hu};
use crate::train::{
    correct_with_scatter, fit_sks, make_pairs, sks_baseline, train_with_progress, Checkpoint, SksParams,
};

/// Photon stacks of one phantom. `scatter` is the expected (noise-free)
/// scatter signal, `measured` a Poisson draw of primary plus scatter, and
/// `primary = measured - scatter` the projection an ideal scatter
/// correction would produce; `measured = primary + scatter` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedStacks {
    pub primary: ProjectionStack,
    pub scatter: ProjectionStack,
    pub measured: ProjectionStack,
}

pub fn simulate(
    phantom: &Phantom,
    geometry: &ConeBeamGeometry,
    config: &RunConfig,
    noise_seed: u64,
) -> Result<SimulatedStacks> {
    let clean = forward_project(phantom, geometry, phantom.energy_kev)?;
    let scatter = synthesize_scatter(&clean, geometry.i0, &config.scatter, geometry.pitch_mm)?;
    let measured = add_poisson_noise(&measured(&clean, &scatter)?, noise_seed)?;
    let primary = measured.zip_map(&scatter, |m, s| m - s)?;
    Ok(SimulatedStacks { primary, scatter, measured })
}

/// Head phantom `index` of the run (training phantoms first).
pub fn run_phantom(config: &RunConfig, index: usize) -> Result<Phantom> {
    let [nx, ny, nz] = config.phantom.dims;
    make_head_phantom(config.phantom_seed(index), (nx, ny, nz), config.phantom.voxel_mm, &config.phantom.materials)
}

/// Log-transform and reconstruct an already denoised stack, in HU.
pub fn reconstruct_hu(stack: &ProjectionStack, geometry: &ConeBeamGeometry, config: &RunConfig) -> Result<Volume> {
    let g = log_transform(stack, geometry.i0)?;
    let mu = fdk_reconstruct(&g, geometry, &config.recon.grid)?;
    mu_to_hu(&mu, config.phantom.materials.mu_water())
}

/// Every `step`-th view of a stack.
pub fn subsample_views(stack: &ProjectionStack, step: usize) -> ProjectionStack {
    let step = step.max(1);
    let data: Vec<f32> = stack.views().step_by(step).flatten().copied().collect();
    let n = stack.n_views.div_ceil(step);
    ProjectionStack { n_views: n, rows: stack.rows, cols: stack.cols, data, geometry: None }
}

/// Views per training stack used to fit the baseline.
pub const SKS_FIT_VIEW_STEP: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewRmse {
    pub view: usize,
    pub gkan: f64,
    pub sks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSummary {
    pub roi: RoiSpec,
    pub reference_mean: f64,
    pub uncorrected_mean: f64,
    pub gkan_mean: f64,
    pub sks_mean: f64,
}

impl RoiSummary {
    pub fn uncorrected_error(&self) -> f64 {
        self.uncorrected_mean - self.reference_mean
    }

    pub fn gkan_error(&self) -> f64 {
        self.gkan_mean - self.reference_mean
    }

    pub fn sks_error(&self) -> f64 {
        self.sks_mean - self.reference_mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub phantom: usize,
    pub scatter_rmse: Vec<ViewRmse>,
    pub scatter_gkan: EvalReport,
    pub scatter_sks: EvalReport,
    pub volume_uncorrected: EvalReport,
    pub volume_gkan: EvalReport,
    pub volume_sks: EvalReport,
    pub roi: Vec<RoiSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub mean_peak_spr: f64,
    pub loss_history: Vec<f32>,
    pub epoch_loss: Vec<f64>,
    pub sks: SksParams,
    pub validation: Vec<ValidationResult>,
}

/// Require soft tissue under every ROI voxel of the phantom.
fn check_roi_tissue(phantom: &Phantom, roi: &RoiSpec) -> Result<()> {
    let [cx, cy] = roi.center;
    for y in 0..phantom.ny {
        for x in 0..phantom.nx {
            if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= roi.radius * roi.radius
                && phantom.labels[phantom.index(x, y, roi.slice)] != MaterialLabel::SoftTissue
            {
                return Err(Error::Data(format!("ROI {roi:?} covers non-soft-tissue voxels")));
            }
        }
    }
    Ok(())
}

/// Mean per-stack peak SPR of a set of simulations.
pub fn mean_peak_spr(stacks: &[SimulatedStacks], i0: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in stacks {
        total += spr(&s.scatter, &s.primary, i0)?.peak;
    }
    Ok(total / stacks.len() as f64)
}

/// Simulate every phantom of the run.
pub fn simulate_all(config: &RunConfig, log: &mut impl FnMut(&str)) -> Result<(Vec<Phantom>, Vec<SimulatedStacks>)> {
    let geometry = config.geometry.build()?;
    let total = config.phantom.train_count + config.phantom.validation_count;
    let mut phantoms = Vec::with_capacity(total);
    let mut sims = Vec::with_capacity(total);
    for i in 0..total {
        let p = run_phantom(config, i)?;
        sims.push(simulate(&p, &geometry, config, config.noise_seed(i))?);
        phantoms.push(p);
        log(&format!("simulated phantom {}/{total}", i + 1));
    }
    Ok((phantoms, sims))
}

pub fn run_experiment(config: &RunConfig, mut log: impl FnMut(&str)) -> Result<(ExperimentReport, Checkpoint)> {
    config.validate()?;
    if config.phantom.validation_count == 0 {
        return Err(Error::config("the experiment needs at least one validation phantom"));
    }
    let geometry = config.geometry.build()?;
    let i0 = geometry.i0;
    let (phantoms, sims) = simulate_all(config, &mut log)?;
    let n_train = config.phantom.train_count;
    let (train_sims, val_sims) = sims.split_at(n_train);
    let spr_mean = mean_peak_spr(&sims, i0)?;
    log(&format!("mean peak SPR {spr_mean:.3}"));

    let mut pairs = Vec::new();
    for s in train_sims {
        pairs.extend(make_pairs(&s.measured, &s.scatter, i0, config.network.input_size)?);
    }
    let model = GKanUNetModel::<f32>::build(&config.network, config.init_seed())?;
    log(&format!("training on {} pairs, {} parameters", pairs.len(), model.param_count()));
    let mut epoch_loss = Vec::with_capacity(config.train.epochs);
    let ckpt = train_with_progress(model, &pairs, &config.train, |e, l| {
        epoch_loss.push(l);
        log(&format!("epoch {:>3} loss {l:.6e}", e + 1));
    })?;
    drop(pairs);

    let fit_m: Vec<ProjectionStack> =
        train_sims.iter().map(|s| subsample_views(&s.measured, SKS_FIT_VIEW_STEP)).collect();
    let fit_s: Vec<ProjectionStack> =
        train_sims.iter().map(|s| subsample_views(&s.scatter, SKS_FIT_VIEW_STEP)).collect();
    let sks = fit_sks(
        &fit_m.iter().collect::<Vec<_>>(),
        &fit_s.iter().collect::<Vec<_>>(),
        i0,
        geometry.pitch_mm,
        SksParams::default(),
    )?;
    log(&format!("SKS fit sigma {:.2} mm, a {:.4}, k {:.3}", sks.sigma_mm, sks.amplitude, sks.exponent));

    let rois = config.eval.rois_for(&config.recon.grid);
    let window = config.recon.denoise_window;
    let mut validation = Vec::new();
    for (k, sim) in val_sims.iter().enumerate() {
        let index = n_train + k;
        for roi in &rois {
            check_roi_tissue(&phantoms[index], roi)?;
        }
        let gkan_scatter = crate::net::infer_native(&ckpt.model, &sim.measured, i0)?;
        let sks_scatter = sks_baseline(&sim.measured, i0, &sks, geometry.pitch_mm)?;
        let scatter_rmse = gkan_scatter
            .views()
            .zip(sks_scatter.views())
            .zip(sim.scatter.views())
            .enumerate()
            .map(|(view, ((g, s), t))| Ok(ViewRmse { view, gkan: rmse(g, t)?, sks: rmse(s, t)? }))
            .collect::<Result<Vec<_>>>()?;

        let reference = reconstruct_hu(&median_denoise(&sim.primary, window)?, &geometry, config)?;
        let uncorrected = reconstruct_hu(&median_denoise(&sim.measured, window)?, &geometry, config)?;
        let gkan = reconstruct_hu(&correct_with_scatter(&sim.measured, &gkan_scatter, i0, window)?, &geometry, config)?;
        let sks_vol =
            reconstruct_hu(&correct_with_scatter(&sim.measured, &sks_scatter, i0, window)?, &geometry, config)?;
        let range = config.eval.hu_data_range;
        let volume_uncorrected = evaluate_volumes(&uncorrected, &reference, &rois, range)?;
        let volume_gkan = evaluate_volumes(&gkan, &reference, &rois, range)?;
        let volume_sks = evaluate_volumes(&sks_vol, &reference, &rois, range)?;
        let roi = rois
            .iter()
            .enumerate()
            .map(|(r, spec)| RoiSummary {
                roi: *spec,
                reference_mean: volume_gkan.roi[r].reference_mean,
                uncorrected_mean: volume_uncorrected.roi[r].mean,
                gkan_mean: volume_gkan.roi[r].mean,
                sks_mean: volume_sks.roi[r].mean,
            })
            .collect();
        validation.push(ValidationResult {
            phantom: index,
            scatter_rmse,
            scatter_gkan: evaluate_stacks(&gkan_scatter, &sim.scatter, None)?,
            scatter_sks: evaluate_stacks(&sks_scatter, &sim.scatter, None)?,
            volume_uncorrected,
            volume_gkan,
            volume_sks,
            roi,
        });
    }
    let report = ExperimentReport {
        mean_peak_spr: spr_mean,
        loss_history: ckpt.loss_history.clone(),
        epoch_loss,
        sks,
        validation,
    };
    Ok((report, ckpt))
}

impl ExperimentReport {
    /// Plain-text summary of the validation results.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "mean peak SPR {:.3}\nSKS sigma {:.2} mm, a {:.4}, k {:.3}\nfinal epoch loss {:.6e}\n",
            self.mean_peak_spr,
            self.sks.sigma_mm,
            self.sks.amplitude,
            self.sks.exponent,
            self.epoch_loss.last().copied().unwrap_or(f64::NAN)
        );
        for v in &self.validation {
            let worse = v.scatter_rmse.iter().filter(|r| r.gkan >= r.sks).count();
            out += &format!(
                "phantom {}: scatter RMSE gkan {:.2} vs sks {:.2} photons ({} views where gkan is not better)\n",
                v.phantom, v.scatter_gkan.global.rmse, v.scatter_sks.global.rmse, worse
            );
            out += &format!(
                "  volume PSNR uncorrected {:.2} dB, gkan {:.2} dB, sks {:.2} dB\n",
                v.volume_uncorrected.global.psnr, v.volume_gkan.global.psnr, v.volume_sks.global.psnr
            );
            for r in &v.roi {
                out += &format!(
                    "  ROI reference {:.1} HU; error uncorrected {:.1}, gkan {:.1}, sks {:.1} HU\n",
                    r.reference_mean,
                    r.uncorrected_error(),
                    r.gkan_error(),
                    r.sks_error()
                );
            }
        }
        out
    }
}
