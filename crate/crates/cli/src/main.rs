//! `gkan`: command-line front end for the scatter-correction pipeline.
//!
//! Every command is a pure function of its config, inputs and seed. Errors
//! are printed to stderr as a single JSON object and mapped to exit codes:
//! 2 for configuration problems, 3 for data problems, 4 for numeric or
//! training failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gkan_core::config::RunConfig;
use gkan_core::data::ProjectionStack;
use gkan_core::error::{Error, Result};
use gkan_core::experiment::{
    reconstruct_hu, run_experiment, run_phantom, simulate, subsample_views, SKS_FIT_VIEW_STEP,
};
use gkan_core::geometry::ConeBeamGeometry;
use gkan_core::io::{read_stack, read_tensor, read_volume, write_stack, write_volume, TensorKind};
use gkan_core::metrics::{evaluate_stacks, evaluate_volumes, EvalReport, RoiSpec};
use gkan_core::net::GKanUNetModel;
use gkan_core::physics::Phantom;
use gkan_core::recon::{fdk_reconstruct, log_transform, median_denoise};
use gkan_core::train::{
    correct, correct_with_scatter, fit_sks, make_pairs, sks_baseline, train_with_progress, Checkpoint, SksParams,
    CORRECTION_WINDOW,
};

#[derive(Parser)]
#[command(name = "gkan", version, about = "Gaussian-RBF KAN U-Net scatter correction for cone-beam CT")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores; GKAN_THREADS takes precedence).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Baseline {
    Sks,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Units {
    Hu,
    Mu,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a head phantom and write its attenuation volume (mm^-1).
    Phantom {
        /// Phantom seed (default: derived from the config seed and index).
        #[arg(long)]
        seed: Option<u64>,
        /// Phantom index within the run.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project a phantom and write primary, scatter and measured stacks.
    Simulate {
        #[arg(long)]
        phantom: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Noise seed (default: derived from the config seed and index).
        #[arg(long)]
        noise_seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Train the network on every simulated dataset under a directory.
    Train {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_checkpoint: PathBuf,
    },
    /// Estimate scatter and write the corrected primary.
    Correct {
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        projections: PathBuf,
        /// Output directory for `scatter` and `primary`.
        #[arg(long)]
        out: PathBuf,
        /// Use a classical estimator instead of the network.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        /// Simulated datasets to fit the baseline on (default parameters otherwise).
        #[arg(long)]
        fit_dir: Option<PathBuf>,
    },
    /// Reconstruct a projection stack with FDK.
    Reconstruct {
        #[arg(long)]
        projections: PathBuf,
        #[arg(long)]
        out_volume: PathBuf,
        /// Median-filter the stack first (window from the config).
        #[arg(long)]
        denoise: bool,
        #[arg(long, value_enum, default_value = "hu")]
        units: Units,
    },
    /// Compare a prediction against a reference stack or volume.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// JSON list of ROIs (volumes only; default from the config).
        #[arg(long)]
        rois: Option<PathBuf>,
        #[arg(long)]
        out_report: Option<PathBuf>,
        /// Write the central slice (or view) of the prediction as a PGM.
        #[arg(long)]
        preview: Option<PathBuf>,
    },
    /// Run the full simulate, train, correct and evaluate experiment.
    Experiment {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code() });
            eprintln!("{msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("GKAN_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("GKAN_THREADS={v:?} is not a thread count"))),
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Error::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Config(e.to_string()))?;
    }
    let config = cli.config.as_deref().map(RunConfig::load).transpose()?;
    let require = || config.clone().ok_or_else(|| Error::Config("this command needs --config".into()));
    match cli.command {
        Command::Phantom { seed, index, out } => cmd_phantom(&require()?, seed, index, &out),
        Command::Simulate { phantom, out_dir, noise_seed, index } => {
            let cfg = require()?;
            cmd_simulate(&cfg, &phantom, &out_dir, noise_seed.unwrap_or_else(|| cfg.noise_seed(index)))
        }
        Command::Train { data_dir, out_checkpoint } => cmd_train(&require()?, &data_dir, &out_checkpoint),
        Command::Correct { checkpoint, projections, out, baseline, fit_dir } => {
            let cfg = config.unwrap_or_else(|| RunConfig::new(0));
            match baseline {
                Some(Baseline::Sks) => cmd_correct_sks(&cfg, &projections, &out, fit_dir.as_deref()),
                None => cmd_correct(&cfg, checkpoint.as_deref().expect("required by clap"), &projections, &out),
            }
        }
        Command::Reconstruct { projections, out_volume, denoise, units } => {
            cmd_reconstruct(&config.unwrap_or_else(|| RunConfig::new(0)), &projections, &out_volume, denoise, units)
        }
        Command::Evaluate { pred, reference, rois, out_report, preview } => cmd_evaluate(
            &config.unwrap_or_else(|| RunConfig::new(0)),
            &pred,
            &reference,
            rois.as_deref(),
            out_report.as_deref(),
            preview.as_deref(),
        ),
        Command::Experiment { out_dir } => cmd_experiment(&require()?, &out_dir),
    }
}

fn cmd_phantom(config: &RunConfig, seed: Option<u64>, index: usize, out: &Path) -> Result<()> {
    let phantom = match seed {
        Some(s) => {
            let [nx, ny, nz] = config.phantom.dims;
            gkan_core::physics::make_head_phantom(s, (nx, ny, nz), config.phantom.voxel_mm, &config.phantom.materials)?
        }
        None => run_phantom(config, index)?,
    };
    write_volume(out, &phantom.mu_volume(), "mm^-1")
}

fn cmd_simulate(config: &RunConfig, phantom: &Path, out_dir: &Path, noise_seed: u64) -> Result<()> {
    let (volume, units) = read_volume(phantom)?;
    if units != "mm^-1" {
        return Err(Error::Data(format!("phantom must be in mm^-1, found {units:?}")));
    }
    let geometry = config.geometry.build()?;
    let sim = simulate(&Phantom::from_mu(&volume, config.phantom.materials.energy_kev), &geometry, config, noise_seed)?;
    write_stack(out_dir.join("primary"), &sim.primary, TensorKind::Projections)?;
    write_stack(out_dir.join("scatter"), &sim.scatter, TensorKind::Scatter)?;
    write_stack(out_dir.join("measured"), &sim.measured, TensorKind::Projections)
}

/// `(measured, scatter)` of every simulate output directory under `dir`
/// (the directory itself or its immediate subdirectories), in path order.
fn datasets(dir: &Path) -> Result<Vec<(ProjectionStack, ProjectionStack)>> {
    let mut dirs = vec![dir.to_path_buf()];
    let mut subs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subs.sort();
    dirs.extend(subs);
    let mut out = Vec::new();
    for d in dirs {
        if !d.join("measured.json").exists() {
            continue;
        }
        let (m, _) = read_stack(d.join("measured"))?;
        let (s, kind) = read_stack(d.join("scatter"))?;
        if kind != TensorKind::Scatter {
            return Err(Error::Data(format!("{}: scatter stack has kind {kind:?}", d.display())));
        }
        m.check_aligned(&s)?;
        out.push((m, s));
    }
    if out.is_empty() {
        return Err(Error::Data(format!("no simulated datasets under {}", dir.display())));
    }
    Ok(out)
}

fn cmd_train(config: &RunConfig, data_dir: &Path, out: &Path) -> Result<()> {
    let i0 = config.geometry.i0;
    let mut pairs = Vec::new();
    for (m, s) in datasets(data_dir)? {
        pairs.extend(make_pairs(&m, &s, i0, config.network.input_size)?);
    }
    let model = GKanUNetModel::<f32>::build(&config.network, config.init_seed())?;
    eprintln!("training on {} pairs, {} parameters", pairs.len(), model.param_count());
    let ckpt = train_with_progress(model, &pairs, &config.train, |e, l| eprintln!("epoch {:>3} loss {l:.6e}", e + 1))?;
    ckpt.save(out)
}

/// Geometry from the stack sidecar, else the config.
fn stack_geometry(stack: &ProjectionStack, config: &RunConfig) -> Result<ConeBeamGeometry> {
    let g = match &stack.geometry {
        Some(g) => g.clone(),
        None => config.geometry.build()?,
    };
    if g.n_views() != stack.n_views || g.nv != stack.rows || g.nu != stack.cols {
        return Err(Error::Data("projection stack does not match the geometry".into()));
    }
    Ok(g)
}

fn read_projections(path: &Path) -> Result<ProjectionStack> {
    let (stack, kind) = read_stack(path)?;
    if kind != TensorKind::Projections {
        return Err(Error::Data(format!("{}: expected projections, found {kind:?}", path.display())));
    }
    Ok(stack)
}

fn write_correction(out: &Path, scatter: &ProjectionStack, primary: &ProjectionStack) -> Result<()> {
    write_stack(out.join("scatter"), scatter, TensorKind::Scatter)?;
    write_stack(out.join("primary"), primary, TensorKind::Projections)
}

fn cmd_correct(config: &RunConfig, checkpoint: &Path, projections: &Path, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let m = read_projections(projections)?;
    let g = stack_geometry(&m, config)?;
    let (scatter, primary) = correct(&m, g.i0, &ckpt.model)?;
    write_correction(out, &scatter, &primary)
}

fn cmd_correct_sks(config: &RunConfig, projections: &Path, out: &Path, fit_dir: Option<&Path>) -> Result<()> {
    let m = read_projections(projections)?;
    let g = stack_geometry(&m, config)?;
    let params = match fit_dir {
        Some(dir) => {
            let sets = datasets(dir)?;
            let fm: Vec<ProjectionStack> = sets.iter().map(|(m, _)| subsample_views(m, SKS_FIT_VIEW_STEP)).collect();
            let fs: Vec<ProjectionStack> = sets.iter().map(|(_, s)| subsample_views(s, SKS_FIT_VIEW_STEP)).collect();
            fit_sks(
                &fm.iter().collect::<Vec<_>>(),
                &fs.iter().collect::<Vec<_>>(),
                g.i0,
                g.pitch_mm,
                SksParams::default(),
            )?
        }
        None => SksParams::default(),
    };
    eprintln!("SKS sigma {:.2} mm, a {:.4}, k {:.3}", params.sigma_mm, params.amplitude, params.exponent);
    let scatter = sks_baseline(&m, g.i0, &params, g.pitch_mm)?;
    let primary = correct_with_scatter(&m, &scatter, g.i0, CORRECTION_WINDOW)?;
    write_correction(out, &scatter, &primary)
}

fn cmd_reconstruct(config: &RunConfig, projections: &Path, out: &Path, denoise: bool, units: Units) -> Result<()> {
    let p = read_projections(projections)?;
    let g = stack_geometry(&p, config)?;
    let p = if denoise { median_denoise(&p, config.recon.denoise_window)? } else { p };
    match units {
        Units::Hu => write_volume(out, &reconstruct_hu(&p, &g, config)?, "HU"),
        Units::Mu => write_volume(out, &fdk_reconstruct(&log_transform(&p, g.i0)?, &g, &config.recon.grid)?, "mm^-1"),
    }
}

fn cmd_evaluate(
    config: &RunConfig,
    pred: &Path,
    reference: &Path,
    rois: Option<&Path>,
    out_report: Option<&Path>,
    preview: Option<&Path>,
) -> Result<()> {
    let (meta, _) = read_tensor(reference)?;
    let report = if meta.kind == TensorKind::Volume {
        let (p, pu) = read_volume(pred)?;
        let (r, ru) = read_volume(reference)?;
        if pu != ru {
            return Err(Error::Data(format!("unit mismatch: {pu:?} vs {ru:?}")));
        }
        let rois: Vec<RoiSpec> = match rois {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            None => {
                config.eval.rois_for(&config.recon.grid).into_iter().filter(|roi| roi.validate(&r).is_ok()).collect()
            }
        };
        let range = if ru == "HU" { config.eval.hu_data_range } else { max_of(&r.data) };
        if let Some(path) = preview {
            write_pgm(path, p.slice(p.nz / 2), (p.ny, p.nx))?;
        }
        evaluate_volumes(&p, &r, &rois, range)?
    } else {
        let (p, _) = read_stack(pred)?;
        let (r, _) = read_stack(reference)?;
        if let Some(path) = preview {
            write_pgm(path, p.view(p.n_views / 2), (p.rows, p.cols))?;
        }
        evaluate_stacks(&p, &r, None)?
    };
    print_report(&report, out_report)
}

fn print_report(report: &EvalReport, out: Option<&Path>) -> Result<()> {
    println!("{}", report.to_table());
    if let Some(path) = out {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, report.to_json()? + "\n")?;
    }
    Ok(())
}

fn max_of(data: &[f32]) -> f64 {
    data.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64
}

/// 8-bit binary PGM scaled to the plane's own min/max.
fn write_pgm(path: &Path, plane: &[f32], (rows, cols): (usize, usize)) -> Result<()> {
    let lo = plane.iter().fold(f32::INFINITY, |a, &b| a.min(b));
    let hi = plane.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    bytes.extend(plane.iter().map(|&v| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8));
    fs::write(path, bytes)?;
    Ok(())
}

fn cmd_experiment(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let start = std::time::Instant::now();
    let (report, ckpt) = run_experiment(config, |m| eprintln!("[{:>8.1}s] {m}", start.elapsed().as_secs_f64()))?;
    fs::create_dir_all(out_dir)?;
    ckpt.save(out_dir.join("checkpoint"))?;
    fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    println!("{}", report.summary());
    Ok(())
}
