//! Command-line surface: synthetic data generation, training, evaluation,
//! tree extraction and rendering.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/runtime error.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ucsg_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, RngState};
use ucsg_core::config::Config;
use ucsg_core::contour::{contour_occupancy_2d, contour_occupancy_3d, mesh_to_obj, polylines_to_svg};
use ucsg_core::data::{
    detect_kind, load_dataset, read_pgm, read_voxels, write_synthetic, Dataset, DatasetKind,
    SyntheticSpec,
};
use ucsg_core::metrics::{chamfer_distance, grid_iou, occupancy_accuracy, surface_sample_raster};
use ucsg_core::model::{CsgModel, Mode};
use ucsg_core::train::sample::grid_points;
use ucsg_core::train::train;
use ucsg_core::tree::{extract_tree, CsgTree};
use ucsg_core::Error;

#[derive(Parser)]
#[command(name = "ucsg", version, about = "Unsupervised CSG tree learning on rasterized shapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SeedArg {
    /// RNG seed; falls back to the UCSG_SEED environment variable, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

impl SeedArg {
    fn resolve(&self) -> Result<u64, Error> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var("UCSG_SEED") {
            Ok(text) => text
                .parse()
                .map_err(|_| Error::Config(format!("UCSG_SEED is not a valid u64: `{text}`"))),
            Err(_) => Ok(0),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reproducible synthetic shape corpus with ground-truth trees.
    GenerateData {
        /// Number of samples.
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[command(flatten)]
        seed: SeedArg,
        /// Output directory (rasters, tree JSON files and manifest.json).
        #[arg(long)]
        out: PathBuf,
        /// Shape dimensionality (2 or 3).
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Raster resolution per axis.
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        /// Fewest primitives per shape.
        #[arg(long, default_value_t = 2)]
        min_prims: usize,
        /// Most primitives per shape.
        #[arg(long, default_value_t = 4)]
        max_prims: usize,
    },
    /// Train a model on a dataset directory.
    Train {
        /// Dataset: directory of .pgm / .vox files or a synthetic manifest.
        #[arg(long)]
        data: PathBuf,
        /// TOML configuration file; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the epoch budget from the config file.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the batch size.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Override the learning rate.
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        seed: SeedArg,
        /// Checkpoint output path.
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        /// Line-delimited JSON training log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or a fixed tree) against a dataset.
    Eval {
        #[arg(long, conflicts_with = "tree")]
        checkpoint: Option<PathBuf>,
        /// Evaluate this tree JSON instead of a model.
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Metrics JSON output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Extract the hard CSG tree for one input sample.
    ExtractTree {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input raster (.pgm or .vox).
        #[arg(long)]
        sample: PathBuf,
        /// Tree JSON output path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: SeedArg,
    },
    /// Render a tree JSON to SVG (2D) or OBJ (3D).
    Render {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Contouring grid resolution.
        #[arg(long, default_value_t = 256)]
        resolution: usize,
        #[command(flatten)]
        seed: SeedArg,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::GenerateData {
            n,
            seed,
            out,
            dim,
            resolution,
            min_prims,
            max_prims,
        } => {
            let spec = SyntheticSpec {
                n,
                seed: seed.resolve()?,
                dim,
                resolution,
                min_prims,
                max_prims,
            };
            let manifest = write_synthetic(&out, &spec)?;
            eprintln!("wrote {n} samples, manifest {}", manifest.display());
            Ok(())
        }
        Command::Train {
            data,
            config,
            epochs,
            batch_size,
            lr,
            seed,
            out,
            log,
        } => {
            let kind = detect_kind(&data)?;
            let mut cfg = match config {
                Some(path) => Config::load(&path)?,
                None => default_config_for(&data, kind)?,
            };
            if let Some(e) = epochs {
                cfg.train.max_epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            if let Some(l) = lr {
                cfg.train.lr = l;
            }
            if let Some(s) = seed.seed {
                cfg.train.seed = s;
            } else if std::env::var("UCSG_SEED").is_ok() {
                cfg.train.seed = seed.resolve()?;
            }
            cfg.validate()?;
            let dataset = load_dataset(&data, kind, cfg.model.resolution)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            let mut model = CsgModel::new(
                &cfg.model,
                cfg.train.alpha_init,
                cfg.train.tau_init,
                &mut rng,
            )?;
            let mut log_file = match &log {
                Some(path) => Some(std::fs::File::create(path)?),
                None => None,
            };
            let outcome = train(
                &mut model,
                &dataset,
                &cfg,
                &mut rng,
                log_file.as_mut().map(|f| f as &mut dyn std::io::Write),
            )?;
            let meta = CheckpointMeta {
                format_version: ucsg_core::checkpoint::CHECKPOINT_VERSION,
                config: cfg.clone(),
                stage: outcome.stage,
                epoch: outcome.records.len(),
                alpha: model.alpha(),
                taus: model.taus(),
                rng: RngState::capture(&rng),
                k_init_std: cfg.model.k_init_std,
            };
            save_checkpoint(&out, &model, &meta)?;
            eprintln!(
                "trained {} epochs ({} steps), stage {}, alpha {:.6}; checkpoint {}",
                outcome.records.len(),
                outcome.steps,
                outcome.stage,
                model.alpha(),
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            tree,
            data,
            out,
            seed,
        } => {
            let kind = detect_kind(&data)?;
            let seed = seed.resolve()?;
            let report = match (checkpoint, tree) {
                (Some(ckpt), None) => {
                    let (model, _meta) = load_checkpoint(&ckpt)?;
                    let dataset = load_dataset(&data, kind, model.config.resolution)?;
                    eval_model(&model, &dataset, seed)?
                }
                (None, Some(tree_path)) => {
                    let tree = CsgTree::from_json_str(&std::fs::read_to_string(&tree_path)?)?;
                    let resolution = dataset_resolution(&data, kind)?;
                    let dataset = load_dataset(&data, kind, resolution)?;
                    eval_tree(&tree, &dataset, seed)?
                }
                _ => {
                    return Err(Error::Config(
                        "eval needs exactly one of --checkpoint or --tree".into(),
                    ))
                }
            };
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => println!("{text}"),
            }
            Ok(())
        }
        Command::ExtractTree {
            checkpoint,
            sample,
            out,
            seed,
        } => {
            let (model, _meta) = load_checkpoint(&checkpoint)?;
            let raster = read_raster(&sample)?;
            if raster.dim != model.config.dim || raster.resolution != model.config.resolution {
                return Err(Error::DimensionError {
                    path: sample.display().to_string(),
                    got: format!("{}^{}", raster.resolution, raster.dim),
                    expected: format!("{}^{}", model.config.resolution, model.config.dim),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed.resolve()?);
            let points = grid_points(model.config.resolution, model.config.dim);
            let output =
                model.forward_full(&raster.occupancy_f64(), &points, Mode::Eval, &mut rng)?;
            let tree = extract_tree(&model.config, &output);
            std::fs::write(&out, tree.to_json_string())?;
            eprintln!(
                "extracted tree with {} leaves to {}",
                tree.leaf_count(),
                out.display()
            );
            Ok(())
        }
        Command::Render {
            tree,
            out,
            resolution,
            seed: _,
        } => {
            let tree = CsgTree::from_json_str(&std::fs::read_to_string(&tree)?)?;
            render_tree(&tree, &out, resolution)
        }
    }
}

fn read_raster(path: &Path) -> Result<ucsg_core::data::ShapeRaster, Error> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path),
        Some("vox") => read_voxels(path),
        _ => Err(Error::DataFormat {
            path: path.display().to_string(),
            reason: "expected a .pgm or .vox file".into(),
        }),
    }
}

fn dataset_resolution(path: &Path, kind: DatasetKind) -> Result<usize, Error> {
    match kind {
        DatasetKind::VoxelDir => Ok(ucsg_core::data::VOXEL_RESOLUTION),
        DatasetKind::SyntheticManifest => {
            let manifest_path = if path.is_dir() {
                path.join("manifest.json")
            } else {
                path.to_path_buf()
            };
            let manifest: ucsg_core::data::Manifest =
                serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
            Ok(manifest.resolution)
        }
        DatasetKind::PgmDir => {
            let mut files: Vec<_> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().map(|e| e == "pgm").unwrap_or(false))
                .collect();
            files.sort();
            let first = files.first().ok_or_else(|| Error::DataFormat {
                path: path.display().to_string(),
                reason: "no .pgm files".into(),
            })?;
            Ok(read_pgm(first)?.resolution)
        }
    }
}

fn default_config_for(data: &Path, kind: DatasetKind) -> Result<Config, Error> {
    let mut cfg = Config::default();
    let resolution = dataset_resolution(data, kind)?;
    match kind {
        DatasetKind::VoxelDir => {
            cfg.model = ucsg_core::ModelConfig::default_3d();
        }
        DatasetKind::SyntheticManifest => {
            let manifest_path = if data.is_dir() {
                data.join("manifest.json")
            } else {
                data.to_path_buf()
            };
            let manifest: ucsg_core::data::Manifest =
                serde_json::from_str(&std::fs::read_to_string(manifest_path)?)?;
            if manifest.dim == 3 {
                cfg.model = ucsg_core::ModelConfig::default_3d();
            }
        }
        DatasetKind::PgmDir => {}
    }
    if resolution != cfg.model.resolution {
        return Err(Error::Config(format!(
            "dataset resolution {resolution} needs an explicit --config (default expects {})",
            cfg.model.resolution
        )));
    }
    Ok(cfg)
}

#[derive(serde::Serialize)]
struct SampleMetrics {
    id: String,
    accuracy: f64,
    iou: f64,
    chamfer: Option<f64>,
}

#[derive(serde::Serialize)]
struct EvalReport {
    samples: Vec<SampleMetrics>,
    mean_accuracy: f64,
    mean_iou: f64,
    mean_chamfer: Option<f64>,
}

fn summarize(samples: Vec<SampleMetrics>) -> EvalReport {
    let n = samples.len().max(1) as f64;
    let mean_accuracy = samples.iter().map(|s| s.accuracy).sum::<f64>() / n;
    let mean_iou = samples.iter().map(|s| s.iou).sum::<f64>() / n;
    let chamfers: Vec<f64> = samples.iter().filter_map(|s| s.chamfer).collect();
    let mean_chamfer = if chamfers.is_empty() {
        None
    } else {
        Some(chamfers.iter().sum::<f64>() / chamfers.len() as f64)
    };
    EvalReport {
        samples,
        mean_accuracy,
        mean_iou,
        mean_chamfer,
    }
}

fn boundary_chamfer(
    pred: &[bool],
    truth: &[bool],
    res: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Option<f64> {
    let a = surface_sample_raster(pred, res, dim, 1024, rng).ok()?;
    let b = surface_sample_raster(truth, res, dim, 1024, rng).ok()?;
    chamfer_distance(&a, &b).ok()
}

fn eval_model(model: &CsgModel, dataset: &Dataset, seed: u64) -> Result<EvalReport, Error> {
    let res = model.config.resolution;
    let dim = model.config.dim;
    let points = grid_points(res, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(dataset.len());
    for sample in &dataset.samples {
        let output = model.forward_full(
            &sample.raster.occupancy_f64(),
            &points,
            Mode::Eval,
            &mut rng,
        )?;
        let pred: Vec<bool> = output.occupancy.iter().map(|&v| v >= 0.5).collect();
        rows.push(SampleMetrics {
            id: sample.id.clone(),
            accuracy: occupancy_accuracy(&pred, &sample.raster.cells)?,
            iou: grid_iou(&pred, &sample.raster.cells)?,
            chamfer: boundary_chamfer(&pred, &sample.raster.cells, res, dim, &mut rng),
        });
    }
    Ok(summarize(rows))
}

fn eval_tree(tree: &CsgTree, dataset: &Dataset, seed: u64) -> Result<EvalReport, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(dataset.len());
    for sample in &dataset.samples {
        let res = sample.raster.resolution;
        let pred = tree.evaluate_grid(res)?;
        rows.push(SampleMetrics {
            id: sample.id.clone(),
            accuracy: occupancy_accuracy(&pred, &sample.raster.cells)?,
            iou: grid_iou(&pred, &sample.raster.cells)?,
            chamfer: boundary_chamfer(&pred, &sample.raster.cells, res, sample.raster.dim, &mut rng),
        });
    }
    Ok(summarize(rows))
}

fn render_tree(tree: &CsgTree, out: &Path, resolution: usize) -> Result<(), Error> {
    let dim = tree.dim();
    let ext = out.extension().and_then(|e| e.to_str()).unwrap_or("");
    let cells = tree.evaluate_grid(resolution)?;
    let values: Vec<f64> = cells.iter().map(|&b| b as u8 as f64).collect();
    match (dim, ext) {
        (2, "svg") => {
            let polylines = contour_occupancy_2d(&values, resolution, 0.5)?;
            std::fs::write(out, polylines_to_svg(&polylines, resolution))?;
        }
        (3, "obj") => {
            let mesh = contour_occupancy_3d(&values, resolution, 0.5)?;
            std::fs::write(out, mesh_to_obj(&mesh))?;
        }
        _ => {
            return Err(Error::Config(format!(
                "cannot render a {dim}D tree to `.{ext}` (2D -> .svg, 3D -> .obj)"
            )));
        }
    }
    eprintln!(
        "rendered {} to {}",
        if dim == 2 { "contour" } else { "mesh" },
        out.display()
    );
    Ok(())
}
