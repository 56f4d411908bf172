//! `hanet`: synthesize data, render ground truth, train, evaluate, predict,
//! and run ablation suites.
//!
//! Exit codes: 0 success, 1 usage error, 2 validation or runtime error,
//! 3 numeric abort (non-finite training loss).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hanet_core::checkpoint;
use hanet_core::config::IterationUnit;
use hanet_core::data::{
    generate_synthetic, image_to_tensor, load_record, Manifest, PatchPolicy, SynthSpec,
};
use hanet_core::error::{Error, Result};
use hanet_core::groundtruth::{
    downsample_sum, render, write_dmap, write_pgm_preview, AdaptiveKernel, FixedKernel,
    KernelRecipe,
};
use hanet_core::model::{counts_from_map, BackbonePlan};
use hanet_core::ops::reflect_pad_to_multiple;
use hanet_core::train::{
    ablation_suite, evaluate, train, write_ablation_csv, write_eval_csv, write_metrics_json,
    Suite,
};
use hanet_core::RunConfig;

#[derive(Parser)]
#[command(
    name = "hanet",
    version,
    about = "Crowd density estimation with a cascaded hybrid attention network"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic annotated crowd corpus with a manifest.
    Synth(SynthArgs),
    /// Render density-map ground truth for every record of a manifest.
    MakeGt(MakeGtArgs),
    /// Train a model and write checkpoint, loss trace, and reports.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest (whole images, MAE / MSE).
    Eval(EvalArgs),
    /// Predict the crowd count of a single image from a checkpoint.
    Predict(PredictArgs),
    /// Train and evaluate a whole ablation suite, one row per variant.
    Ablate(AblateArgs),
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("'{s}' is not WIDTHxHEIGHT (e.g. 256x192)"))?;
    let w = w.trim().parse::<usize>().map_err(|e| format!("width: {e}"))?;
    let h = h.trim().parse::<usize>().map_err(|e| format!("height: {e}"))?;
    Ok((w, h))
}

fn parse_head_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| format!("'{s}' is not MIN..MAX (e.g. 5..20)"))?;
    let lo = lo.trim().parse::<usize>().map_err(|e| format!("min: {e}"))?;
    let hi = hi.trim().parse::<usize>().map_err(|e| format!("max: {e}"))?;
    Ok((lo, hi))
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for the images, annotations, and manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    images: usize,
    /// Image dimensions as WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_size, default_value = "128x128")]
    size: (usize, usize),
    /// Heads per image as MIN..MAX (inclusive).
    #[arg(long, value_parser = parse_head_range, default_value = "5..20")]
    heads: (usize, usize),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Patch size recorded in the manifest policy; defaults to the largest
    /// multiple of 8 that fits, capped at 128.
    #[arg(long)]
    patch_size: Option<usize>,
    /// Patches per image recorded in the manifest policy.
    #[arg(long, default_value_t = 4)]
    patches_per_image: usize,
}

#[derive(Args, Clone)]
struct GtArgs {
    /// Stamp bandwidth policy: fixed | adaptive.
    #[arg(long, default_value = "fixed")]
    gt: String,
    /// Window for the fixed kernel (and the adaptive fallback); odd.
    #[arg(long)]
    gt_window: Option<usize>,
    /// Sigma for the fixed kernel (and the adaptive fallback).
    #[arg(long)]
    gt_sigma: Option<f64>,
    /// Adaptive bandwidth factor on the mean neighbor distance.
    #[arg(long)]
    gt_beta: Option<f64>,
    /// Neighbor count for the adaptive bandwidth.
    #[arg(long)]
    gt_k: Option<usize>,
}

impl GtArgs {
    fn recipe(&self) -> Result<KernelRecipe> {
        let mut fixed = FixedKernel::default();
        if let Some(w) = self.gt_window {
            fixed.window = w;
        }
        if let Some(s) = self.gt_sigma {
            fixed.sigma = s;
        }
        let recipe = match self.gt.as_str() {
            "fixed" => KernelRecipe::Fixed(fixed),
            "adaptive" => {
                let mut a = AdaptiveKernel { fallback: fixed, ..AdaptiveKernel::default() };
                if let Some(b) = self.gt_beta {
                    a.beta = b;
                }
                if let Some(k) = self.gt_k {
                    a.k = k;
                }
                KernelRecipe::Adaptive(a)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown ground-truth mode '{other}' (fixed | adaptive)"
                )))
            }
        };
        recipe.validate()?;
        Ok(recipe)
    }

    fn given(&self) -> bool {
        self.gt != "fixed"
            || self.gt_window.is_some()
            || self.gt_sigma.is_some()
            || self.gt_beta.is_some()
            || self.gt_k.is_some()
    }
}

#[derive(Args)]
struct MakeGtArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for the .dmap grids and .pgm previews.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    gt: GtArgs,
    /// Sum-pool the map by this factor before writing (1 = full resolution).
    #[arg(long, default_value_t = 1)]
    downsample: usize,
}

#[derive(Args)]
struct TrainOverrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_manifest: Option<PathBuf>,
    #[arg(long)]
    test_manifest: Option<PathBuf>,
    /// Output directory for config echo, checkpoints, traces, and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u64>,
    /// What `iterations` counts: steps | epochs.
    #[arg(long)]
    unit: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Backbone plan: toy | full.
    #[arg(long)]
    backbone: Option<String>,
    /// Cascade pooling scales, comma separated (e.g. 1,2,3,6).
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    /// Drop the attention cascade (backbone feeds the head directly).
    #[arg(long, default_value_t = false)]
    no_cascade: bool,
    /// Replace the regression backend with a bare 1x1 head.
    #[arg(long, default_value_t = false)]
    no_backend: bool,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    patches_per_image: Option<usize>,
    #[arg(long)]
    gray_prob: Option<f64>,
    #[arg(long)]
    hflip_prob: Option<f64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    log_every: Option<u64>,
    /// Clamp negative density pixels to zero when counting.
    #[arg(long, default_value_t = false)]
    clamp_negative_counts: bool,
    #[command(flatten)]
    gt: GtArgs,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.train_manifest {
            cfg.train_manifest = Some(v.clone());
        }
        if let Some(v) = &self.test_manifest {
            cfg.test_manifest = Some(v.clone());
        }
        if let Some(v) = &self.out {
            cfg.out_dir = Some(v.clone());
        }
        if let Some(v) = self.iterations {
            cfg.iterations = v;
        }
        if let Some(u) = &self.unit {
            cfg.iteration_unit = match u.as_str() {
                "steps" => IterationUnit::Steps,
                "epochs" => IterationUnit::Epochs,
                other => {
                    return Err(Error::Config(format!(
                        "unknown iteration unit '{other}' (steps | epochs)"
                    )))
                }
            };
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.optim.lr = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.optim.weight_decay = v;
        }
        if let Some(v) = self.momentum {
            cfg.optim.momentum = v;
        }
        if let Some(b) = &self.backbone {
            cfg.model.backbone = BackbonePlan::Named(b.clone());
        }
        if let Some(s) = &self.scales {
            cfg.model.scales = s.clone();
        }
        if self.no_cascade {
            cfg.model.scales = Vec::new();
        }
        if self.no_backend {
            cfg.model.backend = false;
        }
        if let Some(v) = self.patch_size {
            cfg.augment.patch_size = Some(v);
        }
        if let Some(v) = self.patches_per_image {
            cfg.augment.patches_per_image = Some(v);
        }
        if let Some(v) = self.gray_prob {
            cfg.augment.gray_prob = v;
        }
        if let Some(v) = self.hflip_prob {
            cfg.augment.hflip_prob = v;
        }
        if let Some(v) = self.eval_every {
            cfg.eval_every = Some(v);
        }
        if let Some(v) = self.checkpoint_every {
            cfg.checkpoint_every = Some(v);
        }
        if let Some(v) = self.log_every {
            cfg.log_every = v;
        }
        if self.clamp_negative_counts {
            cfg.clamp_negative_counts = true;
        }
        if self.gt.given() {
            cfg.gt = self.gt.recipe()?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Directory for eval.csv and metrics.json; prints only when unset.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Write the predicted density grid here.
    #[arg(long)]
    out_dmap: Option<PathBuf>,
    /// Write a preview image of the density grid here.
    #[arg(long)]
    out_pgm: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Suite to run: components | fusion_order | patch_size.
    #[arg(long)]
    suite: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFiniteLoss { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Synth(args) => cmd_synth(args),
        Cmd::MakeGt(args) => cmd_make_gt(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Predict(args) => cmd_predict(args),
        Cmd::Ablate(args) => cmd_ablate(args),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let (width, height) = args.size;
    let spec = SynthSpec {
        images: args.images,
        width,
        height,
        heads_min: args.heads.0,
        heads_max: args.heads.1,
        seed: args.seed,
    };
    let default_patch = (width.min(height) / 8 * 8).clamp(8, 128);
    let policy = PatchPolicy {
        per_image: args.patches_per_image,
        size: args.patch_size.unwrap_or(default_patch),
    };
    let manifest = generate_synthetic(&args.out, &spec, policy)?;
    println!("wrote {} images to {} (manifest: {})", spec.images, args.out.display(), manifest.display());
    Ok(())
}

fn cmd_make_gt(args: MakeGtArgs) -> Result<()> {
    if args.downsample == 0 {
        return Err(Error::Config("downsample factor must be >= 1".into()));
    }
    let recipe = args.gt.recipe()?;
    let manifest = Manifest::load(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let total = manifest.records.len();
    let mut failed = 0usize;
    for rec in &manifest.records {
        let stem = rec
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| rec.image.to_string_lossy().into_owned());
        let one = || -> Result<f64> {
            let img = load_record(base, rec)?;
            let mut map = render(img.w, img.h, &img.points, &recipe)?;
            if args.downsample > 1 {
                map = downsample_sum(&map, args.downsample)?;
            }
            write_dmap(&args.out.join(format!("{stem}.dmap")), &map)?;
            write_pgm_preview(&args.out.join(format!("{stem}.pgm")), &map)?;
            Ok(map.total())
        };
        match one() {
            Ok(total_mass) => println!("{}: count {:.3} -> {}/{stem}.dmap", rec.image.display(), total_mass, args.out.display()),
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", rec.image.display());
            }
        }
    }
    println!("rendered {}/{} maps", total - failed, total);
    if failed > 0 {
        return Err(Error::invalid(
            "make-gt",
            format!("{failed} of {total} records failed"),
        ));
    }
    Ok(())
}

fn assemble_config(config: &Option<PathBuf>, overrides: &TrainOverrides) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = assemble_config(&args.config, &args.overrides)?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        cfg.save(&dir.join("config.json"))?;
    }
    let result = train(&cfg)?;
    if let Some((step, loss)) = result.trace.last() {
        println!("final loss at step {step}: {loss:.6}");
    }
    if let Some(p) = &result.final_checkpoint {
        println!("checkpoint: {}", p.display());
    }
    if let Some(test) = &cfg.test_manifest {
        let dataset = hanet_core::data::load_dataset(test)?;
        let mut model = result.model;
        let report = evaluate(&mut model, &dataset, &cfg)?;
        println!("eval images: {}", report.rows.len());
        println!("MAE: {:.4}", report.mae);
        println!("MSE: {:.4}", report.mse);
        if let Some(dir) = &cfg.out_dir {
            write_eval_csv(&dir.join("eval.csv"), &report)?;
            write_metrics_json(&dir.join("metrics.json"), &report)?;
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let mut cfg = ckpt.config;
    cfg.test_manifest = Some(args.manifest.clone());
    let dataset = hanet_core::data::load_dataset(&args.manifest)?;
    let mut model = ckpt.model;
    let report = evaluate(&mut model, &dataset, &cfg)?;
    println!("images: {}", report.rows.len());
    println!("MAE: {:.4}", report.mae);
    println!("MSE: {:.4}", report.mse);
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_eval_csv(&dir.join("eval.csv"), &report)?;
        write_metrics_json(&dir.join("metrics.json"), &report)?;
        println!("reports: {}", dir.display());
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let mut model = ckpt.model;
    let cfg = ckpt.config;
    let img = image::open(&args.image)
        .map_err(|e| Error::Image { path: args.image.clone(), source: e })?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let tensor = image_to_tensor(&img.into_raw(), w, h, &cfg.norm);
    let padded = reflect_pad_to_multiple(&tensor, model.stride())?;
    let map = model.predict(&padded)?;
    let count = counts_from_map(&map, cfg.clamp_negative_counts)[0];
    println!("count: {count:.3}");
    let s = map.shape;
    if let Some(path) = &args.out_dmap {
        let grid = hanet_core::groundtruth::DensityMap {
            h: s.h,
            w: s.w,
            data: map.data.clone(),
        };
        write_dmap(path, &grid)?;
    }
    if let Some(path) = &args.out_pgm {
        let grid = hanet_core::groundtruth::DensityMap { h: s.h, w: s.w, data: map.data };
        write_pgm_preview(path, &grid)?;
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let suite: Suite = args.suite.parse()?;
    let cfg = assemble_config(&args.config, &args.overrides)?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        cfg.save(&dir.join("config.json"))?;
    }
    let rows = ablation_suite(&cfg, suite)?;
    for row in &rows {
        match (row.mae, row.mse) {
            (Some(mae), Some(mse)) => {
                println!("{}: MAE {:.4} MSE {:.4} ({:.1}s)", row.config, mae, mse, row.wall_seconds)
            }
            _ => println!("{}: {} ({:.1}s)", row.config, row.status, row.wall_seconds),
        }
    }
    if let Some(dir) = &cfg.out_dir {
        let path = dir.join(format!("ablation_{}.csv", args.suite));
        write_ablation_csv(&path, &rows)?;
        println!("table: {}", path.display());
    }
    Ok(())
}
