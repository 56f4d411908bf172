//! Training loop, optimizer, evaluation metrics, and the ablation harness.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::{IterationUnit, OptimConfig, RunConfig};
use crate::data::{
    augment, load_dataset, image_to_tensor, patches_to_batch, sample_patches, Dataset, Patch,
};
use crate::error::{Error, Result};
use crate::groundtruth::{downsample_sum, render};
use crate::model::{counts_from_map, HaNet};
use crate::nn::Mode;
use crate::ops::reflect_pad_to_multiple;
use crate::params::{ParamId, ParamStore};
use crate::seed::stream_rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

// -------------------------------------------------------------------- loss

/// Pixel-sum squared error averaged over the batch only:
/// loss = (1/B) * sum_b sum_pixels (pred - gt)^2.
pub fn mse_loss(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
    let (ps, gs) = (tape.shape(pred), tape.shape(gt));
    if ps != gs {
        return Err(Error::shape("mse_loss", format!("pred {} vs gt {}", ps, gs)));
    }
    let neg_gt = tape.scale(gt, -1.0);
    let diff = tape.add(pred, neg_gt)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum_all(sq);
    Ok(tape.scale(total, 1.0 / ps.n as f64))
}

// --------------------------------------------------------------- optimizer

/// SGD with decoupled-from-nothing classic L2 weight decay folded into the
/// gradient: p <- p - lr * (g + wd * p), with optional momentum buffering.
pub struct Sgd {
    cfg: OptimConfig,
    velocity: HashMap<ParamId, Tensor>,
}

impl Sgd {
    pub fn new(cfg: OptimConfig) -> Self {
        Sgd { cfg, velocity: HashMap::new() }
    }

    /// Applies one update to every trainable parameter and leaves gradients
    /// in place (callers zero them). A trainable parameter without a
    /// gradient is an error: it means backward never reached it.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<ParamId> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get(id);
            let grad = match &p.grad {
                Some(g) => g,
                None => return Err(Error::MissingGrad(p.name.clone())),
            };
            let (lr, wd, mom) = (self.cfg.lr, self.cfg.weight_decay, self.cfg.momentum);
            let mut update: Vec<f64> = grad
                .data
                .iter()
                .zip(&p.value.data)
                .map(|(&g, &w)| g + wd * w)
                .collect();
            if mom > 0.0 {
                let shape = p.value.shape;
                let vel = self
                    .velocity
                    .entry(id)
                    .or_insert_with(|| Tensor::zeros(shape));
                for (v, u) in vel.data.iter_mut().zip(update.iter_mut()) {
                    *v = mom * *v + *u;
                    *u = *v;
                }
            }
            let value = store.value_mut(id);
            for (w, u) in value.data.iter_mut().zip(&update) {
                *w -= lr * u;
            }
        }
        Ok(())
    }
}

// ------------------------------------------------------------ training loop

#[derive(Debug)]
pub struct TrainResult {
    pub model: HaNet,
    /// (iteration, loss) per optimizer step.
    pub trace: Vec<(u64, f64)>,
    pub final_checkpoint: Option<PathBuf>,
    /// Periodic evaluations, when `eval_every` and a test manifest are set.
    pub evals: Vec<(u64, EvalReport)>,
}

/// Loads the train manifest named in the config and runs the loop.
pub fn train(cfg: &RunConfig) -> Result<TrainResult> {
    let manifest = cfg
        .train_manifest
        .as_ref()
        .ok_or_else(|| Error::Config("train_manifest is required for training".into()))?;
    let dataset = load_dataset(manifest)?;
    train_with(cfg, &dataset)
}

/// Assembles one batch of augmented patches plus matching downsampled
/// ground-truth maps.
fn next_batch(
    cfg: &RunConfig,
    dataset: &Dataset,
    stride: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Tensor)> {
    let policy = cfg.augment.effective_policy(dataset.policy);
    let mut patches: Vec<Patch> = Vec::with_capacity(cfg.batch_size);
    while patches.len() < cfg.batch_size {
        let idx = rng.random_range(0..dataset.images.len());
        for mut p in sample_patches(&dataset.images[idx], policy, rng) {
            augment(&mut p, &cfg.augment, rng);
            patches.push(p);
        }
    }
    patches.truncate(cfg.batch_size);

    let images = patches_to_batch(&patches, &cfg.norm)?;
    let m = policy.size;
    let (gh, gw) = (m / stride, m / stride);
    let mut gt = Tensor::zeros(Shape::new(patches.len(), 1, gh, gw));
    for (n, p) in patches.iter().enumerate() {
        let full = render(m, m, &p.points, &cfg.gt)?;
        let down = downsample_sum(&full, stride)?;
        gt.data[n * gh * gw..(n + 1) * gh * gw].copy_from_slice(&down.data);
    }
    Ok((images, gt))
}

pub fn train_with(cfg: &RunConfig, dataset: &Dataset) -> Result<TrainResult> {
    cfg.validate()?;
    let mut model = HaNet::new(&cfg.model, cfg.seed)?;
    let stride = model.stride();
    let policy = cfg.augment.effective_policy(dataset.policy);
    if policy.size % stride != 0 {
        return Err(Error::Config(format!(
            "patch size {} is not divisible by the model stride {}",
            policy.size, stride
        )));
    }
    let constrained = crate::data::patch_constrained(&dataset.images, policy);
    if constrained > 0 {
        log::warn!(
            "{constrained} of {} images cannot supply {} distinct {sz}x{sz} patches; every crop each image admits is used (undersized images zero-padded)",
            dataset.images.len(),
            policy.per_image,
            sz = policy.size
        );
    }

    let total_steps = match cfg.iteration_unit {
        IterationUnit::Steps => cfg.iterations,
        IterationUnit::Epochs => {
            let per_epoch = (dataset.images.len() * policy.per_image).div_ceil(cfg.batch_size).max(1);
            cfg.iterations * per_epoch as u64
        }
    };

    let mut data_rng = stream_rng(cfg.seed, "train-data");
    let mut sgd = Sgd::new(cfg.optim);
    let mut trace = Vec::with_capacity(total_steps as usize);
    let mut evals = Vec::new();
    let test_dataset = match (&cfg.eval_every, &cfg.test_manifest) {
        (Some(_), Some(path)) => Some(load_dataset(path)?),
        _ => None,
    };

    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let started = Instant::now();
    for step in 1..=total_steps {
        let (images, gt) = next_batch(cfg, dataset, stride, &mut data_rng)?;
        let mut tape = Tape::new();
        let x = tape.leaf(images);
        let y = tape.leaf(gt);
        let pred = model.forward(&mut tape, x, Mode::Train)?;
        let loss = mse_loss(&mut tape, pred, y)?;
        let loss_val = tape.value(loss).data[0];
        if !loss_val.is_finite() {
            // Leave behind the last consistent state for a post-mortem.
            if let Some(dir) = &cfg.out_dir {
                let p = dir.join("checkpoint_abort.hanc");
                checkpoint::save(&p, cfg, &model, step - 1, &data_rng)?;
                log::error!("non-finite loss at step {step}; wrote {}", p.display());
            }
            return Err(Error::NonFiniteLoss { iteration: step });
        }
        tape.backward(loss)?;
        tape.accumulate_param_grads(&mut model.store)?;
        sgd.step(&mut model.store)?;
        model.store.zero_grads();
        trace.push((step, loss_val));

        if step % cfg.log_every.max(1) == 0 || step == total_steps {
            log::info!("step {step}/{total_steps}: loss {loss_val:.6}");
        }
        if let Some(every) = cfg.checkpoint_every {
            if every > 0 && step % every == 0 && step != total_steps {
                if let Some(dir) = &cfg.out_dir {
                    checkpoint::save(&dir.join(format!("checkpoint_{step:06}.hanc")), cfg, &model, step, &data_rng)?;
                }
            }
        }
        if let Some(every) = cfg.eval_every {
            if every > 0 && step % every == 0 {
                if let Some(test) = &test_dataset {
                    let report = evaluate(&mut model, test, cfg)?;
                    log::info!("step {step}: eval MAE {:.4} MSE {:.4}", report.mae, report.mse);
                    evals.push((step, report));
                }
            }
        }
    }
    log::info!(
        "trained {total_steps} steps in {:.1}s",
        started.elapsed().as_secs_f64()
    );

    let mut final_checkpoint = None;
    if let Some(dir) = &cfg.out_dir {
        let p = dir.join("checkpoint.hanc");
        checkpoint::save(&p, cfg, &model, total_steps, &data_rng)?;
        write_loss_trace(&dir.join("loss_trace.csv"), &trace)?;
        final_checkpoint = Some(p);
    }
    Ok(TrainResult { model, trace, final_checkpoint, evals })
}

// ---------------------------------------------------------------- metrics

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub id: String,
    pub estimated: f64,
    pub ground_truth: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mae: f64,
    /// Root-mean-square count error (the field test reports alongside MAE).
    pub mse: f64,
    pub wall_seconds: f64,
}

/// MAE = mean |est - gt|; MSE = sqrt(mean (est - gt)^2).
pub fn count_metrics(pairs: &[(f64, f64)]) -> (f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let n = pairs.len() as f64;
    let mae = pairs.iter().map(|(e, g)| (e - g).abs()).sum::<f64>() / n;
    let mse = (pairs.iter().map(|(e, g)| (e - g) * (e - g)).sum::<f64>() / n).sqrt();
    (mae, mse)
}

/// Whole-image evaluation: each image is reflect-padded up to the model
/// stride, pushed through in eval mode, and its predicted count (density
/// sum) is compared against the annotation count.
pub fn evaluate(model: &mut HaNet, dataset: &Dataset, cfg: &RunConfig) -> Result<EvalReport> {
    let started = Instant::now();
    let stride = model.stride();
    let mut rows = Vec::with_capacity(dataset.images.len());
    for img in &dataset.images {
        let tensor = image_to_tensor(&img.rgb, img.w, img.h, &cfg.norm);
        let padded = reflect_pad_to_multiple(&tensor, stride)?;
        let map = model.predict(&padded)?;
        let est = counts_from_map(&map, cfg.clamp_negative_counts)[0];
        rows.push(EvalRow {
            id: img.id.clone(),
            estimated: est,
            ground_truth: img.points.len() as f64,
        });
    }
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.estimated, r.ground_truth)).collect();
    let (mae, mse) = count_metrics(&pairs);
    Ok(EvalReport { rows, mae, mse, wall_seconds: started.elapsed().as_secs_f64() })
}

// ------------------------------------------------------------- csv outputs

pub fn write_loss_trace(path: &Path, trace: &[(u64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["iteration", "loss"])?;
    for (step, loss) in trace {
        w.write_record([step.to_string(), loss.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-image rows only; the summary lives in `write_metrics_json`, keeping
/// this file byte-stable across repeat evaluations of one checkpoint.
pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["id", "estimated", "ground_truth", "abs_error"])?;
    for r in &report.rows {
        w.write_record([
            r.id.clone(),
            r.estimated.to_string(),
            r.ground_truth.to_string(),
            (r.estimated - r.ground_truth).abs().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_metrics_json(path: &Path, report: &EvalReport) -> Result<()> {
    let v = serde_json::json!({
        "images": report.rows.len(),
        "mae": report.mae,
        "mse": report.mse,
        "wall_seconds": report.wall_seconds,
    });
    std::fs::write(path, serde_json::to_string_pretty(&v).expect("metrics serialize"))
        .map_err(|e| Error::io(path, e))
}

// --------------------------------------------------------- ablation harness

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Components,
    FusionOrder,
    PatchSize,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Suite> {
        match s {
            "components" => Ok(Suite::Components),
            "fusion_order" => Ok(Suite::FusionOrder),
            "patch_size" => Ok(Suite::PatchSize),
            other => Err(Error::Config(format!(
                "unknown suite '{other}' (components | fusion_order | patch_size)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub config: String,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub wall_seconds: f64,
    /// "ok" or the error message of a failed run.
    pub status: String,
}

/// The per-suite run list: (label, config) pairs derived from the base.
pub fn suite_configs(base: &RunConfig, suite: Suite) -> Vec<(String, RunConfig)> {
    match suite {
        Suite::Components => {
            // The component ladder: bare backbone, add the backend, then
            // grow the cascade one scale at a time.
            let arch: [(Vec<usize>, bool); 6] = [
                (vec![], false),
                (vec![], true),
                (vec![1], true),
                (vec![1, 2], true),
                (vec![1, 2, 3], true),
                (vec![1, 2, 3, 6], true),
            ];
            arch.into_iter()
                .map(|(scales, backend)| {
                    let mut cfg = base.clone();
                    cfg.model.scales = scales;
                    cfg.model.backend = backend;
                    (cfg.model.describe(), cfg)
                })
                .collect()
        }
        Suite::FusionOrder => {
            // Local-to-global vs global-to-local, three- and four-module rows.
            let orders: [&[usize]; 4] = [&[3, 2, 1], &[1, 2, 3], &[6, 3, 2, 1], &[1, 2, 3, 6]];
            orders
                .into_iter()
                .map(|scales| {
                    let mut cfg = base.clone();
                    cfg.model.scales = scales.to_vec();
                    cfg.model.backend = true;
                    (cfg.model.describe(), cfg)
                })
                .collect()
        }
        Suite::PatchSize => [128usize, 192, 256]
            .into_iter()
            .map(|m| {
                let mut cfg = base.clone();
                cfg.augment.patch_size = Some(m);
                (format!("patch-{m}x{m}"), cfg)
            })
            .collect(),
    }
}

/// Trains and evaluates every row of the suite. Individual failures are
/// recorded in the row status; the suite keeps going.
pub fn ablation_suite(base: &RunConfig, suite: Suite) -> Result<Vec<AblationRow>> {
    let train_manifest = base
        .train_manifest
        .as_ref()
        .ok_or_else(|| Error::Config("ablation needs a train_manifest".into()))?;
    let train_ds = load_dataset(train_manifest)?;
    let eval_ds = match &base.test_manifest {
        Some(p) => Some(load_dataset(p)?),
        None => None,
    };

    let mut rows = Vec::new();
    for (label, mut cfg) in suite_configs(base, suite) {
        // Row artifacts (checkpoints, traces) are the caller's concern, not
        // the suite's; only the summary row escapes.
        cfg.out_dir = None;
        cfg.eval_every = None;
        let started = Instant::now();
        let outcome = train_with(&cfg, &train_ds).and_then(|mut result| {
            let ds = eval_ds.as_ref().unwrap_or(&train_ds);
            evaluate(&mut result.model, ds, &cfg)
        });
        let wall = started.elapsed().as_secs_f64();
        match outcome {
            Ok(report) => {
                log::info!("ablation '{label}': MAE {:.4} MSE {:.4}", report.mae, report.mse);
                rows.push(AblationRow {
                    config: label,
                    mae: Some(report.mae),
                    mse: Some(report.mse),
                    wall_seconds: wall,
                    status: "ok".into(),
                });
            }
            Err(e) => {
                log::error!("ablation '{label}' failed: {e}");
                rows.push(AblationRow {
                    config: label,
                    mae: None,
                    mse: None,
                    wall_seconds: wall,
                    status: e.to_string(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record(["config", "mae", "mse", "wall_seconds", "status"])?;
    for r in rows {
        w.write_record([
            r.config.clone(),
            r.mae.map(|v| v.to_string()).unwrap_or_default(),
            r.mse.map(|v| v.to_string()).unwrap_or_default(),
            r.wall_seconds.to_string(),
            r.status.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BackbonePlan, ModelConfig};

    #[test]
    fn loss_is_pixel_sum_batch_mean() {
        // Two images, two pixels each. Diffs: [1, 2] and [3, 0].
        // Per-image pixel sums: 5 and 9; batch mean: 7.
        let mut tape = Tape::new();
        let pred = tape.leaf(
            Tensor::from_vec(Shape::new(2, 1, 1, 2), vec![2.0, 3.0, 4.0, 1.0]).unwrap(),
        );
        let gt = tape.leaf(
            Tensor::from_vec(Shape::new(2, 1, 1, 2), vec![1.0, 1.0, 1.0, 1.0]).unwrap(),
        );
        let loss = mse_loss(&mut tape, pred, gt).unwrap();
        assert!((tape.value(loss).data[0] - 7.0).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_is_two_diff_over_batch() {
        let mut tape = Tape::new();
        let pred = tape.leaf(
            Tensor::from_vec(Shape::new(2, 1, 1, 2), vec![2.0, 3.0, 4.0, 1.0]).unwrap(),
        );
        let gt = tape.leaf(
            Tensor::from_vec(Shape::new(2, 1, 1, 2), vec![1.0, 1.0, 1.0, 1.0]).unwrap(),
        );
        let loss = mse_loss(&mut tape, pred, gt).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(pred).unwrap();
        for (got, diff) in g.data.iter().zip([1.0, 2.0, 3.0, 0.0]) {
            assert!((got - 2.0 * diff / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_applies_weight_decay_and_lr() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::scalar(2.0), true).unwrap();
        store.accumulate_grad(id, &Tensor::scalar(1.0)).unwrap();
        let mut sgd = Sgd::new(OptimConfig { lr: 0.1, weight_decay: 0.5, momentum: 0.0 });
        sgd.step(&mut store).unwrap();
        // update = g + wd*w = 1 + 1 = 2; w = 2 - 0.1*2 = 1.8.
        assert!((store.value(id).data[0] - 1.8).abs() < 1e-12);
    }

    #[test]
    fn sgd_momentum_accumulates_velocity() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::scalar(0.0), true).unwrap();
        let mut sgd = Sgd::new(OptimConfig { lr: 1.0, weight_decay: 0.0, momentum: 0.5 });
        store.accumulate_grad(id, &Tensor::scalar(1.0)).unwrap();
        sgd.step(&mut store).unwrap();
        // v1 = 1, w = -1.
        assert!((store.value(id).data[0] + 1.0).abs() < 1e-12);
        store.zero_grads();
        store.accumulate_grad(id, &Tensor::scalar(1.0)).unwrap();
        sgd.step(&mut store).unwrap();
        // v2 = 0.5 + 1 = 1.5, w = -2.5.
        assert!((store.value(id).data[0] + 2.5).abs() < 1e-12);
    }

    #[test]
    fn sgd_rejects_missing_gradients_by_name() {
        let mut store = ParamStore::new();
        store.insert("conv.weight", Tensor::scalar(1.0), true).unwrap();
        let mut sgd = Sgd::new(OptimConfig::default());
        let err = sgd.step(&mut store).unwrap_err().to_string();
        assert!(err.contains("conv.weight"), "{err}");
    }

    #[test]
    fn metrics_match_definitions() {
        let pairs = [(3.0, 2.0), (1.0, 3.0)];
        let (mae, mse) = count_metrics(&pairs);
        assert!((mae - 1.5).abs() < 1e-15);
        assert!((mse - (2.5f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn suite_configs_have_expected_rows() {
        let base = RunConfig {
            model: ModelConfig { backbone: BackbonePlan::toy(), ..ModelConfig::default() },
            ..RunConfig::default()
        };
        let comp = suite_configs(&base, Suite::Components);
        assert_eq!(comp.len(), 6);
        assert_eq!(comp[0].0, "backbone");
        assert_eq!(comp[1].0, "backbone+backend");
        assert_eq!(comp[2].0, "backbone+ham(pes-1)+backend");
        assert_eq!(comp[5].0, "backbone+ham(pes-1,2,3,6)+backend");

        let fusion = suite_configs(&base, Suite::FusionOrder);
        assert_eq!(fusion.len(), 4);
        assert_eq!(fusion[0].1.model.scales, vec![3, 2, 1]);
        assert_eq!(fusion[1].1.model.scales, vec![1, 2, 3]);
        assert_eq!(fusion[2].1.model.scales, vec![6, 3, 2, 1]);
        assert_eq!(fusion[3].1.model.scales, vec![1, 2, 3, 6]);

        let patch = suite_configs(&base, Suite::PatchSize);
        assert_eq!(patch.len(), 3);
        assert_eq!(patch[2].1.augment.patch_size, Some(256));
    }
}
