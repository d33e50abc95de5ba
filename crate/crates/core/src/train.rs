//! Meta-training over fresh batches of function tasks, held-out evaluation,
//! and the checkpoint-plus-sidecar lifecycle.
//!
//! Reproducibility contract: (seed, configs) fully determine the loss
//! history. Batches are generated on one RNG stream, reparameterization
//! noise on another, and held-out evaluation on a third, so evaluation can
//! never leak tasks into training.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::gp::{make_batch, KernelRange};
use crate::image::{load_idx, to_pixel_task, IdxImages};
use crate::model::{NpConfig, NpModel};
use crate::nn::{adam_step, AdamHyper, AdamState, ParamStore};
use crate::rng::{self, standard_normal_vec, Prng};
use crate::task::FunctionTask;
use crate::tensor::Tensor;
use crate::wheel;

/// Stream ids carved out of the run seed.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_TASKS: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_EVAL: u64 = 3;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskSource {
    /// Functions drawn from a GP prior with per-task kernel hyperparameters.
    Gp {
        kernel_range: KernelRange,
        n_points: usize,
        x_interval: [f64; 2],
    },
    /// Pixel tasks from an IDX image file.
    Image { path: PathBuf },
    /// Wheel-bandit pre-training tuples. Per batch: `problems` wheel
    /// problems with fresh δ, `points` tuples each, `n_context` of them
    /// observed. `batch_size` is ignored for this source.
    Wheel {
        #[serde(default = "wheel_default_problems")]
        problems: usize,
        #[serde(default = "wheel_default_points")]
        points: usize,
        #[serde(default = "wheel_default_context")]
        n_context: usize,
    },
}

fn wheel_default_problems() -> usize {
    64
}
fn wheel_default_points() -> usize {
    562
}
fn wheel_default_context() -> usize {
    512
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: AdamHyper,
    pub seed: u64,
    /// Context sizes drawn uniformly per task (inclusive bounds).
    pub context_range: [usize; 2],
    /// Log a progress line every this many steps; 0 silences it.
    #[serde(default)]
    pub eval_every: usize,
    pub task_source: TaskSource,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.context_range[0] < 1 || self.context_range[1] < self.context_range[0] {
            return Err(Error::Config(format!(
                "context_range {:?} must satisfy 1 ≤ lo ≤ hi",
                self.context_range
            )));
        }
        Ok(())
    }
}

/// Source-specific task generation, with any file I/O done once up front.
pub enum TaskGen {
    Gp { kernel_range: KernelRange, n_points: usize, x_interval: [f64; 2] },
    Image { images: IdxImages },
    Wheel { problems: usize, points: usize, n_context: usize },
}

impl TaskGen {
    pub fn from_source(source: &TaskSource) -> Result<Self> {
        Ok(match source {
            TaskSource::Gp { kernel_range, n_points, x_interval } => {
                kernel_range.validate()?;
                TaskGen::Gp { kernel_range: *kernel_range, n_points: *n_points, x_interval: *x_interval }
            }
            TaskSource::Image { path } => TaskGen::Image { images: load_idx(path)? },
            TaskSource::Wheel { problems, points, n_context } => {
                if n_context > points || *problems == 0 {
                    return Err(Error::Config("wheel source needs problems ≥ 1 and n_context ≤ points".into()));
                }
                TaskGen::Wheel { problems: *problems, points: *points, n_context: *n_context }
            }
        })
    }

    pub fn batch(&self, batch_size: usize, context_range: [usize; 2], rng: &mut Prng) -> Result<Vec<FunctionTask>> {
        match self {
            TaskGen::Gp { kernel_range, n_points, x_interval } => {
                make_batch(kernel_range, batch_size, *n_points, context_range, *x_interval, rng)
            }
            TaskGen::Image { images } => {
                let n_pixels = images.rows * images.cols;
                let hi = context_range[1].min(n_pixels);
                let lo = context_range[0].min(hi);
                (0..batch_size)
                    .map(|_| {
                        let idx = rand::Rng::gen_range(rng, 0..images.count);
                        let n_ctx = rand::Rng::gen_range(rng, lo..=hi);
                        Ok(to_pixel_task(images, idx, n_ctx, rng)?.task)
                    })
                    .collect()
            }
            TaskGen::Wheel { problems, points, n_context } => {
                wheel::pretrain_batch(*problems, *points, *n_context, rng)
            }
        }
    }
}

/// Runs the optimisation loop. Per step: fresh batch, mean loss over the
/// batch, one Adam update. Aborts on a non-finite loss, naming the step.
pub fn train(config: &TrainConfig, np_config: &NpConfig) -> Result<(NpModel, Vec<f64>)> {
    config.validate()?;
    np_config.validate()?;
    let gen = TaskGen::from_source(&config.task_source)?;

    let mut model = NpModel::init(np_config.clone(), &mut rng::stream(config.seed, STREAM_INIT))?;
    let mut task_rng = rng::stream(config.seed, STREAM_TASKS);
    let mut noise_rng = rng::stream(config.seed, STREAM_NOISE);
    let mut adam = AdamState::new(&model.params, config.optimizer);
    let mut history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let tasks = gen.batch(config.batch_size, config.context_range, &mut task_rng)?;
        let noises: Vec<Tensor> = tasks
            .iter()
            .map(|_| Tensor::vector(standard_normal_vec(&mut noise_rng, np_config.z_dim)))
            .collect();

        // Per-task losses and gradients fan out across threads; the ordered
        // fold below keeps the result bit-identical regardless of thread count.
        let results: Vec<(f64, ParamStore)> = tasks
            .par_iter()
            .zip(noises.par_iter())
            .map(|(task, eps)| model.elbo_grads_with_eps(task, eps))
            .collect::<Result<_>>()?;

        let batch = results.len() as f64;
        let mut mean_loss = 0.0;
        let mut grad_acc = model.params.zeros_like();
        for (loss, grads) in &results {
            mean_loss += loss / batch;
            for ((_, acc), (_, g)) in grad_acc.iter_mut().zip(grads.iter()) {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b / batch;
                }
            }
        }
        if !mean_loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        adam_step(&mut model.params, &grad_acc, &mut adam)?;
        history.push(mean_loss);

        if config.eval_every > 0 && (step + 1) % config.eval_every == 0 {
            let recent = &history[history.len().saturating_sub(config.eval_every)..];
            let avg: f64 = recent.iter().sum::<f64>() / recent.len() as f64;
            eprintln!("step {:>6}  mean loss {avg:.4}", step + 1);
        }
    }
    Ok((model, history))
}

// ── evaluation ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mixture log-likelihood per target point (log-mean-exp over samples).
    pub log_likelihood_per_point: f64,
    /// Squared error of the predictive mean, averaged over targets.
    pub mse: f64,
    /// Predictive std (law of total variance over samples) over all targets.
    pub mean_std: f64,
    /// Predictive std restricted to context points.
    pub mean_std_context: f64,
    /// Predictive std at targets outside the context; None when every task's
    /// context covers all its targets.
    pub mean_std_away: Option<f64>,
}

/// Metrics from `n_samples` latent draws per task, averaged over tasks.
pub fn evaluate(model: &NpModel, tasks: &[FunctionTask], n_samples: usize, rng: &mut Prng) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(Error::domain("evaluate", "empty task list"));
    }
    if n_samples == 0 {
        return Err(Error::domain("evaluate", "n_samples must be at least 1"));
    }
    let mut ll = 0.0;
    let mut mse = 0.0;
    let mut std_all = 0.0;
    let mut std_ctx = 0.0;
    let mut std_away_sum = 0.0;
    let mut away_tasks = 0usize;

    for task in tasks {
        let preds = model.predict(&task.context_pairs(), task.xs(), n_samples, rng)?;
        let n = task.n_points();
        let yd = task.y_dim();
        let mut task_ll = 0.0;
        let mut task_mse = 0.0;
        let mut point_std = vec![0.0; n];
        for i in 0..n {
            for j in 0..yd {
                let y = task.ys().at(i, j);
                // predictive mixture over samples
                let mut mean_acc = 0.0;
                let mut second_acc = 0.0;
                let mut lps = Vec::with_capacity(n_samples);
                for p in &preds {
                    let (m, s) = (p.mean.at(i, j), p.std.at(i, j));
                    mean_acc += m;
                    second_acc += s * s + m * m;
                    let d = y - m;
                    lps.push(-0.5 * crate::tensor::LN_2PI - s.ln() - d * d / (2.0 * s * s));
                }
                let mean = mean_acc / n_samples as f64;
                let var = (second_acc / n_samples as f64 - mean * mean).max(0.0);
                let max_lp = lps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max_lp + lps.iter().map(|l| (l - max_lp).exp()).sum::<f64>().ln()
                    - (n_samples as f64).ln();
                task_ll += lse;
                task_mse += (y - mean) * (y - mean);
                point_std[i] += var.sqrt() / yd as f64;
            }
        }
        ll += task_ll / (n * yd) as f64 / tasks.len() as f64;
        mse += task_mse / (n * yd) as f64 / tasks.len() as f64;
        std_all += point_std.iter().sum::<f64>() / n as f64 / tasks.len() as f64;

        let ctx = task.context_idx();
        std_ctx += ctx.iter().map(|&i| point_std[i]).sum::<f64>() / ctx.len() as f64 / tasks.len() as f64;
        let away = task.non_context_idx();
        if !away.is_empty() {
            std_away_sum += away.iter().map(|&i| point_std[i]).sum::<f64>() / away.len() as f64;
            away_tasks += 1;
        }
    }
    Ok(EvalReport {
        log_likelihood_per_point: ll,
        mse,
        mean_std: std_all,
        mean_std_context: std_ctx,
        mean_std_away: (away_tasks > 0).then(|| std_away_sum / away_tasks as f64),
    })
}

// ── persistence ──────────────────────────────────────────────────────

/// Sidecar JSON path: the checkpoint path with ".json" appended.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut os = checkpoint.as_os_str().to_os_string();
    os.push(".json");
    PathBuf::from(os)
}

/// Writes the binary checkpoint plus an NpConfig JSON sidecar.
pub fn save_model(model: &NpModel, path: &Path) -> Result<()> {
    checkpoint::save_params(&model.params, path)?;
    let json = serde_json::to_string_pretty(&model.config)?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

/// Loads a checkpoint and validates it against its sidecar config.
pub fn load_model(path: &Path) -> Result<NpModel> {
    let params = checkpoint::load_params(path)?;
    let json = std::fs::read_to_string(sidecar_path(path))?;
    let config: NpConfig = serde_json::from_str(&json)?;
    NpModel::from_parts(config, params)
}

/// Loss history as `step,loss` CSV.
pub fn write_loss_csv(history: &[f64], w: &mut impl std::io::Write) -> Result<()> {
    writeln!(w, "step,loss")?;
    for (i, l) in history.iter().enumerate() {
        writeln!(w, "{i},{l}")?;
    }
    Ok(())
}
