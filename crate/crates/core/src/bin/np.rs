//! Command-line entry point: train models, evaluate them, complete images,
//! and run the optimisation and bandit benchmarks. Every run writes a
//! manifest.json with enough information to reproduce it bit-identically.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use np_core::bo::{normalized_steps, run_trials, BoMethod, BoSetup};
use np_core::gp::{sample_task, write_tasks_jsonl, TaskRecord};
use np_core::image::{load_idx, render_pgm_file, to_pixel_task};
use np_core::model::NpConfig;
use np_core::rng;
use np_core::train::{
    evaluate, load_model, save_model, train, write_loss_csv, TaskGen, TaskSource, TrainConfig,
    STREAM_EVAL,
};
use np_core::wheel::evaluate_bandit;
use np_core::Tensor;

#[derive(Parser)]
#[command(name = "np", version, about = "Neural Process toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model from a JSON config; writes checkpoint, loss CSV, manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Additionally dump this many training-distribution tasks as JSONL
        /// fixtures (GP sources only).
        #[arg(long)]
        dump_tasks: Option<usize>,
    },
    /// Held-out metrics per context size; writes eval.json and eval.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Image completions as PGM files per (context count, sample).
    Complete {
        #[arg(long)]
        checkpoint: PathBuf,
        /// IDX image file.
        #[arg(long)]
        idx: PathBuf,
        #[arg(long, default_value_t = 0)]
        image_index: usize,
        /// Comma-separated context pixel counts.
        #[arg(long, value_delimiter = ',', default_value = "10,100,700")]
        context_counts: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Thompson-sampling optimisation benchmark; per-trial and summary CSV.
    Bo {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Wheel-bandit benchmark; regret table CSV.
    Bandit {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

// ── config schemas ───────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct TrainCmdConfig {
    model: NpConfig,
    train: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct EvalCmdConfig {
    source: TaskSource,
    n_tasks: usize,
    n_samples: usize,
    context_sizes: Vec<usize>,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct BoCmdConfig {
    #[serde(default)]
    setup: BoSetup,
    n_trials: usize,
    /// Any of "np", "gp_oracle", "random".
    methods: Vec<String>,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct BanditCmdConfig {
    deltas: Vec<f64>,
    n_trials: usize,
    horizon: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize)]
struct RunManifest {
    subcommand: String,
    argv: Vec<String>,
    config: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    seed: u64,
    out_dir: PathBuf,
    version: String,
    duration_seconds: f64,
}

fn write_manifest(
    out: &Path,
    subcommand: &str,
    config: Option<&Path>,
    checkpoint: Option<&Path>,
    seed: u64,
    started: Instant,
) -> Result<()> {
    let manifest = RunManifest {
        subcommand: subcommand.into(),
        argv: std::env::args().collect(),
        config: config.map(Path::to_path_buf),
        checkpoint: checkpoint.map(Path::to_path_buf),
        seed,
        out_dir: out.to_path_buf(),
        version: env!("NP_GIT_DESCRIBE").to_string(),
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)
        .context("writing manifest")?;
    Ok(())
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn main() {
    if let Err(err) = run(Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    match cli.cmd {
        Cmd::Train { config, seed, out, dump_tasks } => {
            fs::create_dir_all(&out).context("creating output directory")?;
            let mut cfg: TrainCmdConfig = read_config(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let (model, history) = train(&cfg.train, &cfg.model).context("training")?;

            let ckpt = out.join("checkpoint.npk");
            save_model(&model, &ckpt).context("saving checkpoint")?;
            let mut csv = Vec::new();
            write_loss_csv(&history, &mut csv).context("rendering loss history")?;
            fs::write(out.join("loss.csv"), csv).context("writing loss.csv")?;

            if let Some(n) = dump_tasks {
                dump_gp_tasks(&cfg.train, n, &out).context("dumping task fixtures")?;
            }
            write_manifest(&out, "train", Some(&config), None, cfg.train.seed, started)?;
            println!("trained {} steps; final loss {:.4}", history.len(), history.last().unwrap());
            println!("checkpoint: {}", ckpt.display());
        }

        Cmd::Eval { checkpoint, config, seed, out } => {
            fs::create_dir_all(&out).context("creating output directory")?;
            let mut cfg: EvalCmdConfig = read_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let model = load_model(&checkpoint).context("loading checkpoint")?;
            let gen = TaskGen::from_source(&cfg.source).context("preparing task source")?;

            #[derive(Serialize)]
            struct Row {
                context_size: usize,
                report: np_core::train::EvalReport,
            }
            let mut rows = Vec::new();
            let mut csv = String::from(
                "context_size,mean_std,mean_std_context,mean_std_away,mse,log_likelihood_per_point\n",
            );
            for (i, &c) in cfg.context_sizes.iter().enumerate() {
                let mut task_rng = rng::stream(cfg.seed, STREAM_EVAL + 2 * i as u64);
                let mut eval_rng = rng::stream(cfg.seed, STREAM_EVAL + 2 * i as u64 + 1);
                let tasks = gen.batch(cfg.n_tasks, [c, c], &mut task_rng).context("generating eval tasks")?;
                let report = evaluate(&model, &tasks, cfg.n_samples, &mut eval_rng).context("evaluating")?;
                csv.push_str(&format!(
                    "{c},{},{},{},{},{}\n",
                    report.mean_std,
                    report.mean_std_context,
                    report.mean_std_away.map_or(String::from(""), |v| v.to_string()),
                    report.mse,
                    report.log_likelihood_per_point,
                ));
                rows.push(Row { context_size: c, report });
            }
            fs::write(out.join("eval.json"), serde_json::to_string_pretty(&rows)?)
                .context("writing eval.json")?;
            fs::write(out.join("eval.csv"), csv).context("writing eval.csv")?;
            write_manifest(&out, "eval", Some(&config), Some(&checkpoint), cfg.seed, started)?;
            println!("evaluated {} context sizes over {} tasks each", cfg.context_sizes.len(), cfg.n_tasks);
        }

        Cmd::Complete { checkpoint, idx, image_index, context_counts, samples, seed, out } => {
            fs::create_dir_all(&out).context("creating output directory")?;
            if samples == 0 || context_counts.is_empty() {
                bail!("complete needs at least one sample and one context count");
            }
            let model = load_model(&checkpoint).context("loading checkpoint")?;
            let images = load_idx(&idx).context("loading IDX file")?;

            // ground truth for reference
            let truth: Vec<f64> =
                images.image(image_index).context("selecting image")?.iter().map(|&p| p as f64 / 255.0).collect();
            let truth = Tensor::new(vec![truth.len(), 1], truth).context("building truth tensor")?;
            render_pgm_file(&truth, images.rows, images.cols, &out.join("original.pgm"))
                .context("writing original.pgm")?;

            for (ci, &count) in context_counts.iter().enumerate() {
                let mut task_rng = rng::stream(seed, 2 * ci as u64);
                let mut z_rng = rng::stream(seed, 2 * ci as u64 + 1);
                let pt = to_pixel_task(&images, image_index, count, &mut task_rng)
                    .context("building pixel task")?;

                // context visualisation: observed pixels on a mid-grey field
                let mut ctx_img = Tensor::filled(vec![pt.task.n_points(), 1], 0.5);
                for &i in pt.task.context_idx() {
                    ctx_img.data_mut()[i] = pt.task.ys().at(i, 0);
                }
                render_pgm_file(&ctx_img, pt.rows, pt.cols, &out.join(format!("context_c{count:03}.pgm")))
                    .context("writing context image")?;

                let preds = model
                    .predict(&pt.task.context_pairs(), pt.task.xs(), samples, &mut z_rng)
                    .context("predicting completions")?;
                for (si, pred) in preds.iter().enumerate() {
                    let path = out.join(format!("complete_c{count:03}_s{si}.pgm"));
                    render_pgm_file(&pred.mean, pt.rows, pt.cols, &path)
                        .context("writing completion")?;
                }
            }
            write_manifest(&out, "complete", None, Some(&checkpoint), seed, started)?;
            println!(
                "wrote {} completions for image {image_index}",
                context_counts.len() * samples
            );
        }

        Cmd::Bo { checkpoint, config, seed, out } => {
            fs::create_dir_all(&out).context("creating output directory")?;
            let mut cfg: BoCmdConfig = read_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let model = load_model(&checkpoint).context("loading checkpoint")?;

            let mut trials_csv = String::from("trial,method,steps_to_min\n");
            let mut summary_csv = String::from("method,normalized_steps,stderr\n");
            let baseline = run_trials(&BoMethod::Random, &cfg.setup, cfg.n_trials, cfg.seed)
                .context("running random-search baseline")?;
            let base_mean = baseline.iter().sum::<usize>() as f64 / baseline.len() as f64;

            for name in &cfg.methods {
                let method = match name.as_str() {
                    "np" => BoMethod::Np(&model),
                    "gp_oracle" => BoMethod::GpOracle,
                    "random" => BoMethod::Random,
                    other => bail!("unknown method {other:?} (use np, gp_oracle, random)"),
                };
                let steps = run_trials(&method, &cfg.setup, cfg.n_trials, cfg.seed)
                    .with_context(|| format!("running {name} trials"))?;
                for (t, s) in steps.iter().enumerate() {
                    trials_csv.push_str(&format!("{t},{name},{s}\n"));
                }
                let ratio = normalized_steps(&method, &cfg.setup, cfg.n_trials, cfg.seed)
                    .with_context(|| format!("normalising {name}"))?;
                let mean = steps.iter().sum::<usize>() as f64 / steps.len() as f64;
                let var = steps.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>()
                    / (steps.len().max(2) as f64 - 1.0);
                let stderr = (var / steps.len() as f64).sqrt() / base_mean;
                summary_csv.push_str(&format!("{name},{ratio:.4},{stderr:.4}\n"));
            }
            fs::write(out.join("bo_trials.csv"), trials_csv).context("writing bo_trials.csv")?;
            fs::write(out.join("bo_summary.csv"), summary_csv).context("writing bo_summary.csv")?;
            write_manifest(&out, "bo", Some(&config), Some(&checkpoint), cfg.seed, started)?;
            println!("bo benchmark over {} trials done", cfg.n_trials);
        }

        Cmd::Bandit { checkpoint, config, seed, out } => {
            fs::create_dir_all(&out).context("creating output directory")?;
            let mut cfg: BanditCmdConfig = read_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let model = load_model(&checkpoint).context("loading checkpoint")?;
            let rows = evaluate_bandit(
                &model,
                &cfg.deltas,
                cfg.n_trials,
                cfg.horizon,
                &mut rng::seeded(cfg.seed),
            )
            .context("running bandit evaluation")?;

            let mut csv = String::from("delta,agent,metric,mean,stderr,n_trials\n");
            for r in &rows {
                csv.push_str(&format!(
                    "{},{},{},{:.4},{:.4},{}\n",
                    r.delta, r.agent, r.metric, r.mean, r.stderr, r.n_trials
                ));
            }
            fs::write(out.join("bandit.csv"), csv).context("writing bandit.csv")?;
            write_manifest(&out, "bandit", Some(&config), Some(&checkpoint), cfg.seed, started)?;
            println!("bandit benchmark over {} deltas done", cfg.deltas.len());
        }
    }
    Ok(())
}

/// JSONL fixtures drawn from the training distribution on a fresh stream.
fn dump_gp_tasks(train_cfg: &TrainConfig, n: usize, out: &Path) -> Result<()> {
    let TaskSource::Gp { kernel_range, n_points, x_interval } = &train_cfg.task_source else {
        eprintln!("--dump-tasks only applies to GP task sources; skipping");
        return Ok(());
    };
    let mut rng = rng::stream(train_cfg.seed, 1_000);
    let records: Vec<TaskRecord> = (0..n)
        .map(|_| {
            let (k, t) =
                sample_task(kernel_range, *n_points, train_cfg.context_range, *x_interval, &mut rng)?;
            Ok(TaskRecord::from_task(k, &t))
        })
        .collect::<np_core::Result<_>>()?;
    let mut buf = Vec::new();
    write_tasks_jsonl(&records, &mut buf)?;
    fs::write(out.join("tasks.jsonl"), buf)?;
    Ok(())
}
