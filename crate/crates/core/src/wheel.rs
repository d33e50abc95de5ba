//! The wheel contextual bandit: contexts on the unit disk, five arms, a
//! low-reward inner region of radius δ and one high-reward arm per outer
//! quadrant. Includes the pre-training task source, a Thompson-sampling
//! agent driven by the model, a uniform baseline and regret accounting
//! normalised against the uniform agent.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NpModel;
use crate::rng::{self, Prng};
use crate::task::FunctionTask;
use crate::tensor::Tensor;

pub const N_ARMS: usize = 5;
/// Arm 1's mean reward, paid everywhere.
pub const INNER_OPTIMAL_MEAN: f64 = 1.2;
/// Mean reward of the correct outer-quadrant arm.
pub const OUTER_OPTIMAL_MEAN: f64 = 50.0;
/// Every other pull.
pub const SUBOPTIMAL_MEAN: f64 = 1.0;
pub const REWARD_STD: f64 = 0.01;

/// Context dims: (X₁, X₂, onehot(arm)).
pub const BANDIT_X_DIM: usize = 7;

/// Observations fed to the encoder are capped at the most recent 512 so the
/// test-time context size stays near the pre-training distribution.
pub const HISTORY_CAP: usize = 512;

/// Fresh contexts used to estimate the frozen final policy's regret.
pub const SIMPLE_REGRET_CONTEXTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WheelProblem {
    pub delta: f64,
}

impl WheelProblem {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::domain("wheel_problem", format!("delta {delta} outside (0, 1)")));
        }
        Ok(WheelProblem { delta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditObservation {
    pub x: [f64; 2],
    pub arm: u8,
    pub reward: f64,
}

/// Uniform draw on the closed unit disk via polar coordinates with √u radius.
pub fn sample_x(rng: &mut impl Rng) -> [f64; 2] {
    let radius = rng.gen::<f64>().sqrt();
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    [radius * theta.cos(), radius * theta.sin()]
}

fn norm(x: [f64; 2]) -> f64 {
    (x[0] * x[0] + x[1] * x[1]).sqrt()
}

/// Arm 1 inside ‖X‖ ≤ δ; otherwise one arm per quadrant:
/// (+,+)→2, (−,+)→3, (−,−)→4, (+,−)→5, with 0 counting as positive.
pub fn optimal_arm(x: [f64; 2], delta: f64) -> Result<u8> {
    if norm(x) > 1.0 + 1e-12 {
        return Err(Error::domain("optimal_arm", format!("‖X‖ = {} > 1", norm(x))));
    }
    if norm(x) <= delta {
        return Ok(1);
    }
    Ok(match (x[0] >= 0.0, x[1] >= 0.0) {
        (true, true) => 2,
        (false, true) => 3,
        (false, false) => 4,
        (true, false) => 5,
    })
}

/// Mean of the reward law for (X, arm).
pub fn expected_reward(x: [f64; 2], arm: u8, delta: f64) -> Result<f64> {
    if !(1..=N_ARMS as u8).contains(&arm) {
        return Err(Error::domain("reward", format!("arm {arm} outside 1..=5")));
    }
    if arm == 1 {
        return Ok(INNER_OPTIMAL_MEAN);
    }
    Ok(if optimal_arm(x, delta)? == arm { OUTER_OPTIMAL_MEAN } else { SUBOPTIMAL_MEAN })
}

/// One stochastic reward draw.
pub fn reward(x: [f64; 2], arm: u8, delta: f64, rng: &mut impl Rng) -> Result<f64> {
    let mean = expected_reward(x, arm, delta)?;
    Ok(rng.sample(Normal::new(mean, REWARD_STD).expect("valid std")))
}

/// Best attainable expected reward at X.
pub fn optimal_expected_reward(x: [f64; 2], delta: f64) -> Result<f64> {
    expected_reward(x, optimal_arm(x, delta)?, delta)
}

/// Encoder-ready input row for (X, arm).
pub fn bandit_input(x: [f64; 2], arm: u8) -> [f64; BANDIT_X_DIM] {
    let mut row = [0.0; BANDIT_X_DIM];
    row[0] = x[0];
    row[1] = x[1];
    row[2 + (arm - 1) as usize] = 1.0;
    row
}

/// One (X, arm, reward) tuple. Arms come from an even mixture of a uniform
/// policy and the optimal policy, so pre-training covers both the
/// exploration-heavy and the exploitation-heavy histories an agent produces.
pub fn sample_tuple(delta: f64, rng: &mut impl Rng) -> Result<BanditObservation> {
    let x = sample_x(rng);
    let arm = if rng.gen::<bool>() {
        rng.gen_range(1..=N_ARMS as u8)
    } else {
        optimal_arm(x, delta)?
    };
    let r = reward(x, arm, delta, rng)?;
    Ok(BanditObservation { x, arm, reward: r })
}

/// Pre-training batch: `problems` wheel problems with δ ~ U(0,1), `points`
/// tuples each, a uniform `n_context`-subset observed, targets all points.
pub fn pretrain_batch(
    problems: usize,
    points: usize,
    n_context: usize,
    rng: &mut Prng,
) -> Result<Vec<FunctionTask>> {
    if n_context < 1 || n_context > points {
        return Err(Error::domain(
            "pretrain_batch",
            format!("n_context {n_context} outside 1..={points}"),
        ));
    }
    (0..problems)
        .map(|_| {
            let delta = rng.gen::<f64>();
            let mut xs = Vec::with_capacity(points * BANDIT_X_DIM);
            let mut ys = Vec::with_capacity(points);
            for _ in 0..points {
                let obs = sample_tuple(delta, rng)?;
                xs.extend(bandit_input(obs.x, obs.arm));
                ys.push(obs.reward);
            }
            let context_idx = rand::seq::index::sample(rng, points, n_context).into_vec();
            FunctionTask::new(
                Tensor::new(vec![points, BANDIT_X_DIM], xs)?,
                Tensor::new(vec![points, 1], ys)?,
                context_idx,
            )
        })
        .collect()
}

// ── agents ───────────────────────────────────────────────────────────

/// Per-trial regret, raw; normalisation happens across trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    /// Σ_t (optimal expected reward − received reward).
    pub cumulative_regret: f64,
    /// Mean per-step expected regret of the frozen final policy.
    pub simple_regret: f64,
}

/// Rolling mean of per-observation encodings, capped at [`HISTORY_CAP`],
/// so each bandit step encodes exactly one new observation.
struct RollingContext {
    rows: VecDeque<Vec<f64>>,
    sum: Vec<f64>,
}

impl RollingContext {
    fn new(r_dim: usize) -> Self {
        RollingContext { rows: VecDeque::new(), sum: vec![0.0; r_dim] }
    }

    fn push(&mut self, row: Vec<f64>) {
        for (s, v) in self.sum.iter_mut().zip(&row) {
            *s += v;
        }
        self.rows.push_back(row);
        if self.rows.len() > HISTORY_CAP {
            let old = self.rows.pop_front().expect("non-empty");
            for (s, v) in self.sum.iter_mut().zip(&old) {
                *s -= v;
            }
        }
    }

    fn representation(&self) -> Tensor {
        if self.rows.is_empty() {
            return Tensor::zeros(vec![self.sum.len()]);
        }
        let n = self.rows.len() as f64;
        Tensor::from_parts(vec![self.sum.len()], self.sum.iter().map(|s| s / n).collect())
    }
}

/// Thompson sampling with the model: one latent draw per step, greedy arm
/// choice on the decoded means over the five candidate inputs.
pub fn run_np_agent(model: &NpModel, delta: f64, horizon: usize, rng: &mut Prng) -> Result<RegretReport> {
    WheelProblem::new(delta)?;
    if horizon == 0 {
        return Err(Error::domain("run_np_agent", "horizon must be at least 1"));
    }
    if model.config.x_dim != BANDIT_X_DIM || model.config.y_dim != 1 {
        return Err(Error::shape(
            "run_np_agent",
            format!("model is {}→{}, bandit needs {BANDIT_X_DIM}→1", model.config.x_dim, model.config.y_dim),
        ));
    }
    let mut ctx = RollingContext::new(model.config.r_dim);
    let mut cumulative = 0.0;

    for _ in 0..horizon {
        let x = sample_x(rng);
        let arm = np_choose_arm(model, &ctx, x, rng)?;
        let r = reward(x, arm, delta, rng)?;
        cumulative += optimal_expected_reward(x, delta)? - r;

        let pair_row: Vec<f64> = bandit_input(x, arm).iter().copied().chain([r]).collect();
        let pairs = Tensor::new(vec![1, BANDIT_X_DIM + 1], pair_row)?;
        let enc = model.encode(&pairs)?;
        ctx.push(enc.into_data());
    }

    // Frozen-policy quality over fresh contexts, no further updates.
    let mut simple = 0.0;
    for _ in 0..SIMPLE_REGRET_CONTEXTS {
        let x = sample_x(rng);
        let arm = np_choose_arm(model, &ctx, x, rng)?;
        simple += optimal_expected_reward(x, delta)? - expected_reward(x, arm, delta)?;
    }
    Ok(RegretReport { cumulative_regret: cumulative, simple_regret: simple / SIMPLE_REGRET_CONTEXTS as f64 })
}

fn np_choose_arm(model: &NpModel, ctx: &RollingContext, x: [f64; 2], rng: &mut Prng) -> Result<u8> {
    let dist = model.latent(&ctx.representation())?;
    let z = dist.sample(rng)?;
    let mut rows = Vec::with_capacity(N_ARMS * BANDIT_X_DIM);
    for arm in 1..=N_ARMS as u8 {
        rows.extend(bandit_input(x, arm));
    }
    let candidates = Tensor::new(vec![N_ARMS, BANDIT_X_DIM], rows)?;
    let pred = model.decode(&z, &candidates)?;
    let mut best = 0usize;
    for i in 1..N_ARMS {
        if pred.mean.at(i, 0) > pred.mean.at(best, 0) {
            best = i;
        }
    }
    Ok((best + 1) as u8)
}

/// Picks arms uniformly at random; same regret accounting as the model agent.
pub fn run_uniform_agent(delta: f64, horizon: usize, rng: &mut Prng) -> Result<RegretReport> {
    WheelProblem::new(delta)?;
    if horizon == 0 {
        return Err(Error::domain("run_uniform_agent", "horizon must be at least 1"));
    }
    let mut cumulative = 0.0;
    for _ in 0..horizon {
        let x = sample_x(rng);
        let arm = rng.gen_range(1..=N_ARMS as u8);
        let r = reward(x, arm, delta, rng)?;
        cumulative += optimal_expected_reward(x, delta)? - r;
    }
    let mut simple = 0.0;
    for _ in 0..SIMPLE_REGRET_CONTEXTS {
        let x = sample_x(rng);
        let arm = rng.gen_range(1..=N_ARMS as u8);
        simple += optimal_expected_reward(x, delta)? - expected_reward(x, arm, delta)?;
    }
    Ok(RegretReport { cumulative_regret: cumulative, simple_regret: simple / SIMPLE_REGRET_CONTEXTS as f64 })
}

// ── evaluation table ─────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BanditRow {
    pub delta: f64,
    pub agent: String,
    pub metric: String,
    /// Mean regret ×100 / uniform-agent mean.
    pub mean: f64,
    pub stderr: f64,
    pub n_trials: usize,
}

/// Runs both agents `n_trials` times per δ and reports regrets normalised
/// so the uniform agent reads exactly 100.
pub fn evaluate_bandit(
    model: &NpModel,
    deltas: &[f64],
    n_trials: usize,
    horizon: usize,
    rng: &mut Prng,
) -> Result<Vec<BanditRow>> {
    if deltas.is_empty() {
        return Err(Error::domain("evaluate_bandit", "empty delta list"));
    }
    if n_trials < 2 {
        return Err(Error::domain("evaluate_bandit", "need at least 2 trials for standard errors"));
    }
    let mut rows = Vec::new();
    for &delta in deltas {
        let np_seeds: Vec<u64> = (0..n_trials).map(|_| rng.gen()).collect();
        let uni_seeds: Vec<u64> = (0..n_trials).map(|_| rng.gen()).collect();

        let np_runs: Vec<RegretReport> = np_seeds
            .par_iter()
            .map(|&s| run_np_agent(model, delta, horizon, &mut rng::seeded(s)))
            .collect::<Result<_>>()?;
        let uni_runs: Vec<RegretReport> = uni_seeds
            .par_iter()
            .map(|&s| run_uniform_agent(delta, horizon, &mut rng::seeded(s)))
            .collect::<Result<_>>()?;

        for (metric, pick) in [
            ("cumulative", (|r: &RegretReport| r.cumulative_regret) as fn(&RegretReport) -> f64),
            ("simple", |r: &RegretReport| r.simple_regret),
        ] {
            let np_vals: Vec<f64> = np_runs.iter().map(pick).collect();
            let uni_vals: Vec<f64> = uni_runs.iter().map(pick).collect();
            let uni_mean = mean(&uni_vals);
            let scale = 100.0 / uni_mean;
            rows.push(BanditRow {
                delta,
                agent: "np".into(),
                metric: metric.into(),
                mean: mean(&np_vals) * scale,
                stderr: stderr(&np_vals) * scale,
                n_trials,
            });
            rows.push(BanditRow {
                delta,
                agent: "uniform".into(),
                metric: metric.into(),
                mean: 100.0,
                stderr: stderr(&uni_vals) * scale,
                n_trials,
            });
        }
    }
    Ok(rows)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn stderr(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0);
    (var / v.len() as f64).sqrt()
}
