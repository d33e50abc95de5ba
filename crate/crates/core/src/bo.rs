//! Thompson-sampling minimisation of 1-D black-box functions drawn from a GP
//! prior, against an exact-GP oracle (true kernel) and random search. The
//! headline metric is mean steps-to-minimum normalised by random search over
//! the same set of problems.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{sample_posterior, sample_prior, KernelRange, RbfKernel};
use crate::model::NpModel;
use crate::rng::{self, Prng};
use crate::task::pair_rows;
use crate::tensor::Tensor;

/// One minimisation problem: a function tabulated on an even grid, its exact
/// minimum, and the success tolerance.
#[derive(Debug, Clone)]
pub struct BoProblem {
    pub kernel: RbfKernel,
    pub grid_xs: Tensor,
    pub objective: Vec<f64>,
    pub global_min: f64,
    pub tolerance: f64,
}

impl BoProblem {
    /// Draws an objective from the GP prior on an evenly spaced grid; the
    /// global minimum comes from an exhaustive scan, and success means
    /// reaching it within `tolerance_frac` of the objective's range.
    pub fn sample(
        range: &KernelRange,
        grid_size: usize,
        interval: [f64; 2],
        tolerance_frac: f64,
        rng: &mut Prng,
    ) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::domain("bo_problem", "grid must be non-empty"));
        }
        let [a, b] = interval;
        if !(a < b) && grid_size > 1 {
            return Err(Error::domain("bo_problem", format!("interval [{a}, {b}] invalid")));
        }
        let kernel = range.sample(rng);
        let xs: Vec<f64> = (0..grid_size)
            .map(|i| {
                if grid_size == 1 {
                    (a + b) / 2.0
                } else {
                    a + (b - a) * i as f64 / (grid_size - 1) as f64
                }
            })
            .collect();
        let grid_xs = Tensor::new(vec![grid_size, 1], xs)?;
        let objective = sample_prior(&grid_xs, &kernel, rng)?.into_data();
        let global_min = objective.iter().cloned().fold(f64::INFINITY, f64::min);
        let global_max = objective.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tolerance = tolerance_frac * (global_max - global_min);
        Ok(BoProblem { kernel, grid_xs, objective, global_min, tolerance })
    }

    pub fn grid_size(&self) -> usize {
        self.objective.len()
    }
}

/// Proposal rule for one optimisation step.
pub enum BoMethod<'a> {
    /// Thompson sampling with a trained model: one latent draw, argmin of the
    /// decoded means over the grid.
    Np(&'a NpModel),
    /// Thompson sampling from the exact GP posterior under the true kernel.
    GpOracle,
    /// Uniform grid proposals.
    Random,
}

impl BoMethod<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            BoMethod::Np(_) => "np",
            BoMethod::GpOracle => "gp_oracle",
            BoMethod::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoTrace {
    /// Evaluated (x, y) pairs in order.
    pub evals: Vec<(f64, f64)>,
    /// First 1-based step with y ≤ global_min + tolerance; budget if never.
    pub steps_to_min: usize,
}

/// Smallest value wins; ties break to the lowest index.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// One Thompson step with the model: draws z from the posterior over the
/// evaluated pairs and returns the grid index minimising the decoded mean.
pub fn np_thompson_step(
    model: &NpModel,
    context_pairs: &Tensor,
    grid_xs: &Tensor,
    rng: &mut Prng,
) -> Result<usize> {
    if grid_xs.rows() == 0 {
        return Err(Error::domain("np_thompson_step", "empty grid"));
    }
    let post = model.posterior(context_pairs)?;
    let z = post.sample(rng)?;
    let pred = model.decode(&z, grid_xs)?;
    let means: Vec<f64> = (0..grid_xs.rows()).map(|i| pred.mean.at(i, 0)).collect();
    Ok(argmin(&means))
}

/// Propose → evaluate → append until the minimum is reached (within
/// tolerance) or the budget runs out.
pub fn run_bo(method: &BoMethod, problem: &BoProblem, budget: usize, rng: &mut Prng) -> Result<BoTrace> {
    if budget == 0 {
        return Err(Error::domain("run_bo", "budget must be at least 1"));
    }
    let g = problem.grid_size();
    let mut ctx_xs: Vec<f64> = Vec::new();
    let mut ctx_ys: Vec<f64> = Vec::new();
    let mut evals = Vec::new();
    let mut steps_to_min = budget;

    for step in 1..=budget {
        let idx = match method {
            BoMethod::Np(model) => {
                let xs = Tensor::new(vec![ctx_xs.len(), 1], ctx_xs.clone())?;
                let ys = Tensor::new(vec![ctx_ys.len(), 1], ctx_ys.clone())?;
                let pairs = pair_rows(&xs, &ys);
                np_thompson_step(model, &pairs, &problem.grid_xs, rng)?
            }
            BoMethod::GpOracle => {
                let xs = Tensor::new(vec![ctx_xs.len(), 1], ctx_xs.clone())?;
                let ys = Tensor::new(vec![ctx_ys.len(), 1], ctx_ys.clone())?;
                let draw = sample_posterior(&xs, &ys, &problem.kernel, &problem.grid_xs, rng)?;
                argmin(draw.data())
            }
            BoMethod::Random => rng.gen_range(0..g),
        };
        let x = problem.grid_xs.at(idx, 0);
        let y = problem.objective[idx];
        evals.push((x, y));
        ctx_xs.push(x);
        ctx_ys.push(y);
        if y <= problem.global_min + problem.tolerance {
            steps_to_min = step;
            break;
        }
    }
    Ok(BoTrace { evals, steps_to_min })
}

/// Trial-generation parameters shared by every method.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoSetup {
    pub kernel_range: KernelRange,
    pub grid_size: usize,
    pub interval: [f64; 2],
    /// Success tolerance as a fraction of the objective's range on the grid.
    pub tolerance_frac: f64,
    pub budget: usize,
}

impl Default for BoSetup {
    fn default() -> Self {
        BoSetup {
            kernel_range: KernelRange::default(),
            grid_size: 256,
            interval: [-2.0, 2.0],
            tolerance_frac: 0.02,
            budget: 256,
        }
    }
}

// Per-trial stream ids: the problem stream is shared by all methods so they
// optimise the same functions; random search always runs on its own stream,
// which makes normalized_steps(random) exactly 1.
fn problem_stream(trial: u64) -> u64 {
    4 * trial
}
fn decision_stream(trial: u64, method: &BoMethod) -> u64 {
    4 * trial
        + match method {
            BoMethod::Np(_) => 1,
            BoMethod::GpOracle => 2,
            BoMethod::Random => 3,
        }
}

/// Steps-to-minimum for each of `n_trials` seeded problems.
pub fn run_trials(method: &BoMethod, setup: &BoSetup, n_trials: usize, seed: u64) -> Result<Vec<usize>>
where
{
    let trials: Vec<u64> = (0..n_trials as u64).collect();
    trials
        .par_iter()
        .map(|&t| {
            let problem = BoProblem::sample(
                &setup.kernel_range,
                setup.grid_size,
                setup.interval,
                setup.tolerance_frac,
                &mut rng::stream(seed, problem_stream(t)),
            )?;
            let trace = run_bo(method, &problem, setup.budget, &mut rng::stream(seed, decision_stream(t, method)))?;
            Ok(trace.steps_to_min)
        })
        .collect()
}

/// mean(steps of `method`) / mean(steps of random search) over the same
/// seeded trial set.
pub fn normalized_steps(method: &BoMethod, setup: &BoSetup, n_trials: usize, seed: u64) -> Result<f64> {
    if n_trials == 0 {
        return Err(Error::domain("normalized_steps", "n_trials must be at least 1"));
    }
    let steps = run_trials(method, setup, n_trials, seed)?;
    let baseline = run_trials(&BoMethod::Random, setup, n_trials, seed)?;
    let mean = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len() as f64;
    // random search always needs ≥ 1 step, so the denominator is ≥ 1
    Ok(mean(&steps) / mean(&baseline))
}
