//! Prints one Thompson-sampling optimisation trace step by step:
//!
//!   cargo run --release -p np-core --example bo_trace -- <checkpoint> [trial-seed]

use np_core::bo::{run_bo, BoMethod, BoProblem, BoSetup};
use np_core::rng;
use np_core::train::load_model;

fn main() {
    let mut args = std::env::args().skip(1);
    let checkpoint = args.next().expect("usage: bo_trace <checkpoint> [seed]");
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(0);

    let model = load_model(std::path::Path::new(&checkpoint)).expect("loading checkpoint");
    let setup = BoSetup::default();
    let problem = BoProblem::sample(
        &setup.kernel_range,
        setup.grid_size,
        setup.interval,
        setup.tolerance_frac,
        &mut rng::stream(seed, 0),
    )
    .expect("sampling problem");

    let argmin = problem
        .objective
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    println!(
        "kernel l={:.3} sf2={:.3}; min {:.4} at x={:.3}; tol {:.4}",
        problem.kernel.lengthscale,
        problem.kernel.signal_variance,
        problem.global_min,
        problem.grid_xs.at(argmin, 0),
        problem.tolerance
    );

    let trace = run_bo(&BoMethod::Np(&model), &problem, setup.budget, &mut rng::stream(seed, 1))
        .expect("running optimisation");
    for (i, (x, y)) in trace.evals.iter().enumerate() {
        println!("step {:>3}: x = {x:+.4}  y = {y:+.4}", i + 1);
    }
    println!("steps_to_min = {}", trace.steps_to_min);
}
