//! Gaussian-process machinery: the squared-exponential kernel, Cholesky
//! factorisation with jitter escalation, prior/posterior sampling and batch
//! generation of regression tasks with per-task kernel hyperparameters.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{standard_normal_vec, Prng};
use crate::task::FunctionTask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl RbfKernel {
    pub fn new(lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        if lengthscale <= 0.0 || signal_variance <= 0.0 || noise_variance < 0.0 {
            return Err(Error::domain(
                "rbf_kernel",
                format!("need ℓ > 0, σ_f² > 0, σ_n² ≥ 0; got ({lengthscale}, {signal_variance}, {noise_variance})"),
            ));
        }
        Ok(RbfKernel { lengthscale, signal_variance, noise_variance })
    }

    /// Noise-free covariance between two points.
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_variance * (-sq / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

/// Intervals the per-task kernel hyperparameters are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelRange {
    pub lengthscale: [f64; 2],
    pub signal_variance: [f64; 2],
    pub noise_variance: f64,
}

impl KernelRange {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("lengthscale", self.lengthscale), ("signal_variance", self.signal_variance)] {
            if !(0.0 < lo && lo <= hi) {
                return Err(Error::domain("kernel_range", format!("{name} interval [{lo}, {hi}] invalid")));
            }
        }
        if self.noise_variance < 0.0 {
            return Err(Error::domain("kernel_range", "negative noise variance"));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> RbfKernel {
        let draw = |[lo, hi]: [f64; 2], rng: &mut dyn rand::RngCore| {
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..hi)
            }
        };
        RbfKernel {
            lengthscale: draw(self.lengthscale, rng),
            signal_variance: draw(self.signal_variance, rng),
            noise_variance: self.noise_variance,
        }
    }
}

impl Default for KernelRange {
    /// Produces curves on x ∈ [−2, 2] with visible lengthscale variety.
    fn default() -> Self {
        KernelRange { lengthscale: [0.1, 0.6], signal_variance: [0.1, 1.0], noise_variance: 1e-4 }
    }
}

/// K[i,j] = σ_f²·exp(−‖x_i−x_j‖²/(2ℓ²)) + σ_n²·1[i=j], symmetric by
/// construction (the upper triangle is mirrored, not recomputed).
pub fn rbf_matrix(xs: &Tensor, k: &RbfKernel) -> Result<Tensor> {
    RbfKernel::new(k.lengthscale, k.signal_variance, k.noise_variance)?;
    let n = xs.rows();
    if n == 0 {
        return Err(Error::shape("rbf_matrix", "need at least one point"));
    }
    let mut m = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        m.set(i, i, k.signal_variance + k.noise_variance);
        for j in 0..i {
            let v = k.eval(xs.row(i), xs.row(j));
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    Ok(m)
}

fn cholesky_plain(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + j] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Lower-triangular factor with L·Lᵀ = K (+ jitter). Jitter starts at
/// 1e-10·mean(diag) and escalates ×10 up to 1e-4·mean(diag) before failing.
pub fn cholesky(k: &Tensor) -> Result<Tensor> {
    let n = k.rows();
    if k.shape().len() != 2 || k.cols() != n {
        return Err(Error::shape("cholesky", format!("expected square matrix, got {:?}", k.shape())));
    }
    if let Some(l) = cholesky_plain(k.data(), n) {
        return Ok(Tensor::from_parts(vec![n, n], l));
    }
    let mean_diag = (0..n).map(|i| k.at(i, i)).sum::<f64>() / n as f64;
    let mut coeff = 1e-10;
    while coeff <= 1e-4 {
        let mut jittered = k.data().to_vec();
        for i in 0..n {
            jittered[i * n + i] += coeff * mean_diag.abs().max(1e-300);
        }
        if let Some(l) = cholesky_plain(&jittered, n) {
            return Ok(Tensor::from_parts(vec![n, n], l));
        }
        coeff *= 10.0;
    }
    Err(Error::NotPositiveDefinite { n })
}

/// Solves L y = b for lower-triangular L.
fn forward_sub(l: &Tensor, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l.at(i, j) * y[j];
        }
        y[i] = s / l.at(i, i);
    }
    y
}

/// Solves Lᵀ x = y for lower-triangular L.
fn back_sub(l: &Tensor, y: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in i + 1..n {
            s -= l.at(j, i) * x[j];
        }
        x[i] = s / l.at(i, i);
    }
    x
}

/// Draws y = L·ε at the given inputs, a mean-zero sample from the prior.
pub fn sample_prior(xs: &Tensor, k: &RbfKernel, rng: &mut Prng) -> Result<Tensor> {
    let l = cholesky(&rbf_matrix(xs, k)?)?;
    let n = xs.rows();
    let eps = standard_normal_vec(rng, n);
    let mut ys = vec![0.0; n];
    for i in 0..n {
        for j in 0..=i {
            ys[i] += l.at(i, j) * eps[j];
        }
    }
    Tensor::new(vec![n, 1], ys)
}

/// Exact GP regression. Returns the latent mean and variance (no observation
/// noise added back); variance is clamped at zero after numerical round-off.
pub fn gp_posterior(
    context_xs: &Tensor,
    context_ys: &Tensor,
    k: &RbfKernel,
    query_xs: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let n = context_xs.rows();
    if n == 0 {
        return Err(Error::domain("gp_posterior", "context must be non-empty"));
    }
    if context_ys.rows() != n || context_ys.cols() != 1 {
        return Err(Error::shape("gp_posterior", "context ys must be [n, 1]"));
    }
    let l = cholesky(&rbf_matrix(context_xs, k)?)?;
    let alpha = back_sub(&l, &forward_sub(&l, context_ys.data()));

    let m = query_xs.rows();
    let mut mean = vec![0.0; m];
    let mut var = vec![0.0; m];
    let mut kstar = vec![0.0; n];
    for qi in 0..m {
        let q = query_xs.row(qi);
        for (j, ks) in kstar.iter_mut().enumerate() {
            *ks = k.eval(q, context_xs.row(j));
        }
        mean[qi] = kstar.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let v = forward_sub(&l, &kstar);
        let reduction: f64 = v.iter().map(|x| x * x).sum();
        var[qi] = (k.signal_variance - reduction).max(0.0);
    }
    Ok((Tensor::new(vec![m, 1], mean)?, Tensor::new(vec![m, 1], var)?))
}

/// One joint draw from the posterior over the query points.
pub fn sample_posterior(
    context_xs: &Tensor,
    context_ys: &Tensor,
    k: &RbfKernel,
    query_xs: &Tensor,
    rng: &mut Prng,
) -> Result<Tensor> {
    let m = query_xs.rows();
    if m == 0 {
        return Ok(Tensor::zeros(vec![0, 1]));
    }
    let n = context_xs.rows();
    if n == 0 {
        return sample_prior(query_xs, k, rng);
    }
    let l = cholesky(&rbf_matrix(context_xs, k)?)?;
    let alpha = back_sub(&l, &forward_sub(&l, context_ys.data()));

    // Posterior covariance K** − K*ᵀ K⁻¹ K* over the latent function.
    let mut kstar_cols: Vec<Vec<f64>> = Vec::with_capacity(m); // per query: L⁻¹ k*
    let mut mean = vec![0.0; m];
    for qi in 0..m {
        let q = query_xs.row(qi);
        let kstar: Vec<f64> = (0..n).map(|j| k.eval(q, context_xs.row(j))).collect();
        mean[qi] = kstar.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        kstar_cols.push(forward_sub(&l, &kstar));
    }
    let mut cov = Tensor::zeros(vec![m, m]);
    for i in 0..m {
        for j in 0..=i {
            let prior = if i == j {
                k.signal_variance
            } else {
                k.eval(query_xs.row(i), query_xs.row(j))
            };
            let red: f64 = kstar_cols[i].iter().zip(&kstar_cols[j]).map(|(a, b)| a * b).sum();
            let v = prior - red;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    let lp = cholesky(&cov)?;
    let eps = standard_normal_vec(rng, m);
    let mut ys = mean;
    for i in 0..m {
        for j in 0..=i {
            ys[i] += lp.at(i, j) * eps[j];
        }
    }
    Tensor::new(vec![m, 1], ys)
}

/// Draws one regression task: kernel from `range`, inputs uniform on
/// `x_interval`, outputs from the prior, context a uniform subset.
pub fn sample_task(
    range: &KernelRange,
    n_points: usize,
    context_range: [usize; 2],
    x_interval: [f64; 2],
    rng: &mut Prng,
) -> Result<(RbfKernel, FunctionTask)> {
    range.validate()?;
    let [c_lo, c_hi] = context_range;
    if c_lo < 1 || c_hi < c_lo || c_hi > n_points {
        return Err(Error::domain(
            "sample_task",
            format!("context range [{c_lo}, {c_hi}] invalid for {n_points} points"),
        ));
    }
    let [a, b] = x_interval;
    if !(a < b) {
        return Err(Error::domain("sample_task", format!("x interval [{a}, {b}] invalid")));
    }
    let kernel = range.sample(rng);
    let xs_data: Vec<f64> = (0..n_points).map(|_| rng.gen_range(a..b)).collect();
    let xs = Tensor::new(vec![n_points, 1], xs_data)?;
    let ys = sample_prior(&xs, &kernel, rng)?;
    let n_ctx = rng.gen_range(c_lo..=c_hi);
    let context_idx = sample_indices(rng, n_points, n_ctx).into_vec();
    Ok((kernel, FunctionTask::new(xs, ys, context_idx)?))
}

/// A fresh batch of tasks sharing one hyperparameter range.
pub fn make_batch(
    range: &KernelRange,
    batch: usize,
    n_points: usize,
    context_range: [usize; 2],
    x_interval: [f64; 2],
    rng: &mut Prng,
) -> Result<Vec<FunctionTask>> {
    (0..batch)
        .map(|_| sample_task(range, n_points, context_range, x_interval, rng).map(|(_, t)| t))
        .collect()
}

// ── line-delimited task fixtures ─────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskRecord {
    pub kernel: RbfKernel,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
    pub context_idx: Vec<usize>,
}

impl TaskRecord {
    pub fn from_task(kernel: RbfKernel, task: &FunctionTask) -> Self {
        let row_vecs = |t: &Tensor| (0..t.rows()).map(|i| t.row(i).to_vec()).collect();
        TaskRecord {
            kernel,
            xs: row_vecs(task.xs()),
            ys: row_vecs(task.ys()),
            context_idx: task.context_idx().to_vec(),
        }
    }

    pub fn into_task(self) -> Result<(RbfKernel, FunctionTask)> {
        let xs = Tensor::matrix(&self.xs)?;
        let ys = Tensor::matrix(&self.ys)?;
        Ok((self.kernel, FunctionTask::new(xs, ys, self.context_idx)?))
    }
}

/// One JSON object per line, suitable as a cross-implementation fixture.
pub fn write_tasks_jsonl(records: &[TaskRecord], w: &mut impl std::io::Write) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut *w, rec)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_tasks_jsonl(r: impl std::io::BufRead) -> Result<Vec<TaskRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
