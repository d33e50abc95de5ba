//! The Neural Process model: a per-pair encoder, a mean aggregator producing
//! one global representation, latent heads for z ~ N(μ(r), Iσ(r)), and a
//! conditional decoder mapping (x, z) to a predictive Gaussian per target.
//!
//! The training loss conditions the variational posterior on the full target
//! set and uses the context posterior as the (approximate) conditional prior,
//! so the KL term vanishes exactly when targets add nothing to the context.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{mlp_forward, mlp_forward_tape, Activation, MlpSpec, ParamStore, TapeBinding};
use crate::rng::{standard_normal_vec, Prng};
use crate::tape::{sigmoid_scalar, softplus_scalar, Tape, Var};
use crate::task::FunctionTask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsNoise {
    /// Per-target std predicted by the decoder: floor + softplus(raw).
    Heteroscedastic,
    /// Constant observation std.
    Fixed(f64),
}

/// Which targets the reconstruction term sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconTargets {
    /// All targets, context included.
    All,
    /// Only targets outside the context.
    NonContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpConfig {
    pub x_dim: usize,
    pub y_dim: usize,
    pub r_dim: usize,
    pub z_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
    /// Lower bound of the latent std map; σ(r) ∈ (floor, 1).
    pub sigma_floor_latent: f64,
    /// Lower bound of the observation std.
    pub sigma_floor_obs: f64,
    pub obs_noise: ObsNoise,
    pub recon_targets: ReconTargets,
}

impl NpConfig {
    /// Defaults for 1-D function regression.
    pub fn for_1d() -> Self {
        NpConfig {
            x_dim: 1,
            y_dim: 1,
            r_dim: 64,
            z_dim: 64,
            encoder_hidden: vec![128, 128, 128],
            latent_hidden: vec![128],
            decoder_hidden: vec![128, 128, 128],
            activation: Activation::Relu,
            sigma_floor_latent: 0.1,
            sigma_floor_obs: 0.02,
            obs_noise: ObsNoise::Heteroscedastic,
            recon_targets: ReconTargets::All,
        }
    }

    /// Defaults for pixel-coordinate image regression.
    pub fn for_images() -> Self {
        NpConfig { x_dim: 2, r_dim: 128, z_dim: 128, ..NpConfig::for_1d() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("x_dim", self.x_dim),
            ("y_dim", self.y_dim),
            ("r_dim", self.r_dim),
            ("z_dim", self.z_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.sigma_floor_latent > 0.0 && self.sigma_floor_latent < 1.0) {
            return Err(Error::Config(format!(
                "sigma_floor_latent must lie in (0,1), got {}",
                self.sigma_floor_latent
            )));
        }
        if self.sigma_floor_obs <= 0.0 {
            return Err(Error::Config("sigma_floor_obs must be positive".into()));
        }
        if let ObsNoise::Fixed(s) = self.obs_noise {
            if s <= 0.0 {
                return Err(Error::Config("fixed observation std must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn encoder_spec(&self) -> Result<MlpSpec> {
        let mut w = vec![self.x_dim + self.y_dim];
        w.extend(&self.encoder_hidden);
        w.push(self.r_dim);
        MlpSpec::new(w, self.activation)
    }

    pub fn latent_spec(&self) -> Result<MlpSpec> {
        let mut w = vec![self.r_dim];
        w.extend(&self.latent_hidden);
        w.push(2 * self.z_dim);
        MlpSpec::new(w, self.activation)
    }

    pub fn decoder_spec(&self) -> Result<MlpSpec> {
        let mut w = vec![self.x_dim + self.z_dim];
        w.extend(&self.decoder_hidden);
        w.push(2 * self.y_dim);
        MlpSpec::new(w, self.activation)
    }
}

/// Diagonal Gaussian over the global latent z.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDist {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl LatentDist {
    pub fn sample_with_eps(&self, eps: &Tensor) -> Result<Tensor> {
        crate::tensor::reparameterize(&self.mu, &self.sigma, eps)
    }

    pub fn sample(&self, rng: &mut Prng) -> Result<Tensor> {
        let eps = Tensor::vector(standard_normal_vec(rng, self.mu.len()));
        self.sample_with_eps(&eps)
    }
}

/// Predictive Gaussian at each target for one latent draw.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: Tensor,
    pub std: Tensor,
    pub z_used: Tensor,
}

thread_local! {
    static ENCODER_ROWS: Cell<u64> = const { Cell::new(0) };
    static DECODER_ROWS: Cell<u64> = const { Cell::new(0) };
}

/// Resets this thread's forward-pass row counters.
pub fn reset_forward_counters() {
    ENCODER_ROWS.with(|c| c.set(0));
    DECODER_ROWS.with(|c| c.set(0));
}

/// (encoder rows, decoder rows) evaluated on this thread since the last reset.
pub fn forward_counters() -> (u64, u64) {
    (ENCODER_ROWS.with(Cell::get), DECODER_ROWS.with(Cell::get))
}

const ENC: &str = "enc";
const LAT: &str = "lat";
const DEC: &str = "dec";

#[derive(Debug, Clone)]
pub struct NpModel {
    pub config: NpConfig,
    pub params: ParamStore,
}

impl NpModel {
    /// Fresh model with seeded Glorot weights.
    pub fn init(config: NpConfig, rng: &mut Prng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        config.encoder_spec()?.init_params(ENC, rng, &mut params)?;
        config.latent_spec()?.init_params(LAT, rng, &mut params)?;
        config.decoder_spec()?.init_params(DEC, rng, &mut params)?;
        Ok(NpModel { config, params })
    }

    /// Wraps existing parameters, checking every tensor against the config.
    pub fn from_parts(config: NpConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let mut expected = 0;
        for (prefix, spec) in [
            (ENC, config.encoder_spec()?),
            (LAT, config.latent_spec()?),
            (DEC, config.decoder_spec()?),
        ] {
            for l in 0..spec.layer_widths.len() - 1 {
                let (fan_in, fan_out) = (spec.layer_widths[l], spec.layer_widths[l + 1]);
                for (name, shape) in [
                    (format!("{prefix}.w{l}"), vec![fan_in, fan_out]),
                    (format!("{prefix}.b{l}"), vec![fan_out]),
                ] {
                    let t = params.get(&name)?;
                    if t.shape() != shape.as_slice() {
                        return Err(Error::shape(
                            "np_model",
                            format!("{name} has shape {:?}, config expects {shape:?}", t.shape()),
                        ));
                    }
                    expected += 1;
                }
            }
        }
        if params.len() != expected {
            return Err(Error::Config(format!(
                "parameter store has {} tensors, config expects {expected}",
                params.len()
            )));
        }
        Ok(NpModel { config, params })
    }

    // ── value-level forward paths ────────────────────────────────────

    /// Mean-aggregated representation of (x, y) pairs; zero vector for an
    /// empty input, which doubles as the learned-prior convention.
    pub fn encode(&self, pairs: &Tensor) -> Result<Tensor> {
        let n = pairs.rows();
        if n == 0 {
            return Ok(Tensor::zeros(vec![self.config.r_dim]));
        }
        ENCODER_ROWS.with(|c| c.set(c.get() + n as u64));
        let h = mlp_forward(&self.config.encoder_spec()?, &self.params, ENC, pairs)?;
        Ok(mean_of_rows(&h))
    }

    /// Latent heads: μ unconstrained, σ = floor + (1−floor)·sigmoid(raw).
    pub fn latent(&self, r: &Tensor) -> Result<LatentDist> {
        if r.len() != self.config.r_dim {
            return Err(Error::shape(
                "latent",
                format!("representation has {} entries, expected {}", r.len(), self.config.r_dim),
            ));
        }
        let rm = r.reshape(vec![1, self.config.r_dim])?;
        let out = mlp_forward(&self.config.latent_spec()?, &self.params, LAT, &rm)?;
        let z = self.config.z_dim;
        let floor = self.config.sigma_floor_latent;
        let mu = Tensor::from_parts(vec![z], out.data()[..z].to_vec());
        let sigma = Tensor::from_parts(
            vec![z],
            out.data()[z..].iter().map(|&raw| floor + (1.0 - floor) * sigmoid_scalar(raw)).collect(),
        );
        Ok(LatentDist { mu, sigma })
    }

    /// q(z | pairs): latent distribution given observations (the posterior
    /// over the function; the learned prior when `pairs` is empty).
    pub fn posterior(&self, pairs: &Tensor) -> Result<LatentDist> {
        let r = self.encode(pairs)?;
        self.latent(&r)
    }

    /// Decodes one latent draw at the target inputs. Rows are independent:
    /// each target sees only (x_i, z).
    pub fn decode(&self, z: &Tensor, xs: &Tensor) -> Result<Prediction> {
        let m = xs.rows();
        if m == 0 {
            return Err(Error::shape("decode", "need at least one target"));
        }
        if z.len() != self.config.z_dim || xs.cols() != self.config.x_dim {
            return Err(Error::shape(
                "decode",
                format!(
                    "z has {} entries (expected {}), xs is {:?} (expected x_dim {})",
                    z.len(),
                    self.config.z_dim,
                    xs.shape(),
                    self.config.x_dim
                ),
            ));
        }
        DECODER_ROWS.with(|c| c.set(c.get() + m as u64));
        let (xd, zd, yd) = (self.config.x_dim, self.config.z_dim, self.config.y_dim);
        let mut input = Vec::with_capacity(m * (xd + zd));
        for i in 0..m {
            input.extend_from_slice(xs.row(i));
            input.extend_from_slice(z.data());
        }
        let input = Tensor::from_parts(vec![m, xd + zd], input);
        let out = mlp_forward(&self.config.decoder_spec()?, &self.params, DEC, &input)?;

        let mut mean = Vec::with_capacity(m * yd);
        let mut std = Vec::with_capacity(m * yd);
        for i in 0..m {
            let row = out.row(i);
            mean.extend_from_slice(&row[..yd]);
            match self.config.obs_noise {
                ObsNoise::Heteroscedastic => {
                    std.extend(row[yd..].iter().map(|&raw| self.config.sigma_floor_obs + softplus_scalar(raw)));
                }
                ObsNoise::Fixed(s) => std.extend(std::iter::repeat_n(s, yd)),
            }
        }
        Ok(Prediction {
            mean: Tensor::from_parts(vec![m, yd], mean),
            std: Tensor::from_parts(vec![m, yd], std),
            z_used: z.clone(),
        })
    }

    /// Draws `n_samples` functions conditioned on the context; samples differ
    /// only through their latent draw.
    pub fn predict(
        &self,
        context_pairs: &Tensor,
        target_xs: &Tensor,
        n_samples: usize,
        rng: &mut Prng,
    ) -> Result<Vec<Prediction>> {
        if n_samples == 0 {
            return Err(Error::domain("predict", "n_samples must be at least 1"));
        }
        let post = self.posterior(context_pairs)?;
        (0..n_samples)
            .map(|_| {
                let z = post.sample(rng)?;
                self.decode(&z, target_xs)
            })
            .collect()
    }

    // ── training loss ────────────────────────────────────────────────

    /// Negative ELBO for one task with noise drawn from `rng`.
    pub fn elbo_loss(&self, task: &FunctionTask, rng: &mut Prng) -> Result<f64> {
        let eps = Tensor::vector(standard_normal_vec(rng, self.config.z_dim));
        self.elbo_loss_with_eps(task, &eps)
    }

    /// Negative ELBO with caller-fixed reparameterization noise. This is the
    /// deterministic surface finite-difference checks probe.
    pub fn elbo_loss_with_eps(&self, task: &FunctionTask, eps: &Tensor) -> Result<f64> {
        let (tape, loss, _) = self.elbo_on_tape(task, eps)?;
        Ok(tape.value(loss).item())
    }

    /// Loss and its gradients for every parameter.
    pub fn elbo_grads(&self, task: &FunctionTask, rng: &mut Prng) -> Result<(f64, ParamStore)> {
        let eps = Tensor::vector(standard_normal_vec(rng, self.config.z_dim));
        self.elbo_grads_with_eps(task, &eps)
    }

    pub fn elbo_grads_with_eps(&self, task: &FunctionTask, eps: &Tensor) -> Result<(f64, ParamStore)> {
        let (tape, loss, binding) = self.elbo_on_tape(task, eps)?;
        let grads = tape.backward(loss)?;
        let gstore = binding.gradients(&tape, &grads, &self.params)?;
        Ok((tape.value(loss).item(), gstore))
    }

    /// loss = KL(q(z|targets) ‖ q(z|context)) − Σ log N(y_i | decode(z, x_i))
    /// with a single z ~ q(z|targets) via the reparameterization.
    fn elbo_on_tape(&self, task: &FunctionTask, eps: &Tensor) -> Result<(Tape, Var, TapeBinding)> {
        if task.x_dim() != self.config.x_dim || task.y_dim() != self.config.y_dim {
            return Err(Error::shape(
                "elbo_loss",
                format!(
                    "task is {}→{}, model is {}→{}",
                    task.x_dim(),
                    task.y_dim(),
                    self.config.x_dim,
                    self.config.y_dim
                ),
            ));
        }
        if task.n_context() == 0 {
            return Err(Error::domain("elbo_loss", "training task needs a non-empty context"));
        }
        if task.n_points() == 0 {
            return Err(Error::domain("elbo_loss", "empty target set"));
        }

        let mut tape = Tape::new();
        let binding = TapeBinding::bind(&mut tape, &self.params);

        let (mu_q, sigma_q) = self.latent_on_tape(&mut tape, &binding, task.all_pairs())?;
        let (mu_p, sigma_p) = self.latent_on_tape(&mut tape, &binding, task.context_pairs())?;
        let kl = tape.kl_diag(mu_q, sigma_q, mu_p, sigma_p)?;
        let z = tape.reparameterize(mu_q, sigma_q, eps.clone())?;

        let recon_idx = match self.config.recon_targets {
            ReconTargets::All => task.target_idx().to_vec(),
            ReconTargets::NonContext => task.non_context_idx(),
        };
        if recon_idx.is_empty() {
            // Nothing outside the context to reconstruct; only the KL remains.
            return Ok((tape, kl, binding));
        }
        let xs_t = task.xs().select_rows(&recon_idx)?;
        let ys_t = task.ys().select_rows(&recon_idx)?;
        let (mean, std) = self.decode_on_tape(&mut tape, &binding, z, &xs_t)?;
        let lp = tape.gaussian_log_pdf(ys_t, mean, std)?;
        let recon = tape.sum(lp)?;
        let loss = tape.sub(kl, recon)?;
        Ok((tape, loss, binding))
    }

    /// Encoder + aggregator + latent heads on the tape → (μ, σ) vectors.
    fn latent_on_tape(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        pairs: Tensor,
    ) -> Result<(Var, Var)> {
        let r = if pairs.rows() == 0 {
            tape.leaf(Tensor::zeros(vec![self.config.r_dim]))
        } else {
            let pv = tape.leaf(pairs);
            let h = mlp_forward_tape(tape, &self.config.encoder_spec()?, binding, ENC, pv)?;
            tape.mean_rows(h)?
        };
        let rm = tape.reshape(r, vec![1, self.config.r_dim])?;
        let out = mlp_forward_tape(tape, &self.config.latent_spec()?, binding, LAT, rm)?;
        let z = self.config.z_dim;
        let mu2 = tape.slice_cols(out, 0, z)?;
        let mu = tape.reshape(mu2, vec![z])?;
        let raw2 = tape.slice_cols(out, z, 2 * z)?;
        let raw = tape.reshape(raw2, vec![z])?;
        let floor = self.config.sigma_floor_latent;
        let sg = tape.sigmoid(raw)?;
        let scaled = tape.scale(sg, 1.0 - floor)?;
        let sigma = tape.add_scalar(scaled, floor)?;
        Ok((mu, sigma))
    }

    fn decode_on_tape(
        &self,
        tape: &mut Tape,
        binding: &TapeBinding,
        z: Var,
        xs: &Tensor,
    ) -> Result<(Var, Var)> {
        let m = xs.rows();
        let zb = tape.broadcast_rows(z, m)?;
        let xv = tape.leaf(xs.clone());
        let input = tape.hstack(xv, zb)?;
        let out = mlp_forward_tape(tape, &self.config.decoder_spec()?, binding, DEC, input)?;
        let yd = self.config.y_dim;
        let mean = tape.slice_cols(out, 0, yd)?;
        let raw = tape.slice_cols(out, yd, 2 * yd)?;
        let std = match self.config.obs_noise {
            ObsNoise::Heteroscedastic => {
                let sp = tape.softplus(raw)?;
                tape.add_scalar(sp, self.config.sigma_floor_obs)?
            }
            ObsNoise::Fixed(s) => tape.leaf(Tensor::filled(vec![m, yd], s)),
        };
        Ok((mean, std))
    }
}

/// Column mean of a matrix, summing rows in order.
fn mean_of_rows(h: &Tensor) -> Tensor {
    let (n, d) = (h.rows(), h.cols());
    let mut out = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            out[j] += h.data()[i * d + j];
        }
    }
    for o in out.iter_mut() {
        *o /= n as f64;
    }
    Tensor::from_parts(vec![d], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::task::pair_rows;
    use crate::tensor::kl_diag_gaussians;
    use rand::seq::SliceRandom;

    /// Small config so tests stay fast and finite differences stay tight.
    fn tiny_config() -> NpConfig {
        NpConfig {
            x_dim: 1,
            y_dim: 1,
            r_dim: 5,
            z_dim: 4,
            encoder_hidden: vec![6],
            latent_hidden: vec![6],
            decoder_hidden: vec![6],
            activation: Activation::Tanh,
            sigma_floor_latent: 0.1,
            sigma_floor_obs: 0.02,
            obs_noise: ObsNoise::Heteroscedastic,
            recon_targets: ReconTargets::All,
        }
    }

    fn tiny_model(seed: u64) -> NpModel {
        NpModel::init(tiny_config(), &mut rng::seeded(seed)).unwrap()
    }

    fn random_task(n: usize, n_ctx: usize, seed: u64) -> FunctionTask {
        let mut r = rng::seeded(seed);
        let xs = Tensor::new(vec![n, 1], standard_normal_vec(&mut r, n)).unwrap();
        let ys = Tensor::new(vec![n, 1], standard_normal_vec(&mut r, n)).unwrap();
        FunctionTask::new(xs, ys, (0..n_ctx).collect()).unwrap()
    }

    #[test]
    fn empty_context_encodes_to_zero_vector() {
        let m = tiny_model(1);
        let pairs = Tensor::zeros(vec![0, 2]);
        let r = m.encode(&pairs).unwrap();
        assert_eq!(r, Tensor::zeros(vec![5]));
    }

    #[test]
    fn identical_pairs_encode_like_one_pair() {
        let m = tiny_model(2);
        let one = Tensor::matrix(&[vec![0.4, -0.7]]).unwrap();
        let five = Tensor::matrix(&vec![vec![0.4, -0.7]; 5]).unwrap();
        let ra = m.encode(&one).unwrap();
        let rb = m.encode(&five).unwrap();
        for (a, b) in ra.data().iter().zip(rb.data()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn encoding_is_permutation_invariant() {
        let m = tiny_model(3);
        let mut r = rng::seeded(30);
        let pairs = Tensor::new(vec![5, 2], standard_normal_vec(&mut r, 10)).unwrap();
        let base = m.encode(&pairs).unwrap();
        let mut order: Vec<usize> = (0..5).collect();
        for _ in 0..10 {
            order.shuffle(&mut r);
            let permuted = pairs.select_rows(&order).unwrap();
            let enc = m.encode(&permuted).unwrap();
            for (a, b) in base.data().iter().zip(enc.data()) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
                assert!(rel < 1e-9);
            }
        }
    }

    #[test]
    fn latent_sigma_stays_in_open_interval() {
        let m = tiny_model(4);
        let mut r = rng::seeded(40);
        for _ in 0..50 {
            let rep = Tensor::vector(standard_normal_vec(&mut r, 5));
            let d = m.latent(&rep).unwrap();
            for &s in d.sigma.data() {
                assert!(s > 0.1 && s < 1.0);
            }
        }
    }

    #[test]
    fn latent_sigma_floor_is_approached_at_negative_saturation() {
        // Drive the raw-σ head to −∞ by scaling its input weights hard; the
        // map floor + (1−floor)·sigmoid(raw) must approach the floor.
        let floor = 0.1;
        let map = |raw: f64| floor + (1.0 - floor) * sigmoid_scalar(raw);
        assert!((map(-745.0) - floor).abs() < 1e-15);
        assert!(map(30.0) < 1.0 && map(745.0) <= 1.0);
    }

    #[test]
    fn latent_matches_scalar_oracle() {
        // One hidden tanh layer, recomputed coordinate-by-coordinate.
        let m = tiny_model(5);
        let rep = Tensor::vector(vec![0.3, -0.6, 0.1, 0.9, -0.2]);
        let got = m.latent(&rep).unwrap();

        let w0 = m.params.get("lat.w0").unwrap();
        let b0 = m.params.get("lat.b0").unwrap();
        let w1 = m.params.get("lat.w1").unwrap();
        let b1 = m.params.get("lat.b1").unwrap();
        let mut hidden = vec![0.0; 6];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut s = b0.data()[j];
            for (i, &x) in rep.data().iter().enumerate() {
                s += x * w0.at(i, j);
            }
            *h = s.tanh();
        }
        let mut raw = vec![0.0; 8];
        for (j, o) in raw.iter_mut().enumerate() {
            let mut s = b1.data()[j];
            for (i, &h) in hidden.iter().enumerate() {
                s += h * w1.at(i, j);
            }
            *o = s;
        }
        for k in 0..4 {
            assert!((got.mu.data()[k] - raw[k]).abs() < 1e-12);
            let sig = 0.1 + 0.9 / (1.0 + (-raw[4 + k]).exp());
            assert!((got.sigma.data()[k] - sig).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_rows_are_independent_and_permute() {
        let m = tiny_model(6);
        let z = Tensor::vector(vec![0.1, -0.2, 0.3, 0.05]);
        let xs = Tensor::matrix(&[vec![0.0], vec![0.5], vec![-1.0]]).unwrap();
        let p = m.decode(&z, &xs).unwrap();

        // duplicating a row duplicates its output exactly
        let dup = Tensor::matrix(&[vec![0.5], vec![0.5]]).unwrap();
        let pd = m.decode(&z, &dup).unwrap();
        assert_eq!(pd.mean.row(0), pd.mean.row(1));
        assert_eq!(pd.mean.row(0), p.mean.row(1));

        // permuting rows permutes outputs identically
        let perm = xs.select_rows(&[2, 0, 1]).unwrap();
        let pp = m.decode(&z, &perm).unwrap();
        assert_eq!(pp.mean.row(0), p.mean.row(2));
        assert_eq!(pp.std.row(1), p.std.row(0));
    }

    #[test]
    fn decode_single_target_matches_scalar_oracle() {
        let cfg = NpConfig {
            decoder_hidden: vec![3],
            ..tiny_config()
        };
        let m = NpModel::init(cfg, &mut rng::seeded(7)).unwrap();
        let z = Tensor::vector(vec![0.2, 0.4, -0.3, 0.7]);
        let xs = Tensor::matrix(&[vec![0.25]]).unwrap();
        let p = m.decode(&z, &xs).unwrap();

        let w0 = m.params.get("dec.w0").unwrap();
        let b0 = m.params.get("dec.b0").unwrap();
        let w1 = m.params.get("dec.w1").unwrap();
        let b1 = m.params.get("dec.b1").unwrap();
        let input = [0.25, 0.2, 0.4, -0.3, 0.7];
        let mut hidden = vec![0.0; 3];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut s = b0.data()[j];
            for (i, &x) in input.iter().enumerate() {
                s += x * w0.at(i, j);
            }
            *h = s.tanh();
        }
        let out: Vec<f64> = (0..2)
            .map(|j| {
                let mut s = b1.data()[j];
                for (i, &h) in hidden.iter().enumerate() {
                    s += h * w1.at(i, j);
                }
                s
            })
            .collect();
        assert!((p.mean.item() - out[0]).abs() < 1e-12);
        let sig = 0.02 + softplus_scalar(out[1]);
        assert!((p.std.item() - sig).abs() < 1e-12);
    }

    #[test]
    fn posterior_is_permutation_invariant_and_stable_on_duplicates() {
        let m = tiny_model(8);
        let task = random_task(6, 4, 80);
        let ctx = task.context_pairs();
        let base = m.posterior(&ctx).unwrap();

        let perm = ctx.select_rows(&[3, 0, 2, 1]).unwrap();
        let p = m.posterior(&perm).unwrap();
        for (a, b) in base.mu.data().iter().zip(p.mu.data()) {
            assert!((a - b).abs() / a.abs().max(1e-12) < 1e-9);
        }

        // empty context goes through the zero-representation convention
        let empty = Tensor::zeros(vec![0, 2]);
        let prior = m.posterior(&empty).unwrap();
        let direct = m.latent(&Tensor::zeros(vec![5])).unwrap();
        assert_eq!(prior, direct);
    }

    #[test]
    fn predict_mean_at_zero_eps_equals_posterior_mean_decode() {
        let m = tiny_model(9);
        let task = random_task(5, 3, 90);
        let post = m.posterior(&task.context_pairs()).unwrap();
        let z = post.sample_with_eps(&Tensor::zeros(vec![4])).unwrap();
        assert_eq!(z, post.mu);
        let p = m.decode(&z, task.xs()).unwrap();
        // identical eps ⇒ identical predictions
        let p2 = m.decode(&post.sample_with_eps(&Tensor::zeros(vec![4])).unwrap(), task.xs()).unwrap();
        assert_eq!(p.mean, p2.mean);
    }

    #[test]
    fn predictive_marginal_mean_matches_monte_carlo() {
        // E[decode-mean] over z ~ q(z|C) at one target, 10^4 samples vs a
        // fresh 10^4-sample estimate with its own stream, within 3 SE.
        let m = tiny_model(10);
        let task = random_task(6, 4, 100);
        let ctx = task.context_pairs();
        let x = Tensor::matrix(&[vec![0.2]]).unwrap();
        let n = 10_000;

        let mut r1 = rng::stream(500, 1);
        let preds = m.predict(&ctx, &x, n, &mut r1).unwrap();
        let vals: Vec<f64> = preds.iter().map(|p| p.mean.item()).collect();
        let mean1: f64 = vals.iter().sum::<f64>() / n as f64;
        let var1: f64 = vals.iter().map(|v| (v - mean1).powi(2)).sum::<f64>() / (n as f64 - 1.0);

        let mut r2 = rng::stream(500, 2);
        let post = m.posterior(&ctx).unwrap();
        let mut mean2 = 0.0;
        for _ in 0..n {
            let z = post.sample(&mut r2).unwrap();
            mean2 += m.decode(&z, &x).unwrap().mean.item();
        }
        mean2 /= n as f64;
        let se = (2.0 * var1 / n as f64).sqrt();
        assert!((mean1 - mean2).abs() < 3.0 * se, "{mean1} vs {mean2}, se {se}");
    }

    #[test]
    fn elbo_kl_term_is_zero_when_context_covers_targets() {
        let m = tiny_model(11);
        let task = random_task(5, 5, 110);
        let post_full = m.posterior(&task.all_pairs()).unwrap();
        let post_ctx = m.posterior(&task.context_pairs()).unwrap();
        let kl = kl_diag_gaussians(&post_full.mu, &post_full.sigma, &post_ctx.mu, &post_ctx.sigma).unwrap();
        assert!(kl.abs() < 1e-18);
        let loss = m.elbo_loss_with_eps(&task, &Tensor::zeros(vec![4])).unwrap();
        assert!(loss.is_finite());
        // with zero KL the loss is pure negative reconstruction
        let z = post_full.sample_with_eps(&Tensor::zeros(vec![4])).unwrap();
        let p = m.decode(&z, task.xs()).unwrap();
        let lp = crate::tensor::gaussian_log_pdf(task.ys(), &p.mean, &p.std).unwrap();
        let recon: f64 = lp.data().iter().sum();
        assert!((loss - (-recon)).abs() < 1e-12);
    }

    #[test]
    fn duplicating_targets_doubles_reconstruction_only() {
        let m = tiny_model(12);
        let task = random_task(4, 2, 120);
        let eps = Tensor::vector(vec![0.3, -0.1, 0.6, 0.2]);

        let doubled = {
            let mut xs = task.xs().data().to_vec();
            xs.extend_from_slice(task.xs().data());
            let mut ys = task.ys().data().to_vec();
            ys.extend_from_slice(task.ys().data());
            let mut ctx = task.context_idx().to_vec();
            ctx.extend(task.context_idx().iter().map(|&i| i + 4));
            FunctionTask::new(
                Tensor::new(vec![8, 1], xs).unwrap(),
                Tensor::new(vec![8, 1], ys).unwrap(),
                ctx,
            )
            .unwrap()
        };

        // mean aggregation is invariant to duplication, so both posteriors and
        // the KL agree; the reconstruction sum doubles.
        let kl = |t: &FunctionTask| {
            let f = m.posterior(&t.all_pairs()).unwrap();
            let c = m.posterior(&t.context_pairs()).unwrap();
            kl_diag_gaussians(&f.mu, &f.sigma, &c.mu, &c.sigma).unwrap()
        };
        let (kl1, kl2) = (kl(&task), kl(&doubled));
        assert!((kl1 - kl2).abs() < 1e-9);

        let l1 = m.elbo_loss_with_eps(&task, &eps).unwrap();
        let l2 = m.elbo_loss_with_eps(&doubled, &eps).unwrap();
        let recon1 = kl1 - l1;
        let recon2 = kl2 - l2;
        assert!(
            (recon2 - 2.0 * recon1).abs() < 1e-8 * recon1.abs().max(1.0),
            "recon {recon1} vs doubled {recon2}"
        );
    }

    #[test]
    fn elbo_gradients_match_finite_differences() {
        let m = tiny_model(13);
        let task = random_task(4, 2, 130);
        let eps = Tensor::vector(vec![0.25, -0.4, 0.1, 0.55]);
        let (_, grads) = m.elbo_grads_with_eps(&task, &eps).unwrap();

        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for (name, g) in grads.iter() {
            for k in 0..g.len() {
                let mut perturbed = m.clone();
                let eval = |model: &mut NpModel, delta: f64| -> f64 {
                    // nudge one coordinate, evaluate, restore
                    let t = model.params.get(name).unwrap().clone();
                    let mut data = t.data().to_vec();
                    data[k] += delta;
                    let shape = t.shape().to_vec();
                    set_param(&mut model.params, name, Tensor::new(shape, data).unwrap());
                    model.elbo_loss_with_eps(&task, &eps).unwrap()
                };
                let base = perturbed.params.get(name).unwrap().clone();
                let fp = eval(&mut perturbed, h);
                set_param(&mut perturbed.params, name, base.clone());
                let fm = eval(&mut perturbed, -h);
                set_param(&mut perturbed.params, name, base);
                let fd = (fp - fm) / (2.0 * h);
                let ad = g.data()[k];
                let rel = (fd - ad).abs() / ad.abs().max(fd.abs()).max(1.0);
                worst = worst.max(rel);
                assert!(rel < 1e-5, "{name}[{k}]: fd {fd} vs ad {ad} (rel {rel})");
            }
        }
        assert!(worst < 1e-5);
    }

    // Test-only mutation helper: same name, same shape, new values.
    fn set_param(store: &mut ParamStore, name: &str, t: Tensor) {
        let mut rebuilt = ParamStore::new();
        for (n, v) in store.iter() {
            rebuilt.insert(n, if n == name { t.clone() } else { v.clone() }).unwrap();
        }
        *store = rebuilt;
    }

    #[test]
    fn gradient_of_unused_parameter_is_zero_via_fixed_noise() {
        // With Fixed observation noise the decoder's raw-std outputs cannot
        // influence the loss; their weight column must get zero gradient.
        let cfg = NpConfig { obs_noise: ObsNoise::Fixed(0.5), ..tiny_config() };
        let m = NpModel::init(cfg, &mut rng::seeded(14)).unwrap();
        let task = random_task(4, 2, 140);
        let (_, grads) = m.elbo_grads_with_eps(&task, &Tensor::zeros(vec![4])).unwrap();
        let gw = grads.get("dec.w1").unwrap(); // [hidden, 2] → col 1 feeds raw-std
        for i in 0..gw.rows() {
            assert_eq!(gw.at(i, 1), 0.0);
        }
        let gb = grads.get("dec.b1").unwrap();
        assert_eq!(gb.data()[1], 0.0);
    }

    #[test]
    fn elbo_rejects_empty_context_and_mismatched_dims() {
        let m = tiny_model(15);
        let task = {
            let xs = Tensor::matrix(&[vec![0.0], vec![1.0]]).unwrap();
            let ys = Tensor::matrix(&[vec![0.0], vec![1.0]]).unwrap();
            FunctionTask::new(xs, ys, vec![]).unwrap()
        };
        assert!(m.elbo_loss(&task, &mut rng::seeded(0)).is_err());

        let wide = {
            let xs = Tensor::matrix(&[vec![0.0, 1.0]]).unwrap();
            let ys = Tensor::matrix(&[vec![0.0]]).unwrap();
            FunctionTask::new(xs, ys, vec![0]).unwrap()
        };
        assert!(m.elbo_loss(&wide, &mut rng::seeded(0)).is_err());

        let empty = FunctionTask::new(Tensor::zeros(vec![0, 1]), Tensor::zeros(vec![0, 1]), vec![]).unwrap();
        assert!(m.elbo_loss(&empty, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn sample_consistency_decode_subset_is_bit_exact() {
        let m = tiny_model(16);
        let z = Tensor::vector(vec![0.4, -0.9, 0.2, 0.0]);
        let mut r = rng::seeded(160);
        let xs = Tensor::new(vec![9, 1], standard_normal_vec(&mut r, 9)).unwrap();
        let full = m.decode(&z, &xs).unwrap();
        let sub = m.decode(&z, &xs.select_rows(&[0, 1, 2, 3]).unwrap()).unwrap();
        for i in 0..4 {
            assert_eq!(full.mean.row(i), sub.mean.row(i));
            assert_eq!(full.std.row(i), sub.std.row(i));
        }
    }

    #[test]
    fn forward_counters_certify_linear_complexity() {
        let m = tiny_model(17);
        let task = random_task(12, 7, 170);
        reset_forward_counters();
        let _ = m.predict(&task.context_pairs(), task.xs(), 3, &mut rng::seeded(0)).unwrap();
        let (enc, dec) = forward_counters();
        assert_eq!(enc, 7); // one pass per context pair
        assert_eq!(dec, 3 * 12); // one pass per target per sample
    }

    #[test]
    fn from_parts_rejects_wrong_shapes_naming_the_tensor() {
        let m = tiny_model(18);
        let mut store = ParamStore::new();
        for (n, t) in m.params.iter() {
            store.insert(n, t.clone()).unwrap();
        }
        set_param(&mut store, "enc.w0", Tensor::zeros(vec![3, 3]));
        let err = NpModel::from_parts(tiny_config(), store).unwrap_err();
        assert!(err.to_string().contains("enc.w0"), "{err}");
    }

    #[test]
    fn loss_paths_value_and_tape_posteriors_agree() {
        let m = tiny_model(19);
        let task = random_task(6, 3, 190);
        let eps = Tensor::zeros(vec![4]);
        let (tape_loss, _) = m.elbo_grads_with_eps(&task, &eps).unwrap();

        // reassemble the loss from value-level pieces
        let full = m.posterior(&task.all_pairs()).unwrap();
        let ctx = m.posterior(&task.context_pairs()).unwrap();
        let kl = kl_diag_gaussians(&full.mu, &full.sigma, &ctx.mu, &ctx.sigma).unwrap();
        let z = full.sample_with_eps(&eps).unwrap();
        let p = m.decode(&z, task.xs()).unwrap();
        let lp = crate::tensor::gaussian_log_pdf(task.ys(), &p.mean, &p.std).unwrap();
        let recon: f64 = lp.data().iter().sum();
        assert!((tape_loss - (kl - recon)).abs() < 1e-12);
        let _ = pair_rows(task.xs(), task.ys());
    }
}
