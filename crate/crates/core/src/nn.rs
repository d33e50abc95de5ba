//! Dense feed-forward networks over a named parameter store, plus Adam.
//!
//! Layer `l` of an MLP owns `{prefix}.w{l}` of shape `[in, out]` and
//! `{prefix}.b{l}` of shape `[out]`. Hidden layers apply the configured
//! activation; the output layer is affine.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Grads, Tape, Var};
use crate::tensor::{matmul, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width first, output width last.
    pub layer_widths: Vec<usize>,
    /// Applied to all hidden layers; the output is affine.
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::Config(format!(
                "an MLP needs at least input and output widths, got {layer_widths:?}"
            )));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("zero layer width in {layer_widths:?}")));
        }
        Ok(MlpSpec { layer_widths, activation })
    }

    pub fn in_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn out_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    /// Glorot-uniform weights, zero biases, registered under `prefix`.
    pub fn init_params(&self, prefix: &str, rng: &mut impl Rng, store: &mut ParamStore) -> Result<()> {
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.layer_widths[l], self.layer_widths[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
            store.insert(format!("{prefix}.w{l}"), Tensor::new(vec![fan_in, fan_out], data)?)?;
            store.insert(format!("{prefix}.b{l}"), Tensor::zeros(vec![fan_out]))?;
        }
        Ok(())
    }

    fn layer_params<'a>(
        &self,
        store: &'a ParamStore,
        prefix: &str,
        l: usize,
    ) -> Result<(&'a Tensor, &'a Tensor)> {
        let wname = format!("{prefix}.w{l}");
        let bname = format!("{prefix}.b{l}");
        let w = store.get(&wname)?;
        let b = store.get(&bname)?;
        let (fan_in, fan_out) = (self.layer_widths[l], self.layer_widths[l + 1]);
        if w.shape() != [fan_in, fan_out] {
            return Err(Error::shape(
                "mlp_forward",
                format!("{wname} has shape {:?}, expected [{fan_in}, {fan_out}]", w.shape()),
            ));
        }
        if b.shape() != [fan_out] {
            return Err(Error::shape(
                "mlp_forward",
                format!("{bname} has shape {:?}, expected [{fan_out}]", b.shape()),
            ));
        }
        Ok((w, b))
    }
}

/// Deterministic forward pass over a batch of rows: `[n, in] → [n, out]`.
pub fn mlp_forward(spec: &MlpSpec, store: &ParamStore, prefix: &str, input: &Tensor) -> Result<Tensor> {
    if input.shape().len() != 2 || input.cols() != spec.in_width() {
        return Err(Error::shape(
            "mlp_forward",
            format!("input {:?} does not match first layer width {}", input.shape(), spec.in_width()),
        ));
    }
    let n = input.rows();
    let mut h = input.data().to_vec();
    let mut width = spec.in_width();
    for l in 0..spec.n_layers() {
        let (w, b) = spec.layer_params(store, prefix, l)?;
        let out_w = spec.layer_widths[l + 1];
        let mut next = matmul(&h, w.data(), n, width, out_w);
        for i in 0..n {
            for j in 0..out_w {
                next[i * out_w + j] += b.data()[j];
            }
        }
        if l + 1 < spec.n_layers() {
            for v in next.iter_mut() {
                *v = spec.activation.apply(*v);
            }
        }
        h = next;
        width = out_w;
    }
    Tensor::new(vec![n, width], h)
}

/// Same computation recorded on a tape for differentiation. Produces values
/// bit-identical to [`mlp_forward`].
pub fn mlp_forward_tape(
    tape: &mut Tape,
    spec: &MlpSpec,
    binding: &TapeBinding,
    prefix: &str,
    input: Var,
) -> Result<Var> {
    if tape.value(input).shape().len() != 2 || tape.value(input).cols() != spec.in_width() {
        return Err(Error::shape(
            "mlp_forward",
            format!(
                "input {:?} does not match first layer width {}",
                tape.value(input).shape(),
                spec.in_width()
            ),
        ));
    }
    let mut h = input;
    for l in 0..spec.n_layers() {
        let w = binding.var(&format!("{prefix}.w{l}"))?;
        let b = binding.var(&format!("{prefix}.b{l}"))?;
        h = tape.matmul(h, w)?;
        h = tape.add_row_vec(h, b)?;
        if l + 1 < spec.n_layers() {
            h = match spec.activation {
                Activation::Relu => tape.relu(h)?,
                Activation::Tanh => tape.tanh(h)?,
            };
        }
    }
    Ok(h)
}

// ── parameter store ──────────────────────────────────────────────────

/// Named map of learnable tensors. Names are unique and shapes are fixed
/// once inserted; updates go through [`adam_step`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.map.contains_key(&name) {
            return Err(Error::DuplicateParam(name));
        }
        self.map.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Deterministic (sorted-name) iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn n_scalars(&self) -> usize {
        self.map.values().map(Tensor::len).sum()
    }

    /// True when `other` has exactly the same names and shapes.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.map.len() == other.map.len()
            && self
                .map
                .iter()
                .zip(other.map.iter())
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    /// A store with the same layout, all values zero.
    pub fn zeros_like(&self) -> ParamStore {
        let map = self
            .map
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec())))
            .collect();
        ParamStore { map }
    }
}

/// Leaf variables for every parameter of a store, so one tape can compute
/// gradients for all of them.
pub struct TapeBinding {
    vars: BTreeMap<String, Var>,
}

impl TapeBinding {
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Self {
        let vars = store
            .iter()
            .map(|(name, tensor)| (name.to_string(), tape.leaf(tensor.clone())))
            .collect();
        TapeBinding { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Extracts gradients in the store layout; parameters that did not
    /// influence the loss get zeros.
    pub fn gradients(&self, tape: &Tape, grads: &Grads, store: &ParamStore) -> Result<ParamStore> {
        let mut out = ParamStore::new();
        for (name, _) in store.iter() {
            let v = self.var(name)?;
            out.insert(name, grads.wrt(tape, v))?;
        }
        Ok(out)
    }
}

// ── Adam ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub hyper: AdamHyper,
    m: ParamStore,
    v: ParamStore,
}

impl AdamState {
    pub fn new(params: &ParamStore, hyper: AdamHyper) -> Self {
        AdamState { step: 0, hyper, m: params.zeros_like(), v: params.zeros_like() }
    }
}

/// One Adam update with bias correction, in place.
pub fn adam_step(params: &mut ParamStore, grads: &ParamStore, state: &mut AdamState) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(Error::shape("adam_step", "gradient layout does not mirror parameters"));
    }
    state.step += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.step as i32);
    let bc2 = 1.0 - h.beta2.powi(state.step as i32);

    for ((name, p), ((_, m), (_, v))) in params
        .iter_mut()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let g = grads.get(name)?;
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for k in 0..pd.len() {
            let gk = g.data()[k];
            md[k] = h.beta1 * md[k] + (1.0 - h.beta1) * gk;
            vd[k] = h.beta2 * vd[k] + (1.0 - h.beta2) * gk * gk;
            let m_hat = md[k] / bc1;
            let v_hat = vd[k] / bc2;
            pd[k] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn spec(widths: &[usize], act: Activation) -> MlpSpec {
        MlpSpec::new(widths.to_vec(), act).unwrap()
    }

    #[test]
    fn identity_affine_layer_passes_input_through() {
        let s = spec(&[2, 2], Activation::Relu);
        let mut store = ParamStore::new();
        store
            .insert("f.w0", Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap())
            .unwrap();
        store.insert("f.b0", Tensor::zeros(vec![2])).unwrap();
        let x = Tensor::matrix(&[vec![-3.5, 2.25]]).unwrap();
        let y = mlp_forward(&s, &store, "f", &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let s = spec(&[3, 4, 2], Activation::Tanh);
        let mut store = ParamStore::new();
        store.insert("f.w0", Tensor::zeros(vec![3, 4])).unwrap();
        store.insert("f.b0", Tensor::zeros(vec![4])).unwrap();
        store.insert("f.w1", Tensor::zeros(vec![4, 2])).unwrap();
        store.insert("f.b1", Tensor::zeros(vec![2])).unwrap();
        let x = Tensor::matrix(&[vec![1.0, -2.0, 0.5], vec![4.0, 4.0, 4.0]]).unwrap();
        let y = mlp_forward(&s, &store, "f", &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_2_3_1_tanh_matches_scalar_reimplementation() {
        let s = spec(&[2, 3, 1], Activation::Tanh);
        let mut store = ParamStore::new();
        let mut r = rng::seeded(42);
        s.init_params("f", &mut r, &mut store).unwrap();
        let x = Tensor::matrix(&[vec![0.31, -1.17]]).unwrap();
        let y = mlp_forward(&s, &store, "f", &x).unwrap();

        // Oracle: scalar-by-scalar forward pass, no shared code with mlp_forward.
        let w0 = store.get("f.w0").unwrap();
        let b0 = store.get("f.b0").unwrap();
        let w1 = store.get("f.w1").unwrap();
        let b1 = store.get("f.b1").unwrap();
        let mut hidden = [0.0; 3];
        for (j, h) in hidden.iter_mut().enumerate() {
            let pre = x.at(0, 0) * w0.at(0, j) + x.at(0, 1) * w0.at(1, j) + b0.data()[j];
            *h = pre.tanh();
        }
        let mut out = b1.data()[0];
        for (j, h) in hidden.iter().enumerate() {
            out += h * w1.at(j, 0);
        }
        assert!((y.item() - out).abs() < 1e-12, "got {}, oracle {}", y.item(), out);
    }

    #[test]
    fn tape_forward_is_bit_identical_to_value_forward() {
        let s = spec(&[3, 5, 4, 2], Activation::Relu);
        let mut store = ParamStore::new();
        let mut r = rng::seeded(9);
        s.init_params("f", &mut r, &mut store).unwrap();
        let x = Tensor::matrix(&[vec![0.4, -0.8, 1.3], vec![2.0, 0.0, -0.1]]).unwrap();

        let plain = mlp_forward(&s, &store, "f", &x).unwrap();
        let mut tape = Tape::new();
        let binding = TapeBinding::bind(&mut tape, &store);
        let xv = tape.leaf(x);
        let yv = mlp_forward_tape(&mut tape, &s, &binding, "f", xv).unwrap();
        assert_eq!(tape.value(yv), &plain);
    }

    #[test]
    fn width_mismatch_names_the_offender() {
        let s = spec(&[2, 2], Activation::Relu);
        let mut store = ParamStore::new();
        store.insert("f.w0", Tensor::zeros(vec![3, 2])).unwrap();
        store.insert("f.b0", Tensor::zeros(vec![2])).unwrap();
        let x = Tensor::matrix(&[vec![1.0, 2.0]]).unwrap();
        let err = mlp_forward(&s, &store, "f", &x).unwrap_err();
        assert!(err.to_string().contains("f.w0"), "{err}");
    }

    #[test]
    fn duplicate_and_missing_params_are_rejected() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::scalar(1.0)).unwrap();
        assert!(matches!(store.insert("a", Tensor::scalar(2.0)), Err(Error::DuplicateParam(_))));
        assert!(matches!(store.get("missing"), Err(Error::UnknownParam(_))));
    }

    #[test]
    fn adam_zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, -2.0, 3.0])).unwrap();
        let grads = store.zeros_like();
        let mut state = AdamState::new(&store, AdamHyper::default());
        let before = store.clone();
        adam_step(&mut store, &grads, &mut state).unwrap();
        assert_eq!(store, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        let hyper = AdamHyper { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![0.5, -0.25])).unwrap();
        let mut grads = ParamStore::new();
        grads.insert("w", Tensor::vector(vec![0.2, -3.0])).unwrap();
        let mut state = AdamState::new(&store, hyper);
        adam_step(&mut store, &grads, &mut state).unwrap();

        // After one step m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + eps).
        for (k, &g) in [0.2, -3.0].iter().enumerate() {
            let expect = [0.5, -0.25][k] - hyper.lr * g / (g.abs() + hyper.eps);
            assert!((store.get("w").unwrap().data()[k] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_moves_monotonically_against_it() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let mut grads = ParamStore::new();
        grads.insert("w", Tensor::vector(vec![0.7])).unwrap();
        let mut state = AdamState::new(&store, AdamHyper { lr: 0.05, ..Default::default() });
        let w0 = store.get("w").unwrap().data()[0];
        adam_step(&mut store, &grads, &mut state).unwrap();
        let w1 = store.get("w").unwrap().data()[0];
        adam_step(&mut store, &grads, &mut state).unwrap();
        let w2 = store.get("w").unwrap().data()[0];
        assert!(w1 < w0 && w2 < w1);
    }

    #[test]
    fn adam_rejects_mismatched_layout() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0])).unwrap();
        let mut grads = ParamStore::new();
        grads.insert("other", Tensor::vector(vec![1.0])).unwrap();
        let mut state = AdamState::new(&store, AdamHyper::default());
        assert!(adam_step(&mut store, &grads, &mut state).is_err());
    }

    #[test]
    fn glorot_init_is_within_bounds_and_seeded() {
        let s = spec(&[10, 20], Activation::Relu);
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        s.init_params("f", &mut rng::seeded(3), &mut a).unwrap();
        s.init_params("f", &mut rng::seeded(3), &mut b).unwrap();
        assert_eq!(a, b);
        let bound = (6.0_f64 / 30.0).sqrt();
        assert!(a.get("f.w0").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert!(a.get("f.b0").unwrap().data().iter().all(|&v| v == 0.0));
    }
}
