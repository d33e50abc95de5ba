//! Reverse-mode automatic differentiation over a linear tape.
//!
//! The supported primitive set is exactly what the model composition needs:
//! affine maps, pointwise nonlinearities, reductions, row broadcasting and
//! stacking, Gaussian log-density, diagonal-Gaussian KL and the
//! reparameterization map. Forward values are checked for finiteness at every
//! op boundary so a blow-up is reported with the op that produced it.

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor, LN_2PI};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
#[allow(dead_code)] // constants kept in variants for debug dumps
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    AddRowVec(Var, Var),
    Matmul(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Neg(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    BroadcastRows(Var, usize),
    HStack(Var, Var),
    SliceCols(Var, usize, usize),
    Reshape(Var),
    GaussianLogPdf { y: Tensor, mu: Var, sigma: Var },
    KlDiag { mu_q: Var, sigma_q: Var, mu_p: Var, sigma_p: Var },
    Reparam { mu: Var, sigma: Var, eps: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of a scalar with respect to every node that influenced it.
pub struct Grads {
    g: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient of the loss w.r.t. `v`; zeros if `v` did not influence it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        let shape = tape.value(v).shape().to_vec();
        match &self.g[v.0] {
            Some(data) => Tensor::from_parts(shape, data.clone()),
            None => Tensor::zeros(shape),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Inserts an input node. Constants and parameters are both leaves; what
    /// makes a leaf a parameter is only that the caller asks for its gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push_unchecked(value, op))
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        self.push(name, Tensor::from_parts(shape, data), op)
    }

    fn unary_elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|&x| f(x)).collect();
        let shape = ta.shape().to_vec();
        self.push(name, Tensor::from_parts(shape, data), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_elementwise("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary_elementwise("scale", a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary_elementwise("add_scalar", a, |x| x + c, Op::AddScalar(a, c))
    }

    /// `a[n,d] + v[d]`, v added to every row.
    pub fn add_row_vec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (ta, tv) = (self.value(a), self.value(v));
        let (n, d) = (ta.rows(), ta.cols());
        if tv.len() != d {
            return Err(Error::shape("add_row_vec", format!("{:?} + {:?}", ta.shape(), tv.shape())));
        }
        let mut data = ta.data().to_vec();
        for i in 0..n {
            for j in 0..d {
                data[i * d + j] += tv.data()[j];
            }
        }
        let shape = ta.shape().to_vec();
        self.push("add_row_vec", Tensor::from_parts(shape, data), Op::AddRowVec(a, v))
    }

    /// `a[n,k] · b[k,m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(Error::shape("matmul", format!("{:?} · {:?}", ta.shape(), tb.shape())));
        }
        let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
        let data = matmul(ta.data(), tb.data(), n, k, m);
        self.push("matmul", Tensor::from_parts(vec![n, m], data), Op::Matmul(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary_elementwise("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary_elementwise("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary_elementwise("sigmoid", a, sigmoid_scalar, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary_elementwise("softplus", a, softplus_scalar, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary_elementwise("exp", a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::domain("log", "argument must be strictly positive"));
        }
        self.unary_elementwise("log", a, f64::ln, Op::Log(a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary_elementwise("neg", a, |x| -x, Op::Neg(a))
    }

    /// Sum of all entries → scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push("sum", Tensor::from_parts(vec![1], vec![s]), Op::Sum(a))
    }

    /// Mean of all entries → scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Tensor::from_parts(vec![1], vec![s]), Op::Mean(a))
    }

    /// Column means: `[n,d] → [d]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 || ta.rows() == 0 {
            return Err(Error::shape("mean_rows", format!("expected non-empty matrix, got {:?}", ta.shape())));
        }
        let (n, d) = (ta.rows(), ta.cols());
        let mut out = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                out[j] += ta.data()[i * d + j];
            }
        }
        for o in out.iter_mut() {
            *o /= n as f64;
        }
        self.push("mean_rows", Tensor::from_parts(vec![d], out), Op::MeanRows(a))
    }

    /// Repeats a vector `[d]` as `n` rows: `[n,d]`.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 1 {
            return Err(Error::shape("broadcast_rows", format!("expected vector, got {:?}", ta.shape())));
        }
        if n == 0 {
            return Err(Error::shape("broadcast_rows", "zero rows"));
        }
        let d = ta.len();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            data.extend_from_slice(ta.data());
        }
        self.push("broadcast_rows", Tensor::from_parts(vec![n, d], data), Op::BroadcastRows(a, n))
    }

    /// Column-wise concatenation: `[n,a] ++ [n,b] → [n,a+b]`.
    pub fn hstack(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.rows() != tb.rows() {
            return Err(Error::shape("hstack", format!("{:?} ++ {:?}", ta.shape(), tb.shape())));
        }
        let (n, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        self.push("hstack", Tensor::from_parts(vec![n, ca + cb], data), Op::HStack(a, b))
    }

    /// Keeps columns `c0..c1` of a matrix.
    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape().len() != 2 || c0 >= c1 || c1 > ta.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {c0}..{c1} of {:?}", ta.shape()),
            ));
        }
        let (n, c) = (ta.rows(), ta.cols());
        let mut data = Vec::with_capacity(n * (c1 - c0));
        for i in 0..n {
            data.extend_from_slice(&ta.data()[i * c + c0..i * c + c1]);
        }
        self.push(
            "slice_cols",
            Tensor::from_parts(vec![n, c1 - c0], data),
            Op::SliceCols(a, c0, c1),
        )
    }

    /// Shape change without data movement (e.g. `[1,d] → [d]`).
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        self.push("reshape", t, Op::Reshape(a))
    }

    /// Elementwise log N(y | mu, sigma²) with observed y held constant.
    pub fn gaussian_log_pdf(&mut self, y: Tensor, mu: Var, sigma: Var) -> Result<Var> {
        let (tm, ts) = (self.value(mu), self.value(sigma));
        if y.shape() != tm.shape() || y.shape() != ts.shape() {
            return Err(Error::shape(
                "gaussian_log_pdf",
                format!("y {:?}, mu {:?}, sigma {:?}", y.shape(), tm.shape(), ts.shape()),
            ));
        }
        if ts.data().iter().any(|&s| s <= 0.0) {
            return Err(Error::domain("gaussian_log_pdf", "sigma must be strictly positive"));
        }
        let data: Vec<f64> = y
            .data()
            .iter()
            .zip(tm.data())
            .zip(ts.data())
            .map(|((&yv, &mv), &sv)| {
                let d = yv - mv;
                -0.5 * LN_2PI - sv.ln() - d * d / (2.0 * sv * sv)
            })
            .collect();
        let shape = y.shape().to_vec();
        self.push(
            "gaussian_log_pdf",
            Tensor::from_parts(shape, data),
            Op::GaussianLogPdf { y, mu, sigma },
        )
    }

    /// KL( N(mu_q, σ_q²) ‖ N(mu_p, σ_p²) ) over matching diagonals → scalar.
    pub fn kl_diag(&mut self, mu_q: Var, sigma_q: Var, mu_p: Var, sigma_p: Var) -> Result<Var> {
        let d = self.value(mu_q).len();
        for v in [sigma_q, mu_p, sigma_p] {
            if self.value(v).len() != d {
                return Err(Error::shape("kl_diag", "all four vectors must match in length"));
            }
        }
        if self.value(sigma_q).data().iter().any(|&s| s <= 0.0)
            || self.value(sigma_p).data().iter().any(|&s| s <= 0.0)
        {
            return Err(Error::domain("kl_diag", "sigmas must be strictly positive"));
        }
        let mut kl = 0.0;
        for i in 0..d {
            let mq = self.value(mu_q).data()[i];
            let sq = self.value(sigma_q).data()[i];
            let mp = self.value(mu_p).data()[i];
            let sp = self.value(sigma_p).data()[i];
            let dm = mq - mp;
            kl += (sp / sq).ln() + (sq * sq + dm * dm) / (2.0 * sp * sp) - 0.5;
        }
        self.push(
            "kl_diag",
            Tensor::from_parts(vec![1], vec![kl]),
            Op::KlDiag { mu_q, sigma_q, mu_p, sigma_p },
        )
    }

    /// z = μ + σ ⊙ ε with constant noise ε.
    pub fn reparameterize(&mut self, mu: Var, sigma: Var, eps: Tensor) -> Result<Var> {
        let (tm, ts) = (self.value(mu), self.value(sigma));
        if tm.shape() != ts.shape() || tm.shape() != eps.shape() {
            return Err(Error::shape(
                "reparameterize",
                format!("mu {:?}, sigma {:?}, eps {:?}", tm.shape(), ts.shape(), eps.shape()),
            ));
        }
        let data: Vec<f64> = tm
            .data()
            .iter()
            .zip(ts.data())
            .zip(eps.data())
            .map(|((&m, &s), &e)| m + s * e)
            .collect();
        let shape = tm.shape().to_vec();
        self.push(
            "reparameterize",
            Tensor::from_parts(shape, data),
            Op::Reparam { mu, sigma, eps },
        )
    }

    /// Reverse pass from a scalar loss. Leaves untouched by the loss keep a
    /// `None` gradient, which [`Grads::wrt`] reports as zeros.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut g: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        g[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let grad = match g[i].take() {
                Some(gr) => gr,
                None => continue,
            };
            self.accumulate(i, &grad, &mut g)?;
            g[i] = Some(grad);
        }
        Ok(Grads { g })
    }

    fn accumulate(&self, i: usize, grad: &[f64], g: &mut [Option<Vec<f64>>]) -> Result<()> {
        fn slot(g: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
            g[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice()
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    let s = slot(g, v, grad.len());
                    for (sv, gv) in s.iter_mut().zip(grad) {
                        *sv += gv;
                    }
                }
            }
            Op::Sub(a, b) => {
                let s = slot(g, *a, grad.len());
                for (sv, gv) in s.iter_mut().zip(grad) {
                    *sv += gv;
                }
                let s = slot(g, *b, grad.len());
                for (sv, gv) in s.iter_mut().zip(grad) {
                    *sv -= gv;
                }
            }
            Op::Mul(a, b) => {
                let db = self.value(*b).data();
                let s = slot(g, *a, grad.len());
                for k in 0..s.len() {
                    s[k] += grad[k] * db[k];
                }
                let da = self.value(*a).data();
                let s = slot(g, *b, grad.len());
                for k in 0..s.len() {
                    s[k] += grad[k] * da[k];
                }
            }
            Op::Div(a, b) => {
                let db = self.value(*b).data();
                let s = slot(g, *a, grad.len());
                for k in 0..s.len() {
                    s[k] += grad[k] / db[k];
                }
                let da = self.value(*a).data();
                let s = slot(g, *b, grad.len());
                for k in 0..s.len() {
                    s[k] -= grad[k] * da[k] / (db[k] * db[k]);
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                let s = slot(g, *a, grad.len());
                for k in 0..s.len() {
                    s[k] += c * grad[k];
                }
            }
            Op::AddScalar(a, _) | Op::Reshape(a) => {
                let s = slot(g, *a, grad.len());
                for (sv, gv) in s.iter_mut().zip(grad) {
                    *sv += gv;
                }
            }
            Op::AddRowVec(a, v) => {
                let s = slot(g, *a, grad.len());
                for (sv, gv) in s.iter_mut().zip(grad) {
                    *sv += gv;
                }
                let d = self.value(*v).len();
                let n = grad.len() / d;
                let s = slot(g, *v, d);
                for i in 0..n {
                    for j in 0..d {
                        s[j] += grad[i * d + j];
                    }
                }
            }
            Op::Matmul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (n, k, m) = (ta.rows(), ta.cols(), tb.cols());
                // dA = G · Bᵀ, dB = Aᵀ · G
                let da = matmul_nt(grad, tb.data(), n, m, k);
                let db = matmul_tn(ta.data(), grad, n, k, m);
                let s = slot(g, *a, n * k);
                for (sv, dv) in s.iter_mut().zip(&da) {
                    *sv += dv;
                }
                let s = slot(g, *b, k * m);
                for (sv, dv) in s.iter_mut().zip(&db) {
                    *sv += dv;
                }
            }
            Op::Relu(a) => {
                let da = self.value(*a).data();
                let s = slot(g, *a, grad.len());
                for k in 0..s.len() {
                    if da[k] > 0.0 {
                        s[k] += grad[k];
                    }
                }
            }
            Op::Tanh(a) => {
                let out = self.nodes[i].value.data();
                let s = slot(g, *a, grad.len());
                for k in 0..s.len() {
                    s[k] += grad[k] * (1.0 - out[k] * out[k]);
                }
            }
            Op::Sigmoid(a) => {
                let out = self.nodes[i].value.data();
                let s = slot(g, *a, grad.len());
                for k in 0..s.len() {
                    s[k] += grad[k] * out[k] * (1.0 - out[k]);
                }
            }
            Op::Softplus(a) => {
                let da = self.value(*a).data();
                let s = slot(g, *a, grad.len());
                for k in 0..s.len() {
                    s[k] += grad[k] * sigmoid_scalar(da[k]);
                }
            }
            Op::Exp(a) => {
                let out = self.nodes[i].value.data();
                let s = slot(g, *a, grad.len());
                for k in 0..s.len() {
                    s[k] += grad[k] * out[k];
                }
            }
            Op::Log(a) => {
                let da = self.value(*a).data();
                let s = slot(g, *a, grad.len());
                for k in 0..s.len() {
                    s[k] += grad[k] / da[k];
                }
            }
            Op::Neg(a) => {
                let s = slot(g, *a, grad.len());
                for (sv, gv) in s.iter_mut().zip(grad) {
                    *sv -= gv;
                }
            }
            Op::Sum(a) => {
                let la = self.value(*a).len();
                let g0 = grad[0];
                let s = slot(g, *a, la);
                for sv in s.iter_mut() {
                    *sv += g0;
                }
            }
            Op::Mean(a) => {
                let la = self.value(*a).len();
                let g0 = grad[0] / la as f64;
                let s = slot(g, *a, la);
                for sv in s.iter_mut() {
                    *sv += g0;
                }
            }
            Op::MeanRows(a) => {
                let ta = self.value(*a);
                let (n, d) = (ta.rows(), ta.cols());
                let s = slot(g, *a, n * d);
                for i in 0..n {
                    for j in 0..d {
                        s[i * d + j] += grad[j] / n as f64;
                    }
                }
            }
            Op::BroadcastRows(a, n) => {
                let d = self.value(*a).len();
                let n = *n;
                let s = slot(g, *a, d);
                for i in 0..n {
                    for j in 0..d {
                        s[j] += grad[i * d + j];
                    }
                }
            }
            Op::HStack(a, b) => {
                let (na, ca) = (self.value(*a).rows(), self.value(*a).cols());
                let cb = self.value(*b).cols();
                let s = slot(g, *a, na * ca);
                for i in 0..na {
                    for j in 0..ca {
                        s[i * ca + j] += grad[i * (ca + cb) + j];
                    }
                }
                let s = slot(g, *b, na * cb);
                for i in 0..na {
                    for j in 0..cb {
                        s[i * cb + j] += grad[i * (ca + cb) + ca + j];
                    }
                }
            }
            Op::SliceCols(a, c0, _) => {
                let ta = self.value(*a);
                let (n, c) = (ta.rows(), ta.cols());
                let cw = self.nodes[i].value.cols();
                let c0 = *c0;
                let s = slot(g, *a, n * c);
                for r in 0..n {
                    for j in 0..cw {
                        s[r * c + c0 + j] += grad[r * cw + j];
                    }
                }
            }
            Op::GaussianLogPdf { y, mu, sigma } => {
                let dm = self.value(*mu).data();
                let ds = self.value(*sigma).data();
                let yd = y.data();
                let s = slot(g, *mu, dm.len());
                for k in 0..s.len() {
                    s[k] += grad[k] * (yd[k] - dm[k]) / (ds[k] * ds[k]);
                }
                let s = slot(g, *sigma, ds.len());
                for k in 0..s.len() {
                    let d = yd[k] - dm[k];
                    s[k] += grad[k] * (d * d / (ds[k] * ds[k] * ds[k]) - 1.0 / ds[k]);
                }
            }
            Op::KlDiag { mu_q, sigma_q, mu_p, sigma_p } => {
                let g0 = grad[0];
                let dmq = self.value(*mu_q).data();
                let dsq = self.value(*sigma_q).data();
                let dmp = self.value(*mu_p).data();
                let dsp = self.value(*sigma_p).data();
                let d = dmq.len();
                let s = slot(g, *mu_q, d);
                for k in 0..d {
                    s[k] += g0 * (dmq[k] - dmp[k]) / (dsp[k] * dsp[k]);
                }
                let s = slot(g, *mu_p, d);
                for k in 0..d {
                    s[k] -= g0 * (dmq[k] - dmp[k]) / (dsp[k] * dsp[k]);
                }
                let s = slot(g, *sigma_q, d);
                for k in 0..d {
                    s[k] += g0 * (dsq[k] / (dsp[k] * dsp[k]) - 1.0 / dsq[k]);
                }
                let s = slot(g, *sigma_p, d);
                for k in 0..d {
                    let dm = dmq[k] - dmp[k];
                    let sp = dsp[k];
                    s[k] += g0 * (1.0 / sp - (dsq[k] * dsq[k] + dm * dm) / (sp * sp * sp));
                }
            }
            Op::Reparam { mu, sigma, eps } => {
                let s = slot(g, *mu, grad.len());
                for (sv, gv) in s.iter_mut().zip(grad) {
                    *sv += gv;
                }
                let ed = eps.data();
                let s = slot(g, *sigma, grad.len());
                for k in 0..s.len() {
                    s[k] += grad[k] * ed[k];
                }
            }
        }
        Ok(())
    }
}
