//! Dense row-major tensors of 64-bit reals, the universal numeric carrier.
//!
//! Construction rejects NaN/Inf so that any non-finite value appearing later
//! can be pinned to the operation that produced it.

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking the shape/data contract and finiteness.
    /// Zero-sized dimensions are allowed (empty contexts and queries exist).
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} implies {numel} entries, got {}", data.len()),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape, data: vec![value; numel] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    /// Row-major matrix from nested rows; all rows must share a length.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::shape("tensor", "ragged rows"));
        }
        Tensor::new(vec![n, m], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Number of rows when viewed as a matrix ([n] counts as one row).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Number of columns when viewed as a matrix.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&0)
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Reinterprets the data under a new shape of the same size.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        Ok(Tensor { shape, data: self.data.clone() })
    }

    /// New tensor keeping only the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let c = self.cols();
        let n = self.rows();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= n {
                return Err(Error::shape("select_rows", format!("row {i} out of {n}")));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Tensor { shape: vec![idx.len(), c], data })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

// ── dense matrix kernels ─────────────────────────────────────────────

/// c[m,n] = a[m,k] · b[k,n]
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let bp = &b[p * n..(p + 1) * n];
            for j in 0..n {
                ci[j] += aip * bp[j];
            }
        }
    }
    c
}

/// c[m,n] = a[m,k] · b[n,k]ᵀ
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let bj = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += ai[p] * bj[p];
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// c[k,n] = a[m,k]ᵀ · b[m,n]
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let bi = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let cp = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                cp[j] += aip * bi[j];
            }
        }
    }
    c
}

// ── Gaussian building blocks (value level) ───────────────────────────

/// Elementwise log N(y | mu, sigma²): −½·ln 2π − ln σ − (y−μ)²/(2σ²).
pub fn gaussian_log_pdf(y: &Tensor, mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    if y.shape() != mu.shape() || y.shape() != sigma.shape() {
        return Err(Error::shape(
            "gaussian_log_pdf",
            format!("y {:?}, mu {:?}, sigma {:?}", y.shape(), mu.shape(), sigma.shape()),
        ));
    }
    if sigma.data().iter().any(|&s| s <= 0.0) {
        return Err(Error::domain("gaussian_log_pdf", "sigma must be strictly positive"));
    }
    let data: Vec<f64> = y
        .data()
        .iter()
        .zip(mu.data())
        .zip(sigma.data())
        .map(|((&yv, &mv), &sv)| {
            let d = yv - mv;
            -0.5 * LN_2PI - sv.ln() - d * d / (2.0 * sv * sv)
        })
        .collect();
    Tensor::new(y.shape().to_vec(), data)
}

/// KL( N(mu_q, diag σ_q²) ‖ N(mu_p, diag σ_p²) ), summed over dimensions.
pub fn kl_diag_gaussians(mu_q: &Tensor, sigma_q: &Tensor, mu_p: &Tensor, sigma_p: &Tensor) -> Result<f64> {
    let d = mu_q.len();
    if sigma_q.len() != d || mu_p.len() != d || sigma_p.len() != d {
        return Err(Error::shape(
            "kl_diag_gaussians",
            format!("lengths {} {} {} {}", d, sigma_q.len(), mu_p.len(), sigma_p.len()),
        ));
    }
    if sigma_q.data().iter().chain(sigma_p.data()).any(|&s| s <= 0.0) {
        return Err(Error::domain("kl_diag_gaussians", "sigmas must be strictly positive"));
    }
    let mut kl = 0.0;
    for i in 0..d {
        let (mq, sq) = (mu_q.data()[i], sigma_q.data()[i]);
        let (mp, sp) = (mu_p.data()[i], sigma_p.data()[i]);
        let dm = mq - mp;
        kl += (sp / sq).ln() + (sq * sq + dm * dm) / (2.0 * sp * sp) - 0.5;
    }
    Ok(kl)
}

/// z = μ + σ ⊙ ε with caller-supplied noise ε.
pub fn reparameterize(mu: &Tensor, sigma: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if mu.shape() != sigma.shape() || mu.shape() != eps.shape() {
        return Err(Error::shape(
            "reparameterize",
            format!("mu {:?}, sigma {:?}, eps {:?}", mu.shape(), sigma.shape(), eps.shape()),
        ));
    }
    let data: Vec<f64> = mu
        .data()
        .iter()
        .zip(sigma.data())
        .zip(eps.data())
        .map(|((&m, &s), &e)| m + s * e)
        .collect();
    Tensor::new(mu.shape().to_vec(), data)
}
