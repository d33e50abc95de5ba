//! One sampled function as paired inputs/outputs plus a context/target split.
//! Targets always cover every point, and the context is a subset of them.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct FunctionTask {
    xs: Tensor,
    ys: Tensor,
    context_idx: Vec<usize>,
    target_idx: Vec<usize>,
}

impl FunctionTask {
    /// Targets are all points; `context_idx` selects the observed subset.
    pub fn new(xs: Tensor, ys: Tensor, context_idx: Vec<usize>) -> Result<Self> {
        if xs.shape().len() != 2 || ys.shape().len() != 2 {
            return Err(Error::shape("function_task", "xs and ys must be matrices"));
        }
        let n = xs.rows();
        if ys.rows() != n {
            return Err(Error::shape(
                "function_task",
                format!("{} xs rows vs {} ys rows", n, ys.rows()),
            ));
        }
        let mut seen = vec![false; n];
        for &i in &context_idx {
            if i >= n {
                return Err(Error::shape("function_task", format!("context index {i} out of {n}")));
            }
            if seen[i] {
                return Err(Error::shape("function_task", format!("duplicate context index {i}")));
            }
            seen[i] = true;
        }
        Ok(FunctionTask { xs, ys, context_idx, target_idx: (0..n).collect() })
    }

    pub fn n_points(&self) -> usize {
        self.xs.rows()
    }

    pub fn n_context(&self) -> usize {
        self.context_idx.len()
    }

    pub fn x_dim(&self) -> usize {
        self.xs.cols()
    }

    pub fn y_dim(&self) -> usize {
        self.ys.cols()
    }

    pub fn xs(&self) -> &Tensor {
        &self.xs
    }

    pub fn ys(&self) -> &Tensor {
        &self.ys
    }

    pub fn context_idx(&self) -> &[usize] {
        &self.context_idx
    }

    /// All points, by construction.
    pub fn target_idx(&self) -> &[usize] {
        &self.target_idx
    }

    /// Indices of targets that are not context points.
    pub fn non_context_idx(&self) -> Vec<usize> {
        let mut in_ctx = vec![false; self.n_points()];
        for &i in &self.context_idx {
            in_ctx[i] = true;
        }
        (0..self.n_points()).filter(|&i| !in_ctx[i]).collect()
    }

    pub fn context_xs(&self) -> Tensor {
        self.xs.select_rows(&self.context_idx).expect("validated on construction")
    }

    pub fn context_ys(&self) -> Tensor {
        self.ys.select_rows(&self.context_idx).expect("validated on construction")
    }

    /// Context rows as `[n, x_dim + y_dim]` pairs, encoder-ready.
    pub fn context_pairs(&self) -> Tensor {
        pair_rows(&self.context_xs(), &self.context_ys())
    }

    /// Every point as an `[n, x_dim + y_dim]` pair.
    pub fn all_pairs(&self) -> Tensor {
        pair_rows(&self.xs, &self.ys)
    }
}

/// Concatenates x and y rows into (x, y) pair rows.
pub fn pair_rows(xs: &Tensor, ys: &Tensor) -> Tensor {
    let n = xs.rows();
    debug_assert_eq!(n, ys.rows());
    let (dx, dy) = (xs.cols(), ys.cols());
    let mut data = Vec::with_capacity(n * (dx + dy));
    for i in 0..n {
        data.extend_from_slice(xs.row(i));
        data.extend_from_slice(ys.row(i));
    }
    Tensor::from_parts(vec![n, dx + dy], data)
}
