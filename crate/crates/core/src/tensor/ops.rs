//! Forward and backward rules for the four primitives the models are built
//! from: affine map, 1-D average pooling, concatenation and MSE loss.

use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, DenseMatrix};
use crate::error::{Error, Result};

/// Gradients of an affine map `W·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub grad_x: Vec<f64>,
    pub grad_w: DenseMatrix,
    pub grad_b: Vec<f64>,
}

fn check_affine(x_len: usize, w: &DenseMatrix, b_len: usize) -> Result<()> {
    if w.cols() != x_len || w.rows() != b_len {
        return Err(Error::Shape(format!(
            "affine: W is {}x{}, x has {x_len} entries, b has {b_len}",
            w.rows(),
            w.cols()
        )));
    }
    Ok(())
}

pub fn affine_forward(x: &[f64], w: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    check_affine(x.len(), w, b.len())?;
    Ok(w.iter_rows()
        .zip(b)
        .map(|(wr, bj)| dot(wr, x) + bj)
        .collect())
}

pub fn affine_backward(grad_out: &[f64], x: &[f64], w: &DenseMatrix) -> Result<AffineGrads> {
    check_affine(x.len(), w, grad_out.len())?;
    let mut grad_x = vec![0.0; x.len()];
    let mut grad_w = DenseMatrix::zeros(w.rows(), w.cols());
    for (j, &g) in grad_out.iter().enumerate() {
        axpy(g, w.row(j), &mut grad_x);
        axpy(g, x, grad_w.row_mut(j));
    }
    Ok(AffineGrads {
        grad_x,
        grad_w,
        grad_b: grad_out.to_vec(),
    })
}

/// Applies the affine map to every row of `x` (one sample per row).
pub fn affine_forward_rows(x: &DenseMatrix, w: &DenseMatrix, b: &[f64]) -> Result<DenseMatrix> {
    check_affine(x.cols(), w, b.len())?;
    let mut out = DenseMatrix::zeros(x.rows(), w.rows());
    for (r, xr) in x.iter_rows().enumerate() {
        let or = out.row_mut(r);
        for (j, (wr, bj)) in w.iter_rows().zip(b).enumerate() {
            or[j] = dot(wr, xr) + bj;
        }
    }
    Ok(out)
}

/// Batched affine backward. Parameter gradients are accumulated into
/// `grad_w`/`grad_b`, summing samples in row order. The input gradient is
/// only formed when `want_input_grad` is set.
pub fn affine_backward_rows(
    grad_out: &DenseMatrix,
    x: &DenseMatrix,
    w: &DenseMatrix,
    grad_w: &mut DenseMatrix,
    grad_b: &mut [f64],
    want_input_grad: bool,
) -> Result<Option<DenseMatrix>> {
    check_affine(x.cols(), w, grad_out.cols())?;
    if grad_out.rows() != x.rows() || grad_w.shape() != w.shape() || grad_b.len() != w.rows() {
        return Err(Error::Shape(format!(
            "affine backward: grad_out {:?}, x {:?}, grad_w {:?}, grad_b {}",
            grad_out.shape(),
            x.shape(),
            grad_w.shape(),
            grad_b.len()
        )));
    }
    let mut grad_x = want_input_grad.then(|| DenseMatrix::zeros(x.rows(), x.cols()));
    for r in 0..x.rows() {
        let g = grad_out.row(r);
        let xr = x.row(r);
        for (j, &gj) in g.iter().enumerate() {
            if gj == 0.0 {
                continue;
            }
            axpy(gj, xr, grad_w.row_mut(j));
            grad_b[j] += gj;
            if let Some(gx) = grad_x.as_mut() {
                axpy(gj, w.row(j), gx.row_mut(r));
            }
        }
    }
    Ok(grad_x)
}

/// Window geometry for 1-D average pooling. Out-of-range positions implied
/// by `padding` count as zeros and the divisor is always `kernel`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    /// `floor((len + 2·padding − kernel) / stride) + 1`
    pub fn output_len(&self, len: usize) -> Result<usize> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(format!(
                "pooling kernel and stride must be >= 1 (kernel={}, stride={})",
                self.kernel, self.stride
            )));
        }
        let padded = len + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::InvalidConfig(format!(
                "pooling window {} does not fit input of length {len} (padding {})",
                self.kernel, self.padding
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }
}

impl Default for PoolSpec {
    fn default() -> Self {
        Self::new(3, 2, 0)
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn split(a: f64) -> (f64, f64) {
    // Veltkamp split into two 26-bit halves
    let c = 134_217_729.0 * a;
    let hi = c - (c - a);
    (hi, a - hi)
}

/// Exact product `a·n = p + e` for an integer-valued `n < 2^26`.
#[inline]
fn two_prod_small(a: f64, n: f64) -> (f64, f64) {
    let p = a * n;
    let (ah, al) = split(a);
    (p, (ah * n - p) + al * n)
}

/// Mean of a short window, compensated so that a window of identical values
/// returns that value and exactly-representable means come out exact.
pub(crate) fn window_mean(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for &v in values {
        let (s, e) = two_sum(hi, v);
        hi = s;
        lo += e;
    }
    let q = hi / n;
    if !(q.abs() < 1e290) {
        // the Veltkamp split would overflow
        return q;
    }
    let (p, pe) = two_prod_small(q, n);
    let rem = ((hi - p) - pe) + lo;
    q + rem / n
}

pub fn avgpool1d_forward(x: &[f64], spec: PoolSpec) -> Result<Vec<f64>> {
    let out_len = spec.output_len(x.len())?;
    let mut window = vec![0.0; spec.kernel];
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let start = (j * spec.stride) as isize - spec.padding as isize;
        for (k, slot) in window.iter_mut().enumerate() {
            let t = start + k as isize;
            *slot = if t >= 0 && (t as usize) < x.len() {
                x[t as usize]
            } else {
                0.0
            };
        }
        out.push(window_mean(&window));
    }
    Ok(out)
}

pub fn avgpool1d_backward(grad_out: &[f64], input_len: usize, spec: PoolSpec) -> Result<Vec<f64>> {
    let out_len = spec.output_len(input_len)?;
    if grad_out.len() != out_len {
        return Err(Error::Shape(format!(
            "avgpool backward: input length {input_len} pools to {out_len}, got gradient of length {}",
            grad_out.len()
        )));
    }
    let mut grad_x = vec![0.0; input_len];
    let kernel = spec.kernel as f64;
    for (j, &g) in grad_out.iter().enumerate() {
        let share = g / kernel;
        let start = (j * spec.stride) as isize - spec.padding as isize;
        for k in 0..spec.kernel as isize {
            let t = start + k;
            if t >= 0 && (t as usize) < input_len {
                grad_x[t as usize] += share;
            }
        }
    }
    Ok(grad_x)
}

pub fn concat_forward(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

/// Splits an upstream gradient at `first_len`.
pub fn concat_backward(grad: &[f64], first_len: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if first_len > grad.len() {
        return Err(Error::Shape(format!(
            "concat backward: split at {first_len} of a length-{} gradient",
            grad.len()
        )));
    }
    let (a, b) = grad.split_at(first_len);
    Ok((a.to_vec(), b.to_vec()))
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "mse: prediction has {} entries, target has {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}
