// Eager numeric kernels shared by `Tensor` methods and the tape.

use super::{check_finite, Tensor};
use crate::error::{Error, Result};

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected a matrix, got shape {:?}", s))),
    }
}

/// `c += a · b` for row-major `a: m×k`, `b: k×n`.
fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// `c += a · bᵀ` for `a: m×k`, `b: n×k`.
fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c[i * n + j] += acc;
        }
    }
}

/// `c += aᵀ · b` for `a: m×k`, `b: m×n`; `c` is `k×n`.
fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2("matmul", a)?;
    let (k2, n) = dims2("matmul", b)?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("[{}x{}] · [{}x{}]", m, k, k2, n)));
    }
    let mut c = vec![0.0; m * n];
    gemm_nn(m, k, n, a.data(), b.data(), &mut c);
    check_finite("matmul", &c)?;
    Ok(Tensor::from_parts(vec![m, n], c))
}

/// `a · bᵀ`, the natural layout for `x · Wᵀ` with `W: out×in`.
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2("matmul_t", a)?;
    let (n, k2) = dims2("matmul_t", b)?;
    if k != k2 {
        return Err(Error::shape("matmul_t", format!("[{}x{}] · [{}x{}]ᵀ", m, k, n, k2)));
    }
    let mut c = vec![0.0; m * n];
    gemm_nt(m, k, n, a.data(), b.data(), &mut c);
    check_finite("matmul_t", &c)?;
    Ok(Tensor::from_parts(vec![m, n], c))
}

/// `aᵀ · b` without materializing the transpose.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2("matmul_tn", a)?;
    let (m2, n) = dims2("matmul_tn", b)?;
    if m != m2 {
        return Err(Error::shape("matmul_tn", format!("[{}x{}]ᵀ · [{}x{}]", m, k, m2, n)));
    }
    let mut c = vec![0.0; k * n];
    gemm_tn(m, k, n, a.data(), b.data(), &mut c);
    check_finite("matmul_tn", &c)?;
    Ok(Tensor::from_parts(vec![k, n], c))
}

pub(crate) fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = dims2("transpose", a)?;
    let src = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = src[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

/// Splits a shape around `axis` into (outer, len, inner) strides.
pub(crate) fn axis_split(op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(op, format!("axis {} out of range for rank {}", axis, shape.len())));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub(crate) fn sum_axis(t: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_split("sum", t.shape(), axis)?;
    let src = t.data();
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            for i in 0..inner {
                out[o * inner + i] += src[base + i];
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape.remove(axis);
    check_finite("sum", &out)?;
    Ok(Tensor::from_parts(shape, out))
}

/// Inverse of [`sum_axis`] for gradients: repeats `g` along `axis`.
pub(crate) fn broadcast_axis(g: &Tensor, shape: &[usize], axis: usize, scale: f64) -> Tensor {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let gd = g.data();
    let mut out = vec![0.0; outer * len * inner];
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            for i in 0..inner {
                out[base + i] = gd[o * inner + i] * scale;
            }
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

pub(crate) fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
