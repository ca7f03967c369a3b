//! Allocation-free inner loops shared by the tape and the plain tensor API.

use crate::scalar::Scalar;

/// `out[m x n] = a[m x k] * b[k x n]`
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    out.iter_mut().for_each(|v| *v = T::zero());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m x n] += a[m x k] * b[n x k]^T`
pub(crate) fn matmul_bt_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(arow, brow);
        }
    }
}

/// `out[k x n] += a[m x k]^T * b[m x n]`
pub(crate) fn matmul_at_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m x n] += a[m x k] * b[k x n]`
pub(crate) fn matmul_acc<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    // split on sign so exp never overflows
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn mean_rows<T: Scalar>(rows: &[&[T]], d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d];
    for r in rows {
        for (o, &v) in out.iter_mut().zip(r.iter()) {
            *o += v;
        }
    }
    let inv = T::one() / T::from_usize_lossy(rows.len());
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Elementwise max across rows plus the index of the first row attaining it.
pub(crate) fn max_rows<T: Scalar>(rows: &[&[T]], d: usize) -> (Vec<T>, Vec<u32>) {
    let mut out = rows[0][..d].to_vec();
    let mut arg = vec![0u32; d];
    for (ri, r) in rows.iter().enumerate().skip(1) {
        for j in 0..d {
            if r[j] > out[j] {
                out[j] = r[j];
                arg[j] = ri as u32;
            }
        }
    }
    (out, arg)
}

/// Row-wise layer norm. Returns `(output, normalized, inverse_std)`.
pub(crate) fn layer_norm<T: Scalar>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    rows: usize,
    d: usize,
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut out = vec![T::zero(); rows * d];
    let mut xhat = vec![T::zero(); rows * d];
    let mut inv_std = vec![T::zero(); rows];
    let dn = T::from_usize_lossy(d);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<T>() / dn;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let istd = T::one() / (var + eps).sqrt();
        inv_std[r] = istd;
        for j in 0..d {
            let n = (xr[j] - mean) * istd;
            xhat[r * d + j] = n;
            out[r * d + j] = n * gain[j] + bias[j];
        }
    }
    (out, xhat, inv_std)
}
