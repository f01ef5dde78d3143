use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `out[n, j] = sum_i x[n, i] * w[i, j] + b[j]`, with `w` stored `c_in x c_out`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (rows, c_in) = x.dims2()?;
    let (w_in, c_out) = weight.dims2()?;
    if w_in != c_in {
        return Err(Error::shape("linear", x.shape(), weight.shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape("linear bias", weight.shape(), b.shape()));
        }
    }
    let mut out = vec![T::zero(); rows * c_out];
    matmul_into(x.data(), weight.data(), &mut out, rows, c_in, c_out);
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(c_out) {
            row.iter_mut().zip(b.data()).for_each(|(o, &bv)| *o += bv);
        }
    }
    Tensor::new(&[rows, c_out], out)
}

/// `out += a (m x k) * b (k x n)`.
pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for (i, &av) in a[r * k..(r + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, &bv)| *o += av * bv);
        }
    }
}

/// `out += a (m x k) * b^T` where `b` is `n x k`.
pub(crate) fn matmul_nt_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let arow = &a[r * k..(r + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[r * n + j] += dot(arow, brow);
        }
    }
}

/// `out += a^T * b` where `a` is `k x m` and `b` is `k x n`.
pub(crate) fn matmul_tn_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], k: usize, m: usize, n: usize) {
    for r in 0..k {
        let brow = &b[r * n..(r + 1) * n];
        for (i, &av) in a[r * m..(r + 1) * m].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, &bv)| *o += av * bv);
        }
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Gradients of the linear layer: returns `(dx, dw, db)`.
pub(crate) fn linear_backward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, dy: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (rows, c_in) = (x.shape()[0], x.shape()[1]);
    let c_out = weight.shape()[1];
    let mut dx = vec![T::zero(); rows * c_in];
    matmul_nt_into(dy, weight.data(), &mut dx, rows, c_out, c_in);
    let mut dw = vec![T::zero(); c_in * c_out];
    matmul_tn_into(x.data(), dy, &mut dw, rows, c_in, c_out);
    let mut db = vec![T::zero(); c_out];
    for row in dy.chunks_exact(c_out) {
        db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
    }
    (dx, dw, db)
}
