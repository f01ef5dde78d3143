use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row statistics kept for the backward pass.
pub(crate) struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes each row over the channel axis, then applies `gamma`/`beta`.
pub fn layer_norm_forward<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    layer_norm_cached(x, gamma, beta, eps).map(|(y, _)| y)
}

pub(crate) fn layer_norm_cached<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, NormCache<T>)> {
    let (rows, c) = x.dims2()?;
    if c == 0 {
        return Err(Error::EmptyInput("layer_norm"));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape("layer_norm", x.shape(), gamma.shape()));
    }
    let n = T::of_usize(c);
    let mut xhat = vec![T::zero(); rows * c];
    let mut inv_std = vec![T::zero(); rows];
    let mut out = vec![T::zero(); rows * c];
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = (var + eps).sqrt().recip();
        inv_std[r] = is;
        for j in 0..c {
            let h = (row[j] - mean) * is;
            xhat[r * c + j] = h;
            out[r * c + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((Tensor::new(&[rows, c], out)?, NormCache { xhat, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_backward<T: Scalar>(cache: &NormCache<T>, gamma: &Tensor<T>, dy: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let c = gamma.numel();
    let rows = cache.inv_std.len();
    let n = T::of_usize(c);
    let mut dx = vec![T::zero(); rows * c];
    let mut dg = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for r in 0..rows {
        let g = &dy[r * c..(r + 1) * c];
        let h = &cache.xhat[r * c..(r + 1) * c];
        let mut mean_dh = T::zero();
        let mut mean_dh_h = T::zero();
        for j in 0..c {
            dg[j] += g[j] * h[j];
            dbeta[j] += g[j];
            let dh = g[j] * gamma.data()[j];
            mean_dh += dh;
            mean_dh_h += dh * h[j];
        }
        mean_dh /= n;
        mean_dh_h /= n;
        for j in 0..c {
            let dh = g[j] * gamma.data()[j];
            dx[r * c + j] = cache.inv_std[r] * (dh - mean_dh - h[j] * mean_dh_h);
        }
    }
    (dx, dg, dbeta)
}

/// Row-wise softmax, max-shifted.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, c) = x.dims2()?;
    let mut out = x.data().to_vec();
    for r in 0..rows {
        let row = &mut out[r * c..(r + 1) * c];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::new(&[rows, c], out)
}

/// Softmax gradient given its output `y`.
pub(crate) fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &[T]) -> Vec<T> {
    let c = y.shape()[1];
    let mut dx = vec![T::zero(); dy.len()];
    for ((yr, gr), dr) in y.data().chunks_exact(c).zip(dy.chunks_exact(c)).zip(dx.chunks_exact_mut(c)) {
        let s: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for j in 0..c {
            dr[j] = yr[j] * (gr[j] - s);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ln(x: &Tensor<f64>, eps: f64) -> Tensor<f64> {
        let c = x.shape()[1];
        layer_norm_forward(x, &Tensor::ones(&[c]), &Tensor::zeros(&[c]), eps).unwrap()
    }

    #[test]
    fn constant_row_normalizes_to_zero() {
        let y = ln(&Tensor::from_rows(&[[7.0, 7.0, 7.0]]), LAYER_NORM_EPS);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_row() {
        let y = ln(&Tensor::from_rows(&[[1.0, 3.0]]), 1e-12);
        assert!((y.data()[0] + 1.0).abs() < 1e-9);
        assert!((y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn shift_invariant() {
        let x = Tensor::from_rows(&[[0.3, -1.2, 2.5, 0.0]]);
        let shifted = x.map(|v| v + 10.0);
        assert!(ln(&x, LAYER_NORM_EPS).max_abs_diff(&ln(&shifted, LAYER_NORM_EPS)) < 1e-9);
    }

    #[test]
    fn softmax_examples() {
        let y = softmax_rows(&Tensor::<f64>::from_rows(&[[0.0, 0.0]])).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax_rows(&Tensor::<f64>::from_rows(&[[0.0, 3f64.ln()]])).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-12 && (y.data()[1] - 0.75).abs() < 1e-12);
        let a = softmax_rows(&Tensor::<f64>::from_rows(&[[0.1, -2.0, 4.0]])).unwrap();
        let b = softmax_rows(&Tensor::<f64>::from_rows(&[[100.1, 98.0, 104.0]])).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn softmax_handles_large_inputs() {
        let y = softmax_rows(&Tensor::<f32>::from_rows(&[[1000.0, 1000.0, -1000.0]])).unwrap();
        assert!(y.is_finite());
        assert!((y.data()[0] - 0.5).abs() < 1e-6);
    }
}
