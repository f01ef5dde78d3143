//! Phoneme-to-frame length regulation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-phoneme repeat counts: `clamp(round(d * scale), 0, max)` with
/// rounding half away from zero. Non-finite durations count as zero.
pub fn regulated_repeats(durations: &[f64], scale: f64, max: usize) -> Vec<usize> {
    durations
        .iter()
        .map(|&d| {
            let r = (d * scale).round();
            if r.is_finite() && r > 0.0 {
                (r as usize).min(max)
            } else {
                0
            }
        })
        .collect()
}

/// Row indices that realize `repeats`: row `i` appears `repeats[i]` times.
pub fn repeat_index(repeats: &[usize]) -> Vec<usize> {
    repeats.iter().enumerate().flat_map(|(i, &r)| std::iter::repeat_n(i, r)).collect()
}

/// Repeats each row of `x` (N x c) by its regulated duration.
pub fn length_regulate<T: Scalar>(x: &Tensor<T>, durations: &[f64], scale: f64, max: usize) -> Result<Tensor<T>> {
    let (n, c) = x.dims2()?;
    if durations.len() != n {
        return Err(Error::shape("length_regulate", x.shape(), &[durations.len()]));
    }
    let idx = repeat_index(&regulated_repeats(durations, scale, max));
    if idx.is_empty() {
        return Err(Error::EmptyUtterance);
    }
    let mut out = Vec::with_capacity(idx.len() * c);
    for &i in &idx {
        out.extend_from_slice(x.row(i));
    }
    Tensor::new(&[idx.len(), c], out)
}
