//! 1-d convolutions over `(length, channels)` sequences.
//!
//! Weights follow the usual `(c_out, c_in / groups, kernel)` layout for
//! convolution and `(c_in, c_out, kernel)` for the transposed variant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Stride-1 convolution that keeps the length for odd kernels.
    pub fn same(kernel: usize, groups: usize) -> Self {
        ConvSpec {
            stride: 1,
            padding: (kernel - 1) / 2,
            groups,
        }
    }

    pub fn output_len(&self, len: usize, kernel: usize) -> Option<usize> {
        let padded = len + 2 * self.padding;
        if self.stride == 0 || padded < kernel {
            return None;
        }
        Some((padded - kernel) / self.stride + 1)
    }
}

struct ConvDims {
    len: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    cin_g: usize,
    cout_g: usize,
    out_len: usize,
}

fn conv_dims<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, spec: ConvSpec) -> Result<ConvDims> {
    let (len, c_in) = x.dims2()?;
    let [c_out, cin_g, kernel] = weight.shape()[..] else {
        return Err(Error::shape("conv1d weight", weight.shape(), &[0, 0, 0]));
    };
    if spec.groups == 0 || c_in % spec.groups != 0 || c_out % spec.groups != 0 {
        return Err(Error::Config(format!(
            "conv1d: groups {} must divide c_in {} and c_out {}",
            spec.groups, c_in, c_out
        )));
    }
    if cin_g != c_in / spec.groups || kernel == 0 {
        return Err(Error::shape("conv1d", x.shape(), weight.shape()));
    }
    let out_len = spec.output_len(len, kernel).ok_or(Error::SequenceTooShort {
        op: "conv1d",
        len,
        kernel,
        padding: spec.padding,
        stride: spec.stride,
    })?;
    Ok(ConvDims {
        len,
        c_in,
        c_out,
        kernel,
        cin_g,
        cout_g: c_out / spec.groups,
        out_len,
    })
}

/// Cross-correlation with zero padding. `groups == c_in` gives a depthwise
/// convolution.
pub fn conv1d_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, spec: ConvSpec) -> Result<Tensor<T>> {
    let d = conv_dims(x, weight, spec)?;
    if let Some(b) = bias {
        if b.shape() != [d.c_out] {
            return Err(Error::shape("conv1d bias", weight.shape(), b.shape()));
        }
    }
    let (xd, wd) = (x.data(), weight.data());
    let mut out = vec![T::zero(); d.out_len * d.c_out];
    for t in 0..d.out_len {
        let orow = &mut out[t * d.c_out..(t + 1) * d.c_out];
        for (co, o) in orow.iter_mut().enumerate() {
            let g = co / d.cout_g;
            let mut acc = bias.map_or(T::zero(), |b| b.data()[co]);
            for kk in 0..d.kernel {
                let Some(src) = (t * spec.stride + kk).checked_sub(spec.padding) else {
                    continue;
                };
                if src >= d.len {
                    continue;
                }
                let xrow = &xd[src * d.c_in + g * d.cin_g..src * d.c_in + (g + 1) * d.cin_g];
                let wbase = co * d.cin_g * d.kernel + kk;
                for (ci, &xv) in xrow.iter().enumerate() {
                    acc += xv * wd[wbase + ci * d.kernel];
                }
            }
            *o = acc;
        }
    }
    Tensor::new(&[d.out_len, d.c_out], out)
}

/// Returns `(dx, dw, db)` for [`conv1d_forward`].
pub(crate) fn conv1d_backward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, spec: ConvSpec, dy: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let d = conv_dims(x, weight, spec).expect("validated in forward");
    let (xd, wd) = (x.data(), weight.data());
    let mut dx = vec![T::zero(); xd.len()];
    let mut dw = vec![T::zero(); wd.len()];
    let mut db = vec![T::zero(); d.c_out];
    for t in 0..d.out_len {
        for co in 0..d.c_out {
            let g = dy[t * d.c_out + co];
            if g == T::zero() {
                continue;
            }
            db[co] += g;
            let grp = co / d.cout_g;
            for kk in 0..d.kernel {
                let Some(src) = (t * spec.stride + kk).checked_sub(spec.padding) else {
                    continue;
                };
                if src >= d.len {
                    continue;
                }
                let xoff = src * d.c_in + grp * d.cin_g;
                let wbase = co * d.cin_g * d.kernel + kk;
                for ci in 0..d.cin_g {
                    dx[xoff + ci] += g * wd[wbase + ci * d.kernel];
                    dw[wbase + ci * d.kernel] += g * xd[xoff + ci];
                }
            }
        }
    }
    (dx, dw, db)
}

/// Transposed convolution (groups = 1, no padding). Output length is
/// `(len - 1) * stride + kernel`.
pub fn conv1d_transposed_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (len, c_in) = x.dims2()?;
    if len == 0 {
        return Err(Error::EmptyInput("conv1d_transposed"));
    }
    if stride == 0 {
        return Err(Error::Config("conv1d_transposed: stride must be >= 1".into()));
    }
    let [w_in, c_out, kernel] = weight.shape()[..] else {
        return Err(Error::shape("conv1d_transposed weight", weight.shape(), &[0, 0, 0]));
    };
    if w_in != c_in {
        return Err(Error::shape("conv1d_transposed", x.shape(), weight.shape()));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape("conv1d_transposed bias", weight.shape(), b.shape()));
        }
    }
    let out_len = (len - 1) * stride + kernel;
    let (xd, wd) = (x.data(), weight.data());
    let mut out = vec![T::zero(); out_len * c_out];
    if let Some(b) = bias {
        for row in out.chunks_exact_mut(c_out) {
            row.copy_from_slice(b.data());
        }
    }
    for t in 0..len {
        for ci in 0..c_in {
            let xv = xd[t * c_in + ci];
            for kk in 0..kernel {
                let orow = &mut out[(t * stride + kk) * c_out..(t * stride + kk + 1) * c_out];
                for (co, o) in orow.iter_mut().enumerate() {
                    *o += xv * wd[(ci * c_out + co) * kernel + kk];
                }
            }
        }
    }
    Tensor::new(&[out_len, c_out], out)
}

pub(crate) fn conv1d_transposed_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (len, c_in) = (x.shape()[0], x.shape()[1]);
    let (c_out, kernel) = (weight.shape()[1], weight.shape()[2]);
    let (xd, wd) = (x.data(), weight.data());
    let mut dx = vec![T::zero(); xd.len()];
    let mut dw = vec![T::zero(); wd.len()];
    let mut db = vec![T::zero(); c_out];
    for row in dy.chunks_exact(c_out) {
        db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
    }
    for t in 0..len {
        for ci in 0..c_in {
            let xv = xd[t * c_in + ci];
            let mut acc = T::zero();
            for kk in 0..kernel {
                let grow = &dy[(t * stride + kk) * c_out..(t * stride + kk + 1) * c_out];
                for (co, &g) in grow.iter().enumerate() {
                    let wi = (ci * c_out + co) * kernel + kk;
                    acc += g * wd[wi];
                    dw[wi] += g * xv;
                }
            }
            dx[t * c_in + ci] = acc;
        }
    }
    (dx, dw, db)
}
