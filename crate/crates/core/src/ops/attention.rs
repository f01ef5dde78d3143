use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor;

/// Tape handles of the four projections of a multi-head attention layer.
/// Weights are `c x c`; biases are optional.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Option<Var>,
    pub wk: Var,
    pub bk: Option<Var>,
    pub wv: Var,
    pub bv: Option<Var>,
    pub wo: Var,
    pub bo: Option<Var>,
}

/// Unmasked multi-head self-attention, no positional encoding.
pub fn self_attention<T: Scalar>(tape: &mut GradTape<T>, x: Var, p: &AttentionVars, heads: usize) -> Result<Var> {
    let c = tape.value(x).dims2()?.1;
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!("{heads} heads do not divide {c} channels")));
    }
    let dh = c / heads;
    let scale = T::of_usize(dh).sqrt().recip();
    let q = tape.linear(x, p.wq, p.bq)?;
    let k = tape.linear(x, p.wk, p.bk)?;
    let v = tape.linear(x, p.wv, p.bv)?;
    let mut ctx = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, lo, hi)?,
                tape.slice_cols(k, lo, hi)?,
                tape.slice_cols(v, lo, hi)?,
            )
        };
        let scores = tape.matmul_nt(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax(scores)?;
        ctx.push(tape.matmul(weights, vh)?);
    }
    let merged = if heads == 1 { ctx[0] } else { tape.concat_cols(&ctx)? };
    tape.linear(merged, p.wo, p.bo)
}

/// Evaluates [`self_attention`] without biases on plain tensors.
pub fn self_attention_forward<T: Scalar>(
    x: &Tensor<T>,
    wq: &Tensor<T>,
    wk: &Tensor<T>,
    wv: &Tensor<T>,
    wo: &Tensor<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let mut tape = GradTape::inference();
    let xv = tape.constant(x.clone());
    let p = AttentionVars {
        wq: tape.constant(wq.clone()),
        bq: None,
        wk: tape.constant(wk.clone()),
        bk: None,
        wv: tape.constant(wv.clone()),
        bv: None,
        wo: tape.constant(wo.clone()),
        bo: None,
    };
    let out = self_attention(&mut tape, xv, &p, heads)?;
    Ok(tape.take(out))
}
