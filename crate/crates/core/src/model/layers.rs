//! Building blocks of the acoustic model. Each layer owns [`ParamId`]s and
//! runs on a [`GradTape`] through a [`Bound`] parameter set.

use crate::error::Result;
use crate::model::config::BlockConfig;
use crate::model::params::{Bound, ParamBuilder, ParamId};
use crate::ops::{self, Activation, AttentionVars, ConvSpec, LAYER_NORM_EPS};
use crate::scalar::Scalar;
use crate::tape::{GradTape, Var};

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl Linear {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c_in: usize, c_out: usize) -> Self {
        pb.scope(name, |pb| Linear {
            weight: pb.uniform("weight", &[c_in, c_out], c_in),
            bias: pb.uniform("bias", &[c_out], c_in),
            c_in,
            c_out,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut GradTape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.linear(x, p[self.weight], Some(p[self.bias]))
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c_in: usize, c_out: usize, kernel: usize, spec: ConvSpec) -> Self {
        let fan_in = c_in / spec.groups * kernel;
        pb.scope(name, |pb| Conv {
            weight: pb.uniform("weight", &[c_out, c_in / spec.groups, kernel], fan_in),
            bias: pb.uniform("bias", &[c_out], fan_in),
            spec,
            c_in,
            c_out,
            kernel,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut GradTape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.conv1d(x, p[self.weight], Some(p[self.bias]), self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize) -> Self {
        pb.scope(name, |pb| LayerNorm {
            gamma: pb.constant("gamma", &[c], 1.0),
            beta: pb.constant("beta", &[c], 0.0),
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut GradTape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gamma], p[self.beta], T::of(LAYER_NORM_EPS))
    }
}

/// Depthwise convolution followed by a pointwise (k = 1) projection.
#[derive(Clone, Debug)]
pub struct DwSepConv {
    pub depthwise: Conv,
    pub pointwise: Conv,
}

impl DwSepConv {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c_in: usize, c_out: usize, kernel: usize, stride: usize) -> Self {
        pb.scope(name, |pb| {
            let dw_spec = ConvSpec {
                stride,
                padding: (kernel - 1) / 2,
                groups: c_in,
            };
            DwSepConv {
                depthwise: Conv::new(pb, "depthwise", c_in, c_in, kernel, dw_spec),
                pointwise: Conv::new(pb, "pointwise", c_in, c_out, 1, ConvSpec::same(1, 1)),
            }
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut GradTape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.depthwise.forward(tape, p, x)?;
        self.pointwise.forward(tape, p, h)
    }
}

#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize, heads: usize) -> Self {
        pb.scope(name, |pb| SelfAttention {
            q: Linear::new(pb, "q", c, c),
            k: Linear::new(pb, "k", c, c),
            v: Linear::new(pb, "v", c, c),
            out: Linear::new(pb, "out", c, c),
            heads,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut GradTape<T>, p: &Bound, x: Var) -> Result<Var> {
        let vars = AttentionVars {
            wq: p[self.q.weight],
            bq: Some(p[self.q.bias]),
            wk: p[self.k.weight],
            bk: Some(p[self.k.bias]),
            wv: p[self.v.weight],
            bv: Some(p[self.v.bias]),
            wo: p[self.out.weight],
            bo: Some(p[self.out.bias]),
        };
        ops::self_attention(tape, x, &vars, self.heads)
    }
}

/// `linear -> depthwise conv -> GeLU -> linear`.
#[derive(Clone, Debug)]
pub struct MixFfn {
    pub expand: Linear,
    pub depthwise: Conv,
    pub project: Linear,
}

impl MixFfn {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize, expansion: usize, kernel: usize) -> Self {
        let hidden = c * expansion;
        pb.scope(name, |pb| MixFfn {
            expand: Linear::new(pb, "expand", c, hidden),
            depthwise: Conv::new(pb, "depthwise", hidden, hidden, kernel, ConvSpec::same(kernel, hidden)),
            project: Linear::new(pb, "project", hidden, c),
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut GradTape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.expand.forward(tape, p, x)?;
        let h = self.depthwise.forward(tape, p, h)?;
        let h = tape.activation(Activation::Gelu, h);
        self.project.forward(tape, p, h)
    }
}

/// Feature merging, self-attention and Mix-FFN, each sub-layer with a
/// residual connection followed by layer normalization.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub merge: DwSepConv,
    pub attention: SelfAttention,
    pub norm1: LayerNorm,
    pub ffn: MixFfn,
    pub norm2: LayerNorm,
}

impl TransformerBlock {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c_in: usize, cfg: &BlockConfig) -> Self {
        let c = cfg.out_dim;
        pb.scope(name, |pb| TransformerBlock {
            merge: DwSepConv::new(pb, "merge", c_in, c, cfg.merge_kernel, cfg.merge_stride),
            attention: SelfAttention::new(pb, "attention", c, cfg.heads),
            norm1: LayerNorm::new(pb, "norm1", c),
            ffn: MixFfn::new(pb, "ffn", c, cfg.ffn_expansion, 3),
            norm2: LayerNorm::new(pb, "norm2", c),
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut GradTape<T>, p: &Bound, x: Var) -> Result<Var> {
        let u = self.merge.forward(tape, p, x)?;
        let att = self.attention.forward(tape, p, u)?;
        let a = tape.add(u, att)?;
        let a = self.norm1.forward(tape, p, a)?;
        let f = self.ffn.forward(tape, p, a)?;
        let out = tape.add(a, f)?;
        self.norm2.forward(tape, p, out)
    }
}

/// Two Conv-LN-ReLU blocks and a scalar projection.
#[derive(Clone, Debug)]
pub struct AcousticHead {
    pub conv1: Conv,
    pub norm1: LayerNorm,
    pub conv2: Conv,
    pub norm2: LayerNorm,
    pub out: Linear,
}

/// Outputs of one [`AcousticHead`]: the `(N, 1)` prediction and the hidden
/// state that feeds it.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    pub value: Var,
    pub hidden: Var,
}

impl AcousticHead {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize, hidden: usize, kernel: usize) -> Self {
        let spec = ConvSpec::same(kernel, 1);
        pb.scope(name, |pb| AcousticHead {
            conv1: Conv::new(pb, "conv1", c, hidden, kernel, spec),
            norm1: LayerNorm::new(pb, "norm1", hidden),
            conv2: Conv::new(pb, "conv2", hidden, hidden, kernel, spec),
            norm2: LayerNorm::new(pb, "norm2", hidden),
            out: Linear::new(pb, "out", hidden, 1),
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut GradTape<T>, p: &Bound, x: Var) -> Result<HeadOutput> {
        let h = self.conv1.forward(tape, p, x)?;
        let h = self.norm1.forward(tape, p, h)?;
        let h = tape.activation(Activation::Relu, h);
        let h = self.conv2.forward(tape, p, h)?;
        let h = self.norm2.forward(tape, p, h)?;
        let hidden = tape.activation(Activation::Relu, h);
        let value = self.out.forward(tape, p, hidden)?;
        Ok(HeadOutput { value, hidden })
    }
}

/// `linear -> Tanh -> LN`, then two `DWSepConv -> Tanh -> LN` layers.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub linear: Linear,
    pub norm0: LayerNorm,
    pub conv1: DwSepConv,
    pub norm1: LayerNorm,
    pub conv2: DwSepConv,
    pub norm2: LayerNorm,
}

impl DecoderBlock {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, d: usize, kernel: usize) -> Self {
        pb.scope(name, |pb| DecoderBlock {
            linear: Linear::new(pb, "linear", d, d),
            norm0: LayerNorm::new(pb, "norm0", d),
            conv1: DwSepConv::new(pb, "conv1", d, d, kernel, 1),
            norm1: LayerNorm::new(pb, "norm1", d),
            conv2: DwSepConv::new(pb, "conv2", d, d, kernel, 1),
            norm2: LayerNorm::new(pb, "norm2", d),
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut GradTape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.linear.forward(tape, p, x)?;
        let h = tape.activation(Activation::Tanh, h);
        let h = self.norm0.forward(tape, p, h)?;
        let h = self.conv1.forward(tape, p, h)?;
        let h = tape.activation(Activation::Tanh, h);
        let h = self.norm1.forward(tape, p, h)?;
        let h = self.conv2.forward(tape, p, h)?;
        let h = tape.activation(Activation::Tanh, h);
        self.norm2.forward(tape, p, h)
    }
}
