use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Exact form `x * Phi(x)`.
    Gelu,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Gelu => x * normal_cdf(x),
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    pub(crate) fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Gelu => {
                let pdf = (-(x * x) / T::of(2.0)).exp() / (T::TAU()).sqrt();
                normal_cdf(x) + x * pdf
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
        }
    }
}

fn normal_cdf<T: Scalar>(x: T) -> T {
    T::of(0.5) * (T::one() + (x / T::SQRT_2()).erf())
}

pub fn activation<T: Scalar>(kind: Activation, x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}
